// Scratch calibration harness: loss trajectory + eval PSNR for the
// desk-scale channel-permute task under various epoch/batch settings.
use std::time::Instant;
use vidflow::data::TrainingPair;
use vidflow::flow::{train, TrainConfig};
use vidflow::backbone::ModelConfig;
use vidflow::metrics::{evaluate, EvalPair};
use vidflow::model::EditModel;
use vidflow::sampler::SampleConfig;
use vidflow::scene::{gen_pairs, Split, TaskKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let n_pairs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(250);
    let n_eval: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let steps: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(50);

    let t0 = Instant::now();
    let data: Vec<TrainingPair> = gen_pairs(TaskKind::ChannelPermute, n_pairs, 7, 1, 32, Split::Train)
        .unwrap()
        .into_iter()
        .map(|p| TrainingPair::new(p.source, p.target, p.task_id).unwrap())
        .collect();
    println!("data: {} pairs in {:.1}s", data.len(), t0.elapsed().as_secs_f64());

    let mut model = EditModel::<f32>::new_adapted(ModelConfig::desk_scale(), 32, 42).unwrap();
    let cfg = TrainConfig { epochs, batch_size: batch, seed: 1, ..TrainConfig::default() };
    let t1 = Instant::now();
    let run = train(&mut model, &data, &cfg, None).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    println!("train: {} steps in {:.1}s ({:.2} s/epoch)", run.steps, dt, dt / epochs.max(1) as f64);
    // epoch means
    for e in 0..epochs {
        let xs: Vec<f64> = run.rows.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
        if !xs.is_empty() {
            println!("  epoch {:>3}: mean loss {:.5}", e, xs.iter().sum::<f64>() / xs.len() as f64);
        }
    }

    // eval on held-out 8-frame clips
    let eval_pairs: Vec<EvalPair> = gen_pairs(TaskKind::ChannelPermute, n_eval, 7, 8, 32, Split::Eval)
        .unwrap()
        .into_iter()
        .map(|p| EvalPair { id: p.id, task_id: p.task_id, source: p.source, target: p.target })
        .collect();
    let scfg = SampleConfig { steps, alpha: 1.0, seed: 99, cfg_scale: 1.0 };
    let t2 = Instant::now();
    let report = evaluate(&model, &eval_pairs, &scfg, 2).unwrap();
    println!("eval: {:.1}s", t2.elapsed().as_secs_f64());
    for r in &report.rows {
        println!("  trained: task {} psnr_mean {:.2} dB psnr_min {:.2} me_ratio {:?} fff {:?}",
                 r.task_id, r.psnr_mean, r.psnr_min, r.motion_energy_ratio, r.frozen_frame_fraction);
    }

    let init_model = EditModel::<f32>::new_adapted(ModelConfig::desk_scale(), 32, 42).unwrap();
    let report0 = evaluate(&init_model, &eval_pairs, &scfg, 2).unwrap();
    for r in &report0.rows {
        println!("  init:    task {} psnr_mean {:.2} dB psnr_min {:.2}", r.task_id, r.psnr_mean, r.psnr_min);
    }

    // single-frame eval: isolates the f=1 -> f=8 shift
    let eval1: Vec<EvalPair> = gen_pairs(TaskKind::ChannelPermute, n_eval, 7, 1, 32, Split::Eval)
        .unwrap()
        .into_iter()
        .map(|p| EvalPair { id: p.id, task_id: p.task_id, source: p.source, target: p.target })
        .collect();
    let r1 = evaluate(&model, &eval1, &scfg, 2).unwrap();
    println!("  trained f=1 eval: psnr_mean {:.2} dB", r1.rows[0].psnr_mean);

    // per-t loss probe on fresh training-like samples
    use vidflow::backbone::{patch_split, Binder};
    use vidflow::graph::Graph;
    use vidflow::rng::Rng;
    use vidflow::tensor::Tensor;
    let probe = gen_pairs(TaskKind::ChannelPermute, 16, 999, 1, 32, Split::Train).unwrap();
    for &t in &[0.02f64, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98] {
        let mut acc = 0.0;
        for (i, p) in probe.iter().enumerate() {
            let (c_tok, geom) = patch_split::<f32>(&p.source, 4).unwrap();
            let (z0, _) = patch_split::<f32>(&p.target, 4).unwrap();
            let n = geom.n(); let pd = 48;
            let mut rng = Rng::derive(&[5000, i as u64]);
            let eps = Tensor::<f32>::randn(&[n, pd], 1.0, &mut rng);
            let zt: Vec<f32> = z0.data().iter().zip(eps.data()).map(|(&z, &e)| (t as f32) * e + (1.0 - t as f32) * z).collect();
            let vt: Vec<f32> = z0.data().iter().zip(eps.data()).map(|(&z, &e)| e - z).collect();
            let g = Graph::new();
            let mut binder = Binder::default();
            let zv = g.constant(Tensor::from_vec(vec![1, n, pd], zt).unwrap());
            let cv = g.constant(c_tok.reshaped(vec![1, n, pd]).unwrap());
            let fwd = model.velocity_graph(&g, &mut binder, zv, cv, geom, &[(t, 0)]).unwrap();
            let pred = g.value(fwd.velocity);
            let vt = Tensor::<f32>::from_vec(vec![1, n, pd], vt).unwrap();
            acc += pred.mse(&vt).unwrap();
        }
        println!("  loss at t={t:.2}: {:.4}", acc / probe.len() as f64);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
