//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `--nocapture`). Heavy artifacts (the trained channel-permute
//! adapter and its evaluation) are shared across criteria through OnceLock,
//! so the expensive training runs execute once regardless of test order.
//!
//! Every tolerance and threshold is pinned here as a constant.

use std::sync::OnceLock;
use std::time::Instant;

use vidflow::adapter::{adapted_velocity_graph, spatial_positions, Adapter};
use vidflow::backbone::{Backbone, Binder, Geometry, ModelConfig};
use vidflow::data::TrainingPair;
use vidflow::flow::{noisy_interpolate, train, LossRow, TrainConfig};
use vidflow::gradcheck::finite_diff_check;
use vidflow::graph::Graph;
use vidflow::metrics::{evaluate, EvalPair, Report};
use vidflow::model::{EditModel, FrozenSnapshot};
use vidflow::rng::Rng;
use vidflow::sampler::{edit_video, edit_video_traced, sdedit_init, SampleConfig};
use vidflow::scene::{gen_pairs, Split, TaskKind};
use vidflow::tensor::Tensor;
use vidflow::video::Video;

// ---------------------------------------------------------------------------
// Pinned acceptance settings
// ---------------------------------------------------------------------------

/// Paired samples per task (paper count).
const N_PAIRS: usize = 250;
/// Low-rank adapter rank (paper).
const RANK: usize = 32;
/// Learning rate (paper) and weight decay (paper), constant schedule.
const LR: f64 = 1e-4;
const WEIGHT_DECAY: f64 = 0.01;
/// Calibrated once and pinned: batch size 1 maximizes optimizer steps per
/// epoch at the pinned learning rate; 30 epochs of 250 pairs converge the
/// channel-permute adapter on the desk-scale model.
const EPOCHS: usize = 30;
const BATCH: usize = 1;
/// Held-out evaluation clips: 20 videos of 8 frames.
const N_EVAL: usize = 20;
const EVAL_FRAMES: usize = 8;
/// Dataset / model / sampler seeds for the acceptance runs.
const DATA_SEED: u64 = 7;
const MODEL_SEED: u64 = 42;
const SAMPLE_SEED: u64 = 1009;
/// Oracle-PSNR gate for the trained channel-permute adapter (initial target).
const PSNR_THRESHOLD_DB: f64 = 22.0;
/// Required margin over the init-state adapter.
const PSNR_GAP_DB: f64 = 10.0;
/// Multi-task adapters may lose at most this much per-task PSNR.
const MULTI_TASK_TOLERANCE_DB: f64 = 2.0;

fn desk_cfg() -> ModelConfig {
    ModelConfig::desk_scale()
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: LR,
        weight_decay: WEIGHT_DECAY,
        rank: RANK,
        epochs: EPOCHS,
        batch_size: BATCH,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn sample_cfg() -> SampleConfig {
    SampleConfig {
        steps: 50,
        alpha: 1.0,
        seed: SAMPLE_SEED,
        cfg_scale: 1.0,
    }
}

fn training_pairs(task: TaskKind) -> Vec<TrainingPair> {
    gen_pairs(task, N_PAIRS, DATA_SEED, 1, 32, Split::Train)
        .unwrap()
        .into_iter()
        .map(|p| TrainingPair::new(p.source, p.target, p.task_id).unwrap())
        .collect()
}

fn eval_pairs(task: TaskKind) -> Vec<EvalPair> {
    gen_pairs(task, N_EVAL, DATA_SEED, EVAL_FRAMES, 32, Split::Eval)
        .unwrap()
        .into_iter()
        .map(|p| EvalPair {
            id: p.id,
            task_id: p.task_id,
            source: p.source,
            target: p.target,
        })
        .collect()
}

/// Edit every eval source with per-video derived seeds (deterministic).
fn edit_outputs(model: &EditModel<f32>, pairs: &[EvalPair]) -> Vec<Video> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut cfg = sample_cfg();
            cfg.seed = Rng::derive(&[SAMPLE_SEED, i as u64]).next_u64();
            edit_video(model, &p.source, p.task_id, &cfg).unwrap()
        })
        .collect()
}

struct ChannelPermuteRun {
    model: EditModel<f32>,
    loss_rows: Vec<LossRow>,
    report: Report,
    init_report: Report,
    outputs: Vec<Video>,
}

static CHANNEL_PERMUTE: OnceLock<ChannelPermuteRun> = OnceLock::new();

fn channel_permute_run() -> &'static ChannelPermuteRun {
    CHANNEL_PERMUTE.get_or_init(|| {
        let data = training_pairs(TaskKind::ChannelPermute);
        let mut model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
        let run = train(&mut model, &data, &train_cfg(), None).unwrap();
        let pairs = eval_pairs(TaskKind::ChannelPermute);
        let report = evaluate(&model, &pairs, &sample_cfg(), 1).unwrap();
        let init_model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
        let init_report = evaluate(&init_model, &pairs, &sample_cfg(), 1).unwrap();
        let outputs = edit_outputs(&model, &pairs);
        ChannelPermuteRun {
            model,
            loss_rows: run.rows,
            report,
            init_report,
            outputs,
        }
    })
}

fn verdict(criterion: &str, pass: bool, detail: &str, t0: Instant) -> bool {
    println!(
        "[acceptance] {criterion}: {} — {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------------------
// Criterion 1: init identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_init_identity() {
    let t0 = Instant::now();
    let backbone = Backbone::<f32>::init(desk_cfg(), &mut Rng::seed(MODEL_SEED)).unwrap();
    let adapter = Adapter::init(&backbone, RANK, &mut Rng::seed(MODEL_SEED + 1)).unwrap();
    let geom = Geometry { f: 2, gh: 8, gw: 8 };
    let pd = backbone.cfg.patch_dim();
    let mut rng = Rng::seed(3);
    let mut worst = 0.0f64;
    for _ in 0..16 {
        let z = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
        let c = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
        let t = rng.uniform();
        let g = Graph::new();
        let mut binder = Binder::default();
        let fwd = adapted_velocity_graph(
            &g,
            &mut binder,
            &backbone,
            &adapter,
            g.constant(z.clone()),
            g.constant(c),
            geom,
            &[(t, 0)],
        )
        .unwrap();
        let adapted = g.value(fwd.velocity);
        let base = backbone.velocity_tokens(&z, geom, t, 0).unwrap();
        for (a, b) in adapted.data().iter().zip(base.data()) {
            let rel = (a - b).abs() as f64 / (1.0 + b.abs() as f64);
            worst = worst.max(rel);
        }
    }
    let pass = verdict(
        "criterion 1 (init identity)",
        worst <= 1e-6,
        &format!("max |adapted-base|/(1+|base|) = {worst:.2e} over 16 triples"),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 2: structural invariants, bit-level
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_structural_invariants() {
    let t0 = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    // positional indices of the concatenated spatial sequence
    let pos = spatial_positions(8, 8);
    let mut w: Vec<usize> = pos.iter().map(|p| p.w).collect();
    w.sort_unstable();
    w.dedup();
    if w != (0..16).collect::<Vec<_>>() || pos.iter().any(|p| p.t != 0) {
        failures.push("spatial position scheme".into());
    }

    let backbone = Backbone::<f32>::init(desk_cfg(), &mut Rng::seed(MODEL_SEED)).unwrap();
    let mut adapter = Adapter::init(&backbone, RANK, &mut Rng::seed(MODEL_SEED + 1)).unwrap();
    let mut rng = Rng::seed(5);
    for p in adapter.params_mut() {
        p.value = Tensor::randn(p.value.shape(), 0.02, &mut rng);
    }

    // per-frame isolation of the spatial branches
    {
        let (gh, gw) = (8, 8);
        let hw = gh * gw;
        let d = backbone.cfg.dim;
        let z = Tensor::randn(&[3, hw, d], 1.0, &mut rng);
        let c = Tensor::randn(&[3, hw, d], 1.0, &mut rng);
        let (z1, _) = vidflow::adapter::spatial_branch_forward(
            &backbone,
            &adapter,
            0,
            vidflow::adapter::BranchSign::Pos,
            &z,
            &c,
            gh,
            gw,
        )
        .unwrap();
        let mut zd = z.data().to_vec();
        for v in &mut zd[hw * d..2 * hw * d] {
            *v += 0.25;
        }
        let z2t = Tensor::from_vec(vec![3, hw, d], zd).unwrap();
        let (z2, _) = vidflow::adapter::spatial_branch_forward(
            &backbone,
            &adapter,
            0,
            vidflow::adapter::BranchSign::Pos,
            &z2t,
            &c,
            gh,
            gw,
        )
        .unwrap();
        let isolated = [0usize, 2].iter().all(|&f| {
            z1.data()[f * hw * d..(f + 1) * hw * d]
                .iter()
                .zip(&z2.data()[f * hw * d..(f + 1) * hw * d])
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !isolated {
            failures.push("per-frame isolation".into());
        }
    }

    // condition-path exclusivity under branch ablation
    {
        let mut ablated = Adapter::init(&backbone, RANK, &mut Rng::seed(77)).unwrap();
        for p in ablated.params_mut() {
            if p.name.contains("spa_") && p.name.ends_with(".up") {
                p.value = Tensor::zeros(p.value.shape());
            } else {
                p.value = Tensor::randn(p.value.shape(), 0.02, &mut rng);
            }
        }
        let geom = Geometry { f: 2, gh: 8, gw: 8 };
        let pd = backbone.cfg.patch_dim();
        let z = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
        let c1 = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
        let c2 = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
        let run = |c: Tensor<f32>| {
            let g = Graph::new();
            let mut binder = Binder::default();
            let fwd = adapted_velocity_graph(
                &g,
                &mut binder,
                &backbone,
                &ablated,
                g.constant(z.clone()),
                g.constant(c),
                geom,
                &[(0.5, 0)],
            )
            .unwrap();
            g.value(fwd.velocity)
        };
        if !run(c1).bit_eq(&run(c2)) {
            failures.push("condition-path exclusivity".into());
        }
    }

    // c-stream timestep embedding at every integration step
    {
        let model = EditModel::Adapted {
            backbone: Backbone::<f32>::init(desk_cfg(), &mut Rng::seed(MODEL_SEED)).unwrap(),
            adapter: Adapter::init(&backbone, RANK, &mut Rng::seed(78)).unwrap(),
        };
        let source = {
            let mut v = Video::new(2, 32, 32, 3);
            for x in &mut v.data {
                *x = rng.uniform() as f32;
            }
            v
        };
        let cfg = SampleConfig {
            steps: 10,
            alpha: 1.0,
            seed: 4,
            cfg_scale: 1.0,
        };
        let (_, trace) = edit_video_traced(&model, &source, 0, &cfg).unwrap();
        let e0 = model.backbone().timestep_embed(0.0).unwrap();
        let ok = trace.c_mod_inputs.len() == 10
            && trace.c_mod_inputs.iter().all(|m| {
                m.data()
                    .iter()
                    .zip(e0.vector.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            });
        if !ok {
            failures.push("c-stream timestep embedding".into());
        }
    }

    // frozen-base bit equality after 100 training steps
    {
        let data = training_pairs(TaskKind::ChannelPermute);
        let mut model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
        let snapshot = FrozenSnapshot::capture(&model);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            seed: 13,
            learning_rate: LR,
            weight_decay: WEIGHT_DECAY,
            rank: RANK,
            ..TrainConfig::default()
        };
        // one epoch of 100 pairs at batch 1 = 100 optimizer steps
        let run = train(&mut model, &data[..100], &cfg, None).unwrap();
        assert_eq!(run.steps, 100);
        let changed = snapshot.diff(&model).unwrap();
        if !changed.is_empty() {
            failures.push(format!("frozen base ({changed:?})"));
        }
    }

    let pass = verdict(
        "criterion 2 (structural invariants)",
        failures.is_empty(),
        &if failures.is_empty() {
            "all bit-level checks held".to_string()
        } else {
            format!("failed: {failures:?}")
        },
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient correctness at f64
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_gradient_correctness() {
    let t0 = Instant::now();
    let cfg = ModelConfig::micro(2, 16);
    let backbone = Backbone::<f64>::init(cfg, &mut Rng::seed(31)).unwrap();
    let geom = Geometry { f: 1, gh: 2, gw: 2 };
    let pd = backbone.cfg.patch_dim();
    let mut rng = Rng::seed(32);
    let z0 = Tensor::randn(&[1, geom.n(), pd], 0.6, &mut rng);
    let eps = Tensor::randn(&[1, geom.n(), pd], 1.0, &mut rng);
    let c = Tensor::randn(&[1, geom.n(), pd], 0.6, &mut rng);
    let state = noisy_interpolate(&z0, &eps, 0.65).unwrap();

    let proto = Adapter::init(&backbone, 4, &mut Rng::seed(33)).unwrap();
    let names: Vec<String> = proto.params().iter().map(|p| p.name.clone()).collect();
    let init: Vec<Tensor<f64>> = proto.params().iter().map(|p| p.value.clone()).collect();
    let mut eval = |params: &[Tensor<f64>]| {
        let mut a = Adapter::init(&backbone, 4, &mut Rng::seed(33)).unwrap();
        for (p, v) in a.params_mut().into_iter().zip(params) {
            p.value = v.clone();
        }
        let g = Graph::new();
        let mut binder = Binder::default();
        let fwd = adapted_velocity_graph(
            &g,
            &mut binder,
            &backbone,
            &a,
            g.constant(state.zt.clone()),
            g.constant(c.clone()),
            geom,
            &[(state.t, 1)],
        )?;
        let diff = g.sub(fwd.velocity, g.constant(state.vt.clone()))?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean_all(sq)?;
        let grads = g.backward(loss)?;
        let by_name: std::collections::BTreeMap<&str, Tensor<f64>> = binder
            .pairs
            .iter()
            .filter_map(|(n, v)| grads.get(*v).map(|t| (n.as_str(), t.clone())))
            .collect();
        let out = names
            .iter()
            .zip(params)
            .map(|(n, p)| {
                by_name
                    .get(n.as_str())
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect();
        Ok((g.value(loss).item(), out))
    };
    let err = finite_diff_check(&mut eval, &init, 64, 1e-4, &mut Rng::seed(34)).unwrap();
    let pass = verdict(
        "criterion 3 (gradient correctness)",
        err <= 1e-4,
        &format!("max rel err {err:.2e} over 64 probes at f64"),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 4: video-free editing
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_video_free_editing() {
    let t0 = Instant::now();
    let run = channel_permute_run();
    let trained = &run.report.rows[0];
    let init = &run.init_report.rows[0];
    let gap = trained.psnr_mean - init.psnr_mean;

    // the loss curve must descend: final-epoch mean below first-epoch mean
    let epoch_mean = |e: usize| {
        let xs: Vec<f64> = run
            .loss_rows
            .iter()
            .filter(|r| r.epoch == e)
            .map(|r| r.loss)
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let descended = epoch_mean(EPOCHS - 1) < epoch_mean(0);
    assert!(descended, "training loss did not descend across epochs");

    let pass = trained.psnr_mean >= PSNR_THRESHOLD_DB && gap >= PSNR_GAP_DB;
    let pass = verdict(
        "criterion 4 (video-free editing)",
        pass,
        &format!(
            "trained {:.2} dB (>= {PSNR_THRESHOLD_DB}), init {:.2} dB, gap {:.2} dB (>= {PSNR_GAP_DB})",
            trained.psnr_mean, init.psnr_mean, gap
        ),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 5: frozen-frame ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_frozen_frame_ablation() {
    let t0 = Instant::now();
    let run = channel_permute_run();
    let data = training_pairs(TaskKind::ChannelPermute);
    let mut baseline = EditModel::<f32>::new_direct_tuned(desk_cfg(), MODEL_SEED).unwrap();
    train(&mut baseline, &data, &train_cfg(), None).unwrap();
    let pairs = eval_pairs(TaskKind::ChannelPermute);
    let base_report = evaluate(&baseline, &pairs, &sample_cfg(), 1).unwrap();

    let ours = &run.report.rows[0];
    let base = &base_report.rows[0];
    let (our_me, base_me) = (
        ours.motion_energy_ratio.unwrap(),
        base.motion_energy_ratio.unwrap(),
    );
    let (our_fff, base_fff) = (
        ours.frozen_frame_fraction.unwrap(),
        base.frozen_frame_fraction.unwrap(),
    );
    let pass = base_me < our_me && our_fff <= base_fff;
    let pass = verdict(
        "criterion 5 (frozen-frame ablation)",
        pass,
        &format!(
            "motion-energy ratio: direct {base_me:.3} < ours {our_me:.3}; frozen fraction: ours {our_fff:.3} <= direct {base_fff:.3} (direct psnr {:.2} dB)",
            base.psnr_mean
        ),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 6: multi-task adapter
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_multi_task() {
    let t0 = Instant::now();
    let run = channel_permute_run();
    let cp_single = run.report.rows[0].psnr_mean;

    // single-task shape-remove adapter, identical budget
    let sr_data = training_pairs(TaskKind::ShapeRemove);
    let mut sr_model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
    train(&mut sr_model, &sr_data, &train_cfg(), None).unwrap();
    let sr_pairs = eval_pairs(TaskKind::ShapeRemove);
    let sr_single = evaluate(&sr_model, &sr_pairs, &sample_cfg(), 1).unwrap().rows[0].psnr_mean;

    // one adapter trained jointly on both tasks
    let mut joint_data = training_pairs(TaskKind::ChannelPermute);
    joint_data.extend(training_pairs(TaskKind::ShapeRemove));
    let mut multi = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
    train(&mut multi, &joint_data, &train_cfg(), None).unwrap();
    let cp_pairs = eval_pairs(TaskKind::ChannelPermute);
    let cp_multi = evaluate(&multi, &cp_pairs, &sample_cfg(), 1).unwrap().rows[0].psnr_mean;
    let sr_multi = evaluate(&multi, &sr_pairs, &sample_cfg(), 1).unwrap().rows[0].psnr_mean;

    let pass = cp_multi >= cp_single - MULTI_TASK_TOLERANCE_DB
        && sr_multi >= sr_single - MULTI_TASK_TOLERANCE_DB;
    let pass = verdict(
        "criterion 6 (multi-task adapter)",
        pass,
        &format!(
            "channel-permute: multi {cp_multi:.2} vs single {cp_single:.2} dB; shape-remove: multi {sr_multi:.2} vs single {sr_single:.2} dB (tolerance {MULTI_TASK_TOLERANCE_DB} dB)"
        ),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 7: partial-noising prior endpoints
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_sdedit_endpoints() {
    let t0 = Instant::now();
    let model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
    let mut rng = Rng::seed(71);
    let mut source = Video::new(4, 32, 32, 3);
    for v in &mut source.data {
        *v = rng.uniform() as f32;
    }

    // alpha = 0: source returned bit-exactly, zero steps executed
    let cfg0 = SampleConfig {
        alpha: 0.0,
        steps: 50,
        seed: 3,
        cfg_scale: 1.0,
    };
    let (out0, trace0) = edit_video_traced(&model, &source, 0, &cfg0).unwrap();
    let alpha0_ok = out0.bit_eq(&source) && trace0.times.is_empty();

    // alpha = 1 with different noise seeds: outputs differ (nonzero MSE) and
    // the prior itself ignores the condition entirely
    let mk = |seed| SampleConfig {
        alpha: 1.0,
        steps: 10,
        seed,
        cfg_scale: 1.0,
    };
    let o1 = edit_video(&model, &source, 0, &mk(100)).unwrap();
    let o2 = edit_video(&model, &source, 0, &mk(101)).unwrap();
    let reseed_mse = vidflow::metrics::mse(&o1, &o2).unwrap();
    let prior1 = sdedit_init(&Tensor::<f32>::full(&[64], 0.9), 1.0, &mut Rng::seed(5)).unwrap();
    let prior2 = sdedit_init(&Tensor::<f32>::full(&[64], -0.4), 1.0, &mut Rng::seed(5)).unwrap();
    let alpha1_ok = reseed_mse > 0.0 && prior1.bit_eq(&prior2);

    let pass = verdict(
        "criterion 7 (prior endpoints)",
        alpha0_ok && alpha1_ok,
        &format!("alpha=0 exact: {alpha0_ok}; alpha=1 reseed mse {reseed_mse:.4} > 0, condition-independent prior: {alpha1_ok}"),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism of the full run
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism() {
    let t0 = Instant::now();
    let run = channel_permute_run();

    // repeat criterion 4's full training with the same seed
    let data = training_pairs(TaskKind::ChannelPermute);
    let mut model = EditModel::<f32>::new_adapted(desk_cfg(), RANK, MODEL_SEED).unwrap();
    let rerun = train(&mut model, &data, &train_cfg(), None).unwrap();

    let losses_ok = run.loss_rows.len() == rerun.rows.len()
        && run
            .loss_rows
            .iter()
            .zip(&rerun.rows)
            .all(|(a, b)| a.step == b.step && a.loss.to_bits() == b.loss.to_bits());

    // regenerate the edited output videos with the same per-video seeds
    let pairs = eval_pairs(TaskKind::ChannelPermute);
    let outputs = edit_outputs(&model, &pairs);
    let videos_ok = outputs.len() == run.outputs.len()
        && outputs.iter().zip(&run.outputs).all(|(a, b)| a.bit_eq(b));

    let pass = verdict(
        "criterion 8 (determinism)",
        losses_ok && videos_ok,
        &format!(
            "loss curve bit-identical: {losses_ok} ({} rows); output videos bit-identical: {videos_ok} ({} videos)",
            rerun.rows.len(),
            outputs.len()
        ),
        t0,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Supporting check: ODE convergence trend on the trained model
// ---------------------------------------------------------------------------

#[test]
fn sampler_step_refinement_converges_on_the_trained_model() {
    let run = channel_permute_run();
    let pairs = eval_pairs(TaskKind::ChannelPermute);
    let source = &pairs[0].source;
    let out = |steps: usize| {
        let cfg = SampleConfig {
            steps,
            alpha: 1.0,
            seed: 123,
            cfg_scale: 1.0,
        };
        edit_video(&run.model, source, pairs[0].task_id, &cfg).unwrap()
    };
    let (a, b, c, d) = (out(10), out(25), out(50), out(100));
    let d1 = vidflow::metrics::mse(&a, &b).unwrap().sqrt();
    let d2 = vidflow::metrics::mse(&b, &c).unwrap().sqrt();
    let d3 = vidflow::metrics::mse(&c, &d).unwrap().sqrt();
    println!("[acceptance] step-refinement distances: {d1:.5} -> {d2:.5} -> {d3:.5}");
    // monotone decrease within a 10% noise tolerance
    assert!(d2 <= d1 * 1.10, "refinement not shrinking: {d1} -> {d2}");
    assert!(d3 <= d2 * 1.10, "refinement not shrinking: {d2} -> {d3}");
}
