//! Train the spatial-branch adapter on single-frame pairs and watch the
//! frozen-base contract hold while the loss falls.
//!
//! Uses a reduced model and dataset so the run finishes in about a minute;
//! the full desk-scale setting lives in the acceptance suite.
//!
//! ```text
//! cargo run --release --example train_adapter [out_dir]
//! ```

use std::path::PathBuf;

use vidflow::backbone::ModelConfig;
use vidflow::data::TrainingPair;
use vidflow::flow::{train, write_loss_csv, TrainConfig};
use vidflow::model::{EditModel, FrozenSnapshot};
use vidflow::scene::{gen_pairs, Split, TaskKind};

fn main() -> vidflow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from("runs/example_train"));

    let cfg = ModelConfig {
        blocks: 2,
        dim: 64,
        heads: 2,
        patch: 4,
        task_vocab: 8,
        max_frames: 16,
    };
    let data: Vec<TrainingPair> = gen_pairs(TaskKind::ChannelPermute, 48, 7, 1, 32, Split::Train)?
        .into_iter()
        .map(|p| TrainingPair::new(p.source, p.target, p.task_id))
        .collect::<vidflow::Result<_>>()?;

    let mut model = EditModel::<f32>::new_adapted(cfg, 16, 42)?;
    let frozen = FrozenSnapshot::capture(&model);
    let tcfg = TrainConfig {
        epochs: 10,
        batch_size: 2,
        seed: 3,
        learning_rate: 1e-3, // demo-sized model converges visibly at this rate
        ..TrainConfig::default()
    };
    println!(
        "training {} delta tensors on {} pairs",
        model.trainable().len(),
        data.len()
    );
    let run = train(&mut model, &data, &tcfg, Some(&out))?;
    for e in 0..tcfg.epochs {
        let xs: Vec<f64> = run
            .rows
            .iter()
            .filter(|r| r.epoch == e)
            .map(|r| r.loss)
            .collect();
        println!(
            "epoch {e:>2}: mean loss {:.4}",
            xs.iter().sum::<f64>() / xs.len() as f64
        );
    }
    write_loss_csv(&out.join("loss.csv"), &run.rows)?;
    model.save(&out.join("model_final.vfck"))?;

    let changed = frozen.diff(&model)?;
    println!(
        "frozen parameters changed: {} (must be 0); artifacts in {}",
        changed.len(),
        out.display()
    );
    assert!(changed.is_empty());
    Ok(())
}
