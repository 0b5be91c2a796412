//! Flow-matching training on single-frame image pairs.
//!
//! Noising follows the linear schedule `Z_t = t*eps + (1-t)*Z_0` with
//! velocity target `v_t = eps - Z_0`; the objective is the mean squared
//! error of the predicted velocity on the noisy stream. Only the adapter's
//! low-rank deltas (or the baseline's unfrozen weights) receive updates.
//!
//! Every stochastic choice derives from `(seed, epoch, step)`, so a run can
//! resume from any epoch checkpoint and reproduce the uninterrupted loss
//! curve bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{save_adapter_deltas, DEFAULT_RANK};
use crate::backbone::{patch_split, Binder, Geometry};
use crate::checkpoint::{read_vfck, write_vfck, CkptEntry, EntryKind};
use crate::data::TrainingPair;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::EditModel;
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

// rng substream labels
const LBL_SHUFFLE: u64 = 0x7368_7566;
const LBL_NOISE: u64 = 0x6e6f_6973;

/// One realization of the noising schedule.
#[derive(Clone)]
pub struct FlowState<E> {
    /// Clean target tokens.
    pub z0: Tensor<E>,
    /// Standard-normal noise, same shape.
    pub eps: Tensor<E>,
    pub t: f64,
    /// Interpolant `t*eps + (1-t)*z0`.
    pub zt: Tensor<E>,
    /// Velocity target `eps - z0`.
    pub vt: Tensor<E>,
}

/// Build the interpolant and velocity target. Exact at both endpoints:
/// t = 0 gives `zt == z0`, t = 1 gives `zt == eps`.
pub fn noisy_interpolate<E: Element>(
    z0: &Tensor<E>,
    eps: &Tensor<E>,
    t: f64,
) -> Result<FlowState<E>> {
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "noisy_interpolate",
            lhs: z0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(
            "noisy_interpolate",
            format!("t = {t} outside [0, 1]"),
        ));
    }
    let te = E::from_f64(t);
    let one_m_t = E::from_f64(1.0 - t);
    let zt = eps.zip(z0, "noisy_interpolate", |e, z| te * e + one_m_t * z)?;
    let vt = eps.sub(z0)?;
    Ok(FlowState {
        z0: z0.clone(),
        eps: eps.clone(),
        t,
        zt,
        vt,
    })
}

/// Mean squared error between predicted and target velocity.
pub fn fm_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<f64> {
    pred.mse(target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
}

/// Training hyperparameters. Defaults: AdamW at 1e-4 with weight decay 0.01,
/// constant schedule, rank 32.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub rank: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            schedule: Schedule::Constant,
            rank: DEFAULT_RANK,
            epochs: 20,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Loss-curve row: one per (step, task id present in the batch).
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub task_id: usize,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainRun {
    pub rows: Vec<LossRow>,
    pub steps: usize,
}

pub struct StepOutcome {
    /// Batch-mean loss.
    pub loss: f64,
    /// Mean loss per task id present in the batch, ascending by id.
    pub per_task: Vec<(usize, f64)>,
}

fn batch_tokens<E: Element>(
    videos: &[&crate::video::Video],
    patch: usize,
) -> Result<(Tensor<E>, Geometry)> {
    let (first, geom) = patch_split::<E>(videos[0], patch)?;
    let n = geom.n();
    let pd = first.shape()[1];
    let mut data = Vec::with_capacity(videos.len() * n * pd);
    data.extend_from_slice(first.data());
    for v in &videos[1..] {
        let (tokens, g2) = patch_split::<E>(v, patch)?;
        if g2 != geom {
            return Err(Error::invalid(
                "train_step",
                format!("mixed geometries in batch: {geom:?} vs {g2:?}"),
            ));
        }
        data.extend_from_slice(tokens.data());
    }
    Ok((Tensor::from_vec(vec![videos.len(), n, pd], data)?, geom))
}

/// One optimizer step over a batch of pairs.
///
/// Per sample: source -> condition tokens, target -> clean tokens, t uniform
/// on [0, 1], fresh noise, dual-path forward at `(z_temb = t, c_temb = 0)`,
/// mean-squared velocity loss on the noisy stream, backprop, AdamW over the
/// trainable set only.
pub fn train_step<E: Element>(
    batch: &[&TrainingPair],
    model: &mut EditModel<E>,
    opt: &mut AdamW<E>,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::invalid("train_step", "empty batch"));
    }
    let patch = model.cfg().patch;

    let sources: Vec<&crate::video::Video> = batch.iter().map(|p| &p.source).collect();
    let targets: Vec<&crate::video::Video> = batch.iter().map(|p| &p.target).collect();
    let (c_tokens, geom) = batch_tokens::<E>(&sources, patch)?;
    let (z0_tokens, _) = batch_tokens::<E>(&targets, patch)?;

    let b = batch.len();
    let n = geom.n();
    let pd = c_tokens.shape()[2];

    // per-sample draws, in batch order: t first, then the noise field
    let mut rows = Vec::with_capacity(b);
    let mut zt = Vec::with_capacity(b * n * pd);
    let mut vt = Vec::with_capacity(b * n * pd);
    for (i, pair) in batch.iter().enumerate() {
        let t = rng.uniform();
        rows.push((t, pair.task_id));
        let z0 = &z0_tokens.data()[i * n * pd..(i + 1) * n * pd];
        let te = E::from_f64(t);
        let one_m_t = E::from_f64(1.0 - t);
        for &z in z0 {
            let e = E::from_f64(rng.normal());
            zt.push(te * e + one_m_t * z);
            vt.push(e - z);
        }
    }
    let zt = Tensor::from_vec(vec![b, n, pd], zt)?;
    let vt = Tensor::from_vec(vec![b, n, pd], vt)?;

    let g = Graph::new();
    let mut binder = Binder::default();
    let z_var = g.constant(zt);
    let c_var = g.constant(c_tokens);
    let fwd = model.velocity_graph(&g, &mut binder, z_var, c_var, geom, &rows)?;
    let vt_var = g.constant(vt.clone());
    let diff = g.sub(fwd.velocity, vt_var)?;
    let sq = g.mul(diff, diff)?;
    let loss_var = g.mean_all(sq)?;
    let loss = g.value(loss_var).item().as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "train_step(loss)".into(),
        });
    }

    let grads = g.backward(loss_var)?;
    let grad_map: std::collections::BTreeMap<String, Tensor<E>> = binder
        .pairs
        .iter()
        .filter_map(|(name, var)| grads.get(*var).map(|t| (name.clone(), t.clone())))
        .collect();
    let mut params = model.all_params_mut();
    let mut items: Vec<(&mut crate::optim::Param<E>, Option<&Tensor<E>>)> = params
        .iter_mut()
        .map(|p| {
            let grad = grad_map.get(&p.name);
            (&mut **p, grad)
        })
        .collect();
    opt.step(&mut items)?;

    // per-task mean losses, from the same prediction
    let pred = g.value(fwd.velocity);
    let mut by_task: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (i, pair) in batch.iter().enumerate() {
        let lo = i * n * pd;
        let hi = (i + 1) * n * pd;
        let mut acc = 0.0;
        for (p, t) in pred.data()[lo..hi].iter().zip(&vt.data()[lo..hi]) {
            let d = p.as_f64() - t.as_f64();
            acc += d * d;
        }
        let e = by_task.entry(pair.task_id).or_insert((0.0, 0));
        e.0 += acc / (n * pd) as f64;
        e.1 += 1;
    }
    let per_task = by_task
        .into_iter()
        .map(|(id, (sum, cnt))| (id, sum / cnt as f64))
        .collect();

    Ok(StepOutcome { loss, per_task })
}

/// Epoch loop with seeded per-epoch shuffling. Emits one loss row per
/// (step, task) and, when `out` is given, an adapter-delta checkpoint plus a
/// resumable optimizer-state file per epoch.
pub fn train<E: Element>(
    model: &mut EditModel<E>,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainRun> {
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    train_epochs(model, dataset, cfg, &mut opt, 0, out)
}

/// Continue training from `start_epoch` with an existing optimizer state.
pub fn train_epochs<E: Element>(
    model: &mut EditModel<E>,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    opt: &mut AdamW<E>,
    start_epoch: usize,
    out: Option<&Path>,
) -> Result<TrainRun> {
    if dataset.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train", "batch_size must be >= 1"));
    }
    let mut rows = Vec::new();
    let mut step_global = start_epoch * dataset.len().div_ceil(cfg.batch_size);
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        Rng::derive(&[cfg.seed, epoch as u64, LBL_SHUFFLE]).shuffle(&mut order);
        for (step_in_epoch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &dataset[i]).collect();
            let mut rng = Rng::derive(&[cfg.seed, epoch as u64, step_in_epoch as u64, LBL_NOISE]);
            let outcome = train_step(&batch, model, opt, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NanLoss { step: step_global },
                    other => other,
                })?;
            for (task_id, loss) in outcome.per_task {
                rows.push(LossRow {
                    step: step_global,
                    epoch,
                    task_id,
                    loss,
                });
            }
            step_global += 1;
        }
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if let EditModel::Adapted { adapter, .. } = model {
                save_adapter_deltas(adapter, &dir.join(format!("adapter_epoch{epoch}.vfck")))?;
            } else {
                model.save(&dir.join(format!("model_epoch{epoch}.vfck")))?;
            }
            save_train_state(opt, epoch, &dir.join(format!("state_epoch{epoch}.vfck")))?;
        }
    }
    Ok(TrainRun {
        steps: step_global,
        rows,
    })
}

/// Serialize the loss curve as CSV with columns `step,epoch,task_id,loss`.
pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,epoch,task_id,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.task_id, r.loss));
    }
    out
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    crate::video::write_atomic(path, loss_csv(rows).as_bytes())
}

/// Persist optimizer moments and the epoch/step counters for exact resume.
pub fn save_train_state<E: Element>(opt: &AdamW<E>, epoch: usize, path: &Path) -> Result<()> {
    let mut entries = vec![CkptEntry::new(
        "opt.counters",
        EntryKind::OptState,
        false,
        &Tensor::from_vec(
            vec![2],
            vec![opt.step_count() as f32, (epoch + 1) as f32],
        )?,
    )];
    for (name, m1, m2) in opt.export_slots() {
        entries.push(CkptEntry::new(
            format!("opt.{name}.m1"),
            EntryKind::OptState,
            false,
            &m1.cast::<f32>(),
        ));
        entries.push(CkptEntry::new(
            format!("opt.{name}.m2"),
            EntryKind::OptState,
            false,
            &m2.cast::<f32>(),
        ));
    }
    write_vfck(path, &entries)
}

/// Load a state file saved by [`save_train_state`]. Returns the epoch to
/// resume from (the one after the checkpointed epoch).
pub fn load_train_state<E: Element>(opt: &mut AdamW<E>, path: &Path) -> Result<usize> {
    let entries = read_vfck(path)?;
    let mut step = None;
    let mut next_epoch = None;
    let mut slots: std::collections::BTreeMap<String, (Option<Tensor<E>>, Option<Tensor<E>>)> =
        Default::default();
    for e in entries {
        if e.name == "opt.counters" {
            let t = e.tensor()?;
            step = Some(t.data()[0] as u64);
            next_epoch = Some(t.data()[1] as usize);
        } else if let Some(rest) = e.name.strip_prefix("opt.") {
            let t = e.tensor()?.cast::<E>();
            if let Some(name) = rest.strip_suffix(".m1") {
                slots.entry(name.to_string()).or_default().0 = Some(t);
            } else if let Some(name) = rest.strip_suffix(".m2") {
                slots.entry(name.to_string()).or_default().1 = Some(t);
            } else {
                return Err(Error::invalid(
                    "load_train_state",
                    format!("unexpected entry '{}'", e.name),
                ));
            }
        } else {
            return Err(Error::invalid(
                "load_train_state",
                format!("unexpected entry '{}'", e.name),
            ));
        }
    }
    let (Some(step), Some(next_epoch)) = (step, next_epoch) else {
        return Err(Error::invalid("load_train_state", "missing counters"));
    };
    let mut imported = Vec::with_capacity(slots.len());
    for (name, (m1, m2)) in slots {
        let (Some(m1), Some(m2)) = (m1, m2) else {
            return Err(Error::invalid(
                "load_train_state",
                format!("incomplete moment pair for '{name}'"),
            ));
        };
        imported.push((name, m1, m2));
    }
    opt.import_slots(imported, step);
    Ok(next_epoch)
}
