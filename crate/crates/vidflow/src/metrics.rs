//! Quantitative evaluation against analytic oracles, plus the motion
//! diagnostics that make frozen-frame failures measurable.
//!
//! PSNR is `10 * log10(1 / mse)` on [0, 1] pixels, capped at 99 dB (the cap
//! value is reported when mse is exactly zero and bounds all reported
//! values). Motion energy is the mean absolute pixel difference between
//! adjacent frames, averaged over the clip; the frozen-frame fraction counts
//! adjacent pairs whose mean absolute difference falls below a threshold
//! (default 1e-3 on [0, 1] pixels).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EditModel;
use crate::rng::Rng;
use crate::sampler::{edit_video, SampleConfig};
use crate::tensor::Element;
use crate::video::Video;

/// Reported PSNR ceiling in dB.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Default frozen-frame threshold on [0, 1] pixels.
pub const FROZEN_FRAME_TAU: f64 = 1e-3;

fn check_same_shape(a: &Video, b: &Video, op: &'static str) -> Result<()> {
    if a.frames != b.frames || a.height != b.height || a.width != b.width || a.channels != b.channels
    {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.frames, a.height, a.width, a.channels],
            rhs: vec![b.frames, b.height, b.width, b.channels],
        });
    }
    Ok(())
}

pub fn mse(a: &Video, b: &Video) -> Result<f64> {
    check_same_shape(a, b, "mse")?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data.iter().zip(b.data.iter()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(acc / a.data.len() as f64)
}

pub fn psnr(a: &Video, b: &Video) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean over adjacent frame pairs of the mean absolute pixel difference.
pub fn motion_energy(v: &Video) -> Result<f64> {
    if v.frames < 2 {
        return Err(Error::invalid(
            "motion_energy",
            format!("needs >= 2 frames, got {}", v.frames),
        ));
    }
    let n = v.frame_len();
    let mut acc = 0.0f64;
    for f in 0..v.frames - 1 {
        let (a, b) = (v.frame(f), v.frame(f + 1));
        let mut s = 0.0f64;
        for (&x, &y) in a.iter().zip(b.iter()) {
            s += (x as f64 - y as f64).abs();
        }
        acc += s / n as f64;
    }
    Ok(acc / (v.frames - 1) as f64)
}

/// Fraction of adjacent frame pairs whose mean absolute difference is
/// below `tau`.
pub fn frozen_frame_fraction(v: &Video, tau: f64) -> Result<f64> {
    if v.frames < 2 {
        return Err(Error::invalid(
            "frozen_frame_fraction",
            format!("needs >= 2 frames, got {}", v.frames),
        ));
    }
    let n = v.frame_len();
    let mut frozen = 0usize;
    for f in 0..v.frames - 1 {
        let (a, b) = (v.frame(f), v.frame(f + 1));
        let mut s = 0.0f64;
        for (&x, &y) in a.iter().zip(b.iter()) {
            s += (x as f64 - y as f64).abs();
        }
        if (s / n as f64) < tau {
            frozen += 1;
        }
    }
    Ok(frozen as f64 / (v.frames - 1) as f64)
}

/// MSE between output and target restricted to pixels the edit left
/// untouched (source == target). `None` when the edit covers every pixel.
pub fn structural_mse_outside_edit(
    output: &Video,
    source: &Video,
    target: &Video,
) -> Result<Option<f64>> {
    check_same_shape(output, source, "structural_mse")?;
    check_same_shape(output, target, "structural_mse")?;
    let c = output.channels;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for ((out_px, src_px), tgt_px) in output
        .data
        .chunks_exact(c)
        .zip(source.data.chunks_exact(c))
        .zip(target.data.chunks_exact(c))
    {
        let edited = src_px.iter().zip(tgt_px.iter()).any(|(a, b)| a != b);
        if !edited {
            for (o, t) in out_px.iter().zip(tgt_px.iter()) {
                let d = *o as f64 - *t as f64;
                acc += d * d;
            }
            count += c;
        }
    }
    Ok(if count == 0 { None } else { Some(acc / count as f64) })
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

/// A held-out example with its oracle target.
pub struct EvalPair {
    pub id: String,
    pub task_id: usize,
    pub source: Video,
    pub target: Video,
}

/// Per-video evaluation detail.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VideoEval {
    pub id: String,
    pub task_id: usize,
    pub psnr_vs_target: f64,
    pub psnr_vs_source: f64,
    pub motion_energy_output: Option<f64>,
    pub motion_energy_source: Option<f64>,
    pub motion_energy_ratio: Option<f64>,
    pub frozen_frame_fraction: Option<f64>,
    pub structural_mse_outside_edit: Option<f64>,
    pub error: Option<String>,
}

/// Per-task aggregate row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskRow {
    pub task_id: usize,
    pub n_videos: usize,
    pub psnr_mean: f64,
    pub psnr_min: f64,
    pub frozen_frame_fraction: Option<f64>,
    pub motion_energy_ratio: Option<f64>,
    pub structural_mse_outside_edit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<TaskRow>,
    pub videos: Vec<VideoEval>,
}

fn eval_one<E: Element>(
    model: &EditModel<E>,
    pair: &EvalPair,
    sample: &SampleConfig,
    index: usize,
) -> VideoEval {
    // derive a per-video sampler seed so evaluation order cannot matter
    let mut cfg = sample.clone();
    cfg.seed = Rng::derive(&[sample.seed, index as u64, 0x6576_616c]).next_u64();
    let mut out = VideoEval {
        id: pair.id.clone(),
        task_id: pair.task_id,
        psnr_vs_target: f64::NAN,
        psnr_vs_source: f64::NAN,
        motion_energy_output: None,
        motion_energy_source: None,
        motion_energy_ratio: None,
        frozen_frame_fraction: None,
        structural_mse_outside_edit: None,
        error: None,
    };
    let edited = match edit_video(model, &pair.source, pair.task_id, &cfg) {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let fill = || -> Result<VideoEval> {
        let mut v = out.clone();
        v.psnr_vs_target = psnr(&edited, &pair.target)?;
        v.psnr_vs_source = psnr(&edited, &pair.source)?;
        if pair.source.frames >= 2 {
            let me_out = motion_energy(&edited)?;
            let me_src = motion_energy(&pair.source)?;
            v.motion_energy_output = Some(me_out);
            v.motion_energy_source = Some(me_src);
            v.motion_energy_ratio = (me_src > 0.0).then(|| me_out / me_src);
            v.frozen_frame_fraction = Some(frozen_frame_fraction(&edited, FROZEN_FRAME_TAU)?);
        }
        v.structural_mse_outside_edit =
            structural_mse_outside_edit(&edited, &pair.source, &pair.target)?;
        Ok(v)
    };
    match fill() {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(e.to_string());
            out
        }
    }
}

/// Edit and score every pair. Per-video failures are recorded in the report
/// rather than aborting the run. `threads` splits the videos across worker
/// threads; results are independent of the thread count.
pub fn evaluate<E: Element>(
    model: &EditModel<E>,
    pairs: &[EvalPair],
    sample: &SampleConfig,
    threads: usize,
) -> Result<Report> {
    let threads = threads.max(1).min(pairs.len().max(1));
    let mut videos: Vec<Option<VideoEval>> = vec![None; pairs.len()];
    if threads <= 1 {
        for (i, pair) in pairs.iter().enumerate() {
            videos[i] = Some(eval_one(model, pair, sample, i));
        }
    } else {
        let chunk = pairs.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, slice) in pairs.chunks(chunk).enumerate() {
                let base = w * chunk;
                handles.push(scope.spawn(move || {
                    slice
                        .iter()
                        .enumerate()
                        .map(|(j, p)| eval_one(model, p, sample, base + j))
                        .collect::<Vec<_>>()
                }));
            }
            for (w, h) in handles.into_iter().enumerate() {
                for (j, v) in h.join().expect("eval worker").into_iter().enumerate() {
                    videos[w * chunk + j] = Some(v);
                }
            }
        });
    }
    let videos: Vec<VideoEval> = videos.into_iter().flatten().collect();

    // aggregate per task, ascending task id
    let mut task_ids: Vec<usize> = videos.iter().map(|v| v.task_id).collect();
    task_ids.sort_unstable();
    task_ids.dedup();
    let mut rows = Vec::with_capacity(task_ids.len());
    for task_id in task_ids {
        let ok: Vec<&VideoEval> = videos
            .iter()
            .filter(|v| v.task_id == task_id && v.error.is_none())
            .collect();
        if ok.is_empty() {
            rows.push(TaskRow {
                task_id,
                n_videos: 0,
                psnr_mean: f64::NAN,
                psnr_min: f64::NAN,
                frozen_frame_fraction: None,
                motion_energy_ratio: None,
                structural_mse_outside_edit: None,
            });
            continue;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let opt_mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| mean(&xs));
        let psnrs: Vec<f64> = ok.iter().map(|v| v.psnr_vs_target).collect();
        rows.push(TaskRow {
            task_id,
            n_videos: ok.len(),
            psnr_mean: mean(&psnrs),
            psnr_min: psnrs.iter().cloned().fold(f64::INFINITY, f64::min),
            frozen_frame_fraction: opt_mean(
                ok.iter().filter_map(|v| v.frozen_frame_fraction).collect(),
            ),
            motion_energy_ratio: opt_mean(ok.iter().filter_map(|v| v.motion_energy_ratio).collect()),
            structural_mse_outside_edit: opt_mean(
                ok.iter()
                    .filter_map(|v| v.structural_mse_outside_edit)
                    .collect(),
            ),
        });
    }
    Ok(Report { rows, videos })
}

impl Report {
    /// One CSV row per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task_id,n_videos,psnr_mean,psnr_min,frozen_frame_fraction,motion_energy_ratio,structural_mse_outside_edit\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.task_id,
                r.n_videos,
                r.psnr_mean,
                r.psnr_min,
                opt(r.frozen_frame_fraction),
                opt(r.motion_energy_ratio),
                opt(r.structural_mse_outside_edit),
            ));
        }
        out
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        crate::video::write_atomic(csv_path, self.to_csv().as_bytes())?;
        let json = serde_json::to_vec_pretty(self)?;
        crate::video::write_atomic(json_path, &json)?;
        Ok(())
    }
}
