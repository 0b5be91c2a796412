//! Frozen desk-scale text-to-video DiT backbone.
//!
//! Pixel-space patch tokens stand in for VAE latents: a video is losslessly
//! rearranged into `f * (H/p) * (W/p)` tokens of `p*p*3` patch pixels, then a
//! learned linear embedding lifts them to model width `d`. Blocks are
//! pre-norm with AdaLN-style scale/shift/gate modulation (six vectors per
//! block) derived from the timestep embedding, and full 3D attention with
//! rotary positions split across the (t, h, w) axes of the token lattice.
//! The head projects back to patch-pixel space and predicts the flow-matching
//! velocity.
//!
//! Text conditioning is replaced by a small learned task-ID table added to
//! the sinusoidal timestep features before the timestep perceptron
//! (class-conditional style); rotary frequencies extrapolate over frame
//! count, so a backbone used on single-frame inputs accepts any `f >= 1` at
//! inference.

use std::path::Path;

use crate::checkpoint::{read_vfck, write_vfck, CkptEntry, EntryKind};
use crate::error::{Error, Result};
use crate::graph::{scaled_dot_attention, Graph, Var};
use crate::optim::Param;
use crate::rng::Rng;
use crate::tensor::{mm_nn, Element, Tensor};
use crate::video::Video;

/// Rotary frequency base.
const ROPE_BASE: f64 = 10_000.0;
/// Highest sinusoid frequency of the timestep features over t in [0, 1].
const TIME_MAX_FREQ: f64 = 1000.0;

// ---------------------------------------------------------------------------
// Configuration and token geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    /// Size of the learned task-ID embedding table.
    pub task_vocab: usize,
    /// Documented frame-count cap for position extrapolation at inference.
    pub max_frames: usize,
}

impl ModelConfig {
    /// Default desk-scale configuration: CPU-trainable in minutes.
    pub fn desk_scale() -> Self {
        ModelConfig {
            blocks: 4,
            dim: 128,
            heads: 4,
            patch: 4,
            task_vocab: 8,
            max_frames: 16,
        }
    }

    /// Tiny model for finite-difference verification and bit-level checks.
    pub fn micro(blocks: usize, dim: usize) -> Self {
        ModelConfig {
            blocks,
            dim,
            heads: 1,
            patch: 2,
            task_vocab: 4,
            max_frames: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn ffn_hidden(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(
                "model config",
                format!("dim {} not divisible by heads {}", self.dim, self.heads),
            ));
        }
        rope_axis_pairs(self.head_dim())?;
        Ok(())
    }
}

/// 3D index of one token on the (frame, row, column) lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PositionTriple {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

/// Token-grid geometry: `n() = f * gh * gw` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub f: usize,
    pub gh: usize,
    pub gw: usize,
}

impl Geometry {
    pub fn n(&self) -> usize {
        self.f * self.gh * self.gw
    }
}

/// Native lattice enumeration in (t, h, w) order.
pub fn lattice_positions(geom: Geometry) -> Vec<PositionTriple> {
    let mut out = Vec::with_capacity(geom.n());
    for t in 0..geom.f {
        for h in 0..geom.gh {
            for w in 0..geom.gw {
                out.push(PositionTriple { t, h, w });
            }
        }
    }
    out
}

/// A batch of tokens with per-token 3D positions.
#[derive(Clone)]
pub struct TokenGrid<E> {
    pub tokens: Tensor<E>,
    pub positions: Vec<PositionTriple>,
    pub geom: Geometry,
}

impl<E: Element> TokenGrid<E> {
    pub fn new(tokens: Tensor<E>, positions: Vec<PositionTriple>, geom: Geometry) -> Result<Self> {
        let shape = tokens.shape();
        if shape.len() != 3 || shape[1] != geom.n() || positions.len() != geom.n() {
            return Err(Error::invalid(
                "token_grid",
                format!(
                    "tokens {:?} / {} positions inconsistent with geometry {:?}",
                    shape,
                    positions.len(),
                    geom
                ),
            ));
        }
        let mut seen = positions.clone();
        seen.sort_unstable_by_key(|p| (p.t, p.h, p.w));
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("token_grid", "duplicate positions"));
        }
        Ok(TokenGrid {
            tokens,
            positions,
            geom,
        })
    }
}

// ---------------------------------------------------------------------------
// Patch rearrangement (lossless) and rotary angles
// ---------------------------------------------------------------------------

/// Rearrange a video into `[N, p*p*3]` patch-pixel tokens in (t, h, w) order.
/// Exact inverse of [`patch_join`]; no projection is applied.
pub fn patch_split<E: Element>(video: &Video, p: usize) -> Result<(Tensor<E>, Geometry)> {
    if video.height % p != 0 || video.width % p != 0 {
        return Err(Error::invalid(
            "patchify",
            format!("{}x{} frame not divisible by patch {}", video.height, video.width, p),
        ));
    }
    let geom = Geometry {
        f: video.frames,
        gh: video.height / p,
        gw: video.width / p,
    };
    let c = video.channels;
    let pd = p * p * c;
    let mut out = Vec::with_capacity(geom.n() * pd);
    for f in 0..geom.f {
        for gy in 0..geom.gh {
            for gx in 0..geom.gw {
                for py in 0..p {
                    for px in 0..p {
                        let pix = video.pixel(f, gy * p + py, gx * p + px);
                        out.extend(pix.iter().map(|&v| E::from_f64(v as f64)));
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(vec![geom.n(), pd], out)?, geom))
}

/// Inverse of [`patch_split`]: `[N, p*p*3]` tokens back to a video.
pub fn patch_join<E: Element>(tokens: &Tensor<E>, geom: Geometry, p: usize) -> Result<Video> {
    let pd = p * p * 3;
    if tokens.shape() != [geom.n(), pd] {
        return Err(Error::invalid(
            "unpatchify",
            format!("tokens {:?} do not match geometry {:?} with patch {}", tokens.shape(), geom, p),
        ));
    }
    let mut video = Video::new(geom.f, geom.gh * p, geom.gw * p, 3);
    let td = tokens.data();
    let mut idx = 0;
    for f in 0..geom.f {
        for gy in 0..geom.gh {
            for gx in 0..geom.gw {
                for py in 0..p {
                    for px in 0..p {
                        let pix = video.pixel_mut(f, gy * p + py, gx * p + px);
                        for (ci, v) in pix.iter_mut().enumerate() {
                            *v = td[idx * pd + (py * p + px) * 3 + ci].as_f64() as f32;
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    Ok(video)
}

/// Head-channel allocation across the (t, h, w) axes: ceil-to-even thirds
/// with the w axis receiving the remainder. Returned as pair counts.
pub fn rope_axis_pairs(head_dim: usize) -> Result<(usize, usize, usize)> {
    if head_dim % 2 != 0 {
        return Err(Error::invalid(
            "rope3d",
            format!("head dim {head_dim} is odd"),
        ));
    }
    let third = head_dim.div_ceil(3);
    let ch_t = third + third % 2;
    let ch_h = ch_t;
    let ch_w = head_dim as isize - 2 * ch_t as isize;
    if ch_w <= 0 {
        return Err(Error::invalid(
            "rope3d",
            format!("head dim {head_dim} not partitionable into three axis groups"),
        ));
    }
    Ok((ch_t / 2, ch_h / 2, ch_w as usize / 2))
}

/// Rotary angles per token: `[N, head_dim/2]`, contiguous (t, h, w) groups,
/// log-spaced inverse frequencies within each group.
pub fn rope3d_angles<E: Element>(
    positions: &[PositionTriple],
    head_dim: usize,
) -> Result<Tensor<E>> {
    let (pt, ph, pw) = rope_axis_pairs(head_dim)?;
    let half = head_dim / 2;
    let mut out = Vec::with_capacity(positions.len() * half);
    let freq = |j: usize, pairs: usize| ROPE_BASE.powf(-(j as f64) / pairs as f64);
    for pos in positions {
        for j in 0..pt {
            out.push(E::from_f64(pos.t as f64 * freq(j, pt)));
        }
        for j in 0..ph {
            out.push(E::from_f64(pos.h as f64 * freq(j, ph)));
        }
        for j in 0..pw {
            out.push(E::from_f64(pos.w as f64 * freq(j, pw)));
        }
    }
    Tensor::from_vec(vec![positions.len(), half], out)
}

/// Log-spaced sinusoidal features of a timestep in [0, 1].
pub fn sinusoid_features<E: Element>(t: f64, dim: usize) -> Tensor<E> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let omega = if half > 1 {
            TIME_MAX_FREQ.powf(i as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out.push(E::from_f64((t * omega).cos()));
    }
    for i in 0..half {
        let omega = if half > 1 {
            TIME_MAX_FREQ.powf(i as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out.push(E::from_f64((t * omega).sin()));
    }
    Tensor::from_vec(vec![dim], out).expect("sinusoid shape")
}

/// Deterministic embedding of a timestep, produced by the (frozen) timestep
/// perceptron with no task conditioning mixed in.
#[derive(Clone)]
pub struct TimestepEmbedding<E> {
    pub t: f64,
    pub vector: Tensor<E>,
}

// ---------------------------------------------------------------------------
// Raw (non-graph) helpers for the frozen conditioning path
// ---------------------------------------------------------------------------

pub(crate) fn raw_matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::ShapeMismatch {
            op: "raw_matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![E::zero(); m * n];
    mm_nn(a.data(), b.data(), &mut out, m, k, n);
    Tensor::from_vec(vec![m, n], out)
}

pub(crate) fn raw_add_bias<E: Element>(x: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let d = x.last_dim();
    if bias.shape() != [d] {
        return Err(Error::ShapeMismatch {
            op: "raw_add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let bd = bias.data();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(d) {
        out.extend(row.iter().zip(bd).map(|(&a, &b)| a + b));
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

pub(crate) fn raw_silu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v / (E::one() + (-v).exp()))
}

/// Row block `[start..start+len)` of a row-major 2D tensor.
pub(crate) fn raw_rows<E: Element>(x: &Tensor<E>, start: usize, len: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 2 || start + len > s[0] {
        return Err(Error::invalid(
            "raw_rows",
            format!("rows {start}..{} of {:?}", start + len, s),
        ));
    }
    let d = s[1];
    Tensor::from_vec(
        vec![len, d],
        x.data()[start * d..(start + len) * d].to_vec(),
    )
}

/// Column block `[.., start..start+len)` of a row-major 2D tensor.
pub(crate) fn raw_cols<E: Element>(x: &Tensor<E>, start: usize, len: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 2 || start + len > s[1] {
        return Err(Error::invalid(
            "raw_cols",
            format!("cols {start}..{} of {:?}", start + len, s),
        ));
    }
    let mut out = Vec::with_capacity(s[0] * len);
    for row in x.data().chunks_exact(s[1]) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Tensor::from_vec(vec![s[0], len], out)
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

pub struct BlockParams<E> {
    pub norm1_gain: Param<E>,
    pub wq: Param<E>,
    pub wk: Param<E>,
    pub wv: Param<E>,
    pub wo: Param<E>,
    pub norm2_gain: Param<E>,
    pub ffn_w1: Param<E>,
    pub ffn_b1: Param<E>,
    pub ffn_w2: Param<E>,
    pub ffn_b2: Param<E>,
    pub mod_w: Param<E>,
    pub mod_b: Param<E>,
}

pub struct Backbone<E> {
    pub cfg: ModelConfig,
    pub patch_embed_w: Param<E>,
    pub patch_embed_b: Param<E>,
    pub temb_w1: Param<E>,
    pub temb_b1: Param<E>,
    pub temb_w2: Param<E>,
    pub temb_b2: Param<E>,
    pub task_table: Param<E>,
    pub blocks: Vec<BlockParams<E>>,
    pub final_gain: Param<E>,
    pub final_mod_w: Param<E>,
    pub final_mod_b: Param<E>,
    pub head_w: Param<E>,
    pub head_b: Param<E>,
}

impl<E: Element> Backbone<E> {
    /// Random frozen backbone: the desk-scale stand-in for a pretrained model.
    ///
    /// Modulation biases start at gate = 1, scale = shift = 0 so blocks pass
    /// signal at init; modulation weights are small but nonzero so the
    /// timestep genuinely modulates every block.
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let pd = cfg.patch_dim();
        let hidden = cfg.ffn_hidden();
        let xavier = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        // Modulation weights stay mild across all six segments: a random
        // frozen backbone tolerates only gentle conditioning, and the
        // adapter extracts timestep information from token statistics
        // rather than from the modulation basis. Gate biases start at 1.
        let mod_sigma = |_col: usize| 0.02;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let name = |suffix: &str| format!("blocks.{i}.{suffix}");
            let mut mod_b = vec![E::zero(); 6 * d];
            // segment order: shift_a, scale_a, gate_a, shift_f, scale_f, gate_f
            for v in &mut mod_b[2 * d..3 * d] {
                *v = E::one();
            }
            for v in &mut mod_b[5 * d..6 * d] {
                *v = E::one();
            }
            blocks.push(BlockParams {
                norm1_gain: Param::frozen(name("norm1.gain"), Tensor::full(&[d], E::one())),
                wq: Param::frozen(name("attn.wq.weight"), Tensor::randn(&[d, d], xavier(d), rng)),
                wk: Param::frozen(name("attn.wk.weight"), Tensor::randn(&[d, d], xavier(d), rng)),
                wv: Param::frozen(name("attn.wv.weight"), Tensor::randn(&[d, d], xavier(d), rng)),
                wo: Param::frozen(name("attn.wo.weight"), Tensor::randn(&[d, d], xavier(d), rng)),
                norm2_gain: Param::frozen(name("norm2.gain"), Tensor::full(&[d], E::one())),
                ffn_w1: Param::frozen(
                    name("ffn.0.weight"),
                    Tensor::randn(&[d, hidden], xavier(d), rng),
                ),
                ffn_b1: Param::frozen(name("ffn.0.bias"), Tensor::zeros(&[hidden])),
                ffn_w2: Param::frozen(
                    name("ffn.2.weight"),
                    Tensor::randn(&[hidden, d], xavier(hidden), rng),
                ),
                ffn_b2: Param::frozen(name("ffn.2.bias"), Tensor::zeros(&[d])),
                mod_w: Param::frozen(name("modulation.weight"), {
                    let w = Tensor::<E>::randn(&[d, 6 * d], 1.0, rng);
                    let mut data = w.data().to_vec();
                    for (j, v) in data.iter_mut().enumerate() {
                        *v = *v * E::from_f64(mod_sigma(j % (6 * d)));
                    }
                    Tensor::from_vec(vec![d, 6 * d], data)?
                }),
                mod_b: Param::frozen(name("modulation.bias"), Tensor::from_vec(vec![6 * d], mod_b)?),
            });
        }

        Ok(Backbone {
            patch_embed_w: Param::frozen(
                "patch_embed.weight",
                Tensor::randn(&[pd, d], xavier(pd), rng),
            ),
            patch_embed_b: Param::frozen("patch_embed.bias", Tensor::zeros(&[d])),
            temb_w1: Param::frozen("t_embedder.fc1.weight", Tensor::randn(&[d, d], xavier(d), rng)),
            temb_b1: Param::frozen("t_embedder.fc1.bias", Tensor::zeros(&[d])),
            temb_w2: Param::frozen("t_embedder.fc2.weight", Tensor::randn(&[d, d], xavier(d), rng)),
            temb_b2: Param::frozen("t_embedder.fc2.bias", Tensor::zeros(&[d])),
            task_table: Param::frozen(
                "task_table.weight",
                Tensor::randn(&[cfg.task_vocab, d], 1.0, rng),
            ),
            blocks,
            final_gain: Param::frozen("final.norm.gain", Tensor::full(&[d], E::one())),
            final_mod_w: Param::frozen(
                "final.modulation.weight",
                Tensor::randn(&[d, 2 * d], 0.02, rng),
            ),
            final_mod_b: Param::frozen("final.modulation.bias", Tensor::zeros(&[2 * d])),
            head_w: Param::frozen("head.weight", Tensor::randn(&[d, pd], xavier(d), rng)),
            head_b: Param::frozen("head.bias", Tensor::zeros(&[pd])),
            cfg,
        })
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut out = vec![
            &self.patch_embed_w,
            &self.patch_embed_b,
            &self.temb_w1,
            &self.temb_b1,
            &self.temb_w2,
            &self.temb_b2,
            &self.task_table,
        ];
        for b in &self.blocks {
            out.extend([
                &b.norm1_gain,
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.norm2_gain,
                &b.ffn_w1,
                &b.ffn_b1,
                &b.ffn_w2,
                &b.ffn_b2,
                &b.mod_w,
                &b.mod_b,
            ]);
        }
        out.extend([
            &self.final_gain,
            &self.final_mod_w,
            &self.final_mod_b,
            &self.head_w,
            &self.head_b,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut out = vec![
            &mut self.patch_embed_w,
            &mut self.patch_embed_b,
            &mut self.temb_w1,
            &mut self.temb_b1,
            &mut self.temb_w2,
            &mut self.temb_b2,
            &mut self.task_table,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.norm1_gain,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.norm2_gain,
                &mut b.ffn_w1,
                &mut b.ffn_b1,
                &mut b.ffn_w2,
                &mut b.ffn_b2,
                &mut b.mod_w,
                &mut b.mod_b,
            ]);
        }
        out.extend([
            &mut self.final_gain,
            &mut self.final_mod_w,
            &mut self.final_mod_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    /// Flip trainability of the attention q,k,v,o projections and both FFN
    /// weights in every block (the direct-tuning ablation's trainable set).
    pub fn set_attention_ffn_trainable(&mut self, trainable: bool) {
        for b in &mut self.blocks {
            for p in [
                &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.ffn_w1, &mut b.ffn_w2,
            ] {
                p.trainable = trainable;
            }
        }
    }

    // -- conditioning (frozen path, computed outside the graph) --------------

    /// Sinusoidal features -> two-layer perceptron. Pure function of `t`.
    pub fn timestep_embed(&self, t: f64) -> Result<TimestepEmbedding<E>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(
                "timestep_embed",
                format!("t = {t} outside [0, 1]"),
            ));
        }
        let feats = sinusoid_features::<E>(t, self.cfg.dim).reshaped(vec![1, self.cfg.dim])?;
        let vector = self.temb_mlp(&feats)?.reshaped(vec![self.cfg.dim])?;
        Ok(TimestepEmbedding { t, vector })
    }

    fn temb_mlp(&self, features: &Tensor<E>) -> Result<Tensor<E>> {
        let h = raw_add_bias(&raw_matmul(features, &self.temb_w1.value)?, &self.temb_b1.value)?;
        let h = raw_silu(&h);
        raw_add_bias(&raw_matmul(&h, &self.temb_w2.value)?, &self.temb_b2.value)
    }

    /// Per-row modulation inputs for a batch of streams.
    ///
    /// Each row is `(t, task)`: the noisy stream carries the current t plus
    /// the task embedding (added to the sinusoidal features, before the
    /// perceptron); a condition stream carries `(0.0, None)` and therefore
    /// equals `timestep_embed(0)` bit for bit.
    pub(crate) fn row_conds(&self, rows: &[(f64, Option<usize>)]) -> Result<RowConds<E>> {
        let d = self.cfg.dim;
        let mut feats = Vec::with_capacity(rows.len() * d);
        for &(t, task) in rows {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("row_conds", format!("t = {t} outside [0, 1]")));
            }
            let f = sinusoid_features::<E>(t, d);
            match task {
                None => feats.extend_from_slice(f.data()),
                Some(id) => {
                    if id >= self.cfg.task_vocab {
                        return Err(Error::invalid(
                            "row_conds",
                            format!("task id {id} >= vocab {}", self.cfg.task_vocab),
                        ));
                    }
                    let row = &self.task_table.value.data()[id * d..(id + 1) * d];
                    feats.extend(f.data().iter().zip(row).map(|(&a, &b)| a + b));
                }
            }
        }
        let feats = Tensor::from_vec(vec![rows.len(), d], feats)?;
        let temb = self.temb_mlp(&feats)?;
        let silu_temb = raw_silu(&temb);
        Ok(RowConds { temb, silu_temb })
    }

    /// Six per-row modulation vectors of one block, as graph constants.
    pub(crate) fn block_mods(
        &self,
        g: &Graph<E>,
        block: usize,
        conds: &RowConds<E>,
    ) -> Result<BlockMods> {
        let d = self.cfg.dim;
        let b = &self.blocks[block];
        let m = raw_add_bias(&raw_matmul(&conds.silu_temb, &b.mod_w.value)?, &b.mod_b.value)?;
        let seg = |i: usize| raw_cols(&m, i * d, d);
        let one_plus = |t: Tensor<E>| t.map(|v| v + E::one());
        Ok(BlockMods {
            shift_a: g.constant(seg(0)?),
            scale1p_a: g.constant(one_plus(seg(1)?)),
            gate_a: g.constant(seg(2)?),
            shift_f: g.constant(seg(3)?),
            scale1p_f: g.constant(one_plus(seg(4)?)),
            gate_f: g.constant(seg(5)?),
        })
    }

    /// Final-layer (scale, shift) modulation rows, as graph constants.
    pub(crate) fn final_mods(&self, g: &Graph<E>, conds: &RowConds<E>) -> Result<(Var, Var)> {
        let d = self.cfg.dim;
        let m = raw_add_bias(
            &raw_matmul(&conds.silu_temb, &self.final_mod_w.value)?,
            &self.final_mod_b.value,
        )?;
        let scale1p = g.constant(raw_cols(&m, 0, d)?.map(|v| v + E::one()));
        let shift = g.constant(raw_cols(&m, d, d)?);
        Ok((scale1p, shift))
    }

    // -- public token interface ----------------------------------------------

    /// Patchify a video into projected model tokens with lattice positions.
    pub fn patchify(&self, video: &Video) -> Result<TokenGrid<E>> {
        let (raw, geom) = patch_split::<E>(video, self.cfg.patch)?;
        let tokens = raw_add_bias(
            &raw_matmul(&raw, &self.patch_embed_w.value)?,
            &self.patch_embed_b.value,
        )?;
        let n = geom.n();
        let d = self.cfg.dim;
        TokenGrid::new(
            tokens.reshaped(vec![1, n, d])?,
            lattice_positions(geom),
            geom,
        )
    }

    /// Inverse spatial arrangement of patch-pixel tokens (the head output
    /// space) back into a video. Pure rearrangement, exact.
    pub fn unpatchify(&self, grid: &TokenGrid<E>) -> Result<Video> {
        let shape = grid.tokens.shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 || shape[2] != self.cfg.patch_dim() {
            return Err(Error::invalid(
                "unpatchify",
                format!(
                    "expected [1, N, {}] patch-pixel tokens, got {:?}",
                    self.cfg.patch_dim(),
                    shape
                ),
            ));
        }
        let flat = grid.tokens.reshaped(vec![shape[1], shape[2]])?;
        patch_join(&flat, grid.geom, self.cfg.patch)
    }

    // -- forward ---------------------------------------------------------------

    /// Graph-level velocity prediction for raw patch-pixel tokens
    /// `[B, N, p*p*3]`. One `(t, task)` row per batch element.
    pub fn velocity_graph(
        &self,
        g: &Graph<E>,
        binder: &mut Binder,
        z_tokens: Var,
        geom: Geometry,
        rows: &[(f64, usize)],
    ) -> Result<Var> {
        let shape = g.shape(z_tokens);
        if shape.len() != 3 || shape[1] != geom.n() || shape[2] != self.cfg.patch_dim() {
            return Err(Error::invalid(
                "forward_velocity",
                format!("tokens {shape:?} inconsistent with geometry {geom:?}"),
            ));
        }
        if shape[0] != rows.len() {
            return Err(Error::invalid(
                "forward_velocity",
                format!("{} batch rows but {} (t, task) rows", shape[0], rows.len()),
            ));
        }
        let bound = self.bind(g, binder);
        let conds = self.row_conds(
            &rows.iter().map(|&(t, task)| (t, Some(task))).collect::<Vec<_>>(),
        )?;
        let angles = rope3d_angles::<E>(&lattice_positions(geom), self.cfg.head_dim())?;

        let mut x = g.matmul(z_tokens, bound.embed_w)?;
        x = g.add_bias(x, bound.embed_b)?;
        for (i, bb) in bound.blocks.iter().enumerate() {
            let mods = self.block_mods(g, i, &conds)?;
            x = base_block_forward(g, x, bb, &mods, &angles, self.cfg.heads)?;
        }
        self.head_graph(g, x, &bound, &conds)
    }

    /// Final norm + modulation + linear head to patch-pixel velocity space.
    pub(crate) fn head_graph(
        &self,
        g: &Graph<E>,
        x: Var,
        bound: &BoundBackbone,
        conds: &RowConds<E>,
    ) -> Result<Var> {
        let (scale1p, shift) = self.final_mods(g, conds)?;
        let mut h = g.rms_norm(x, bound.final_gain)?;
        h = g.scale_rows(h, scale1p)?;
        h = g.add_rows(h, shift)?;
        let out = g.matmul(h, bound.head_w)?;
        g.add_bias(out, bound.head_b)
    }

    /// Convenience wrapper: velocity field of a whole video at one t.
    /// Builds a throwaway graph, returns the unpatchified velocity video.
    pub fn velocity_tokens(
        &self,
        z_tokens: &Tensor<E>,
        geom: Geometry,
        t: f64,
        task: usize,
    ) -> Result<Tensor<E>> {
        let g = Graph::new();
        let mut binder = Binder::default();
        let z = g.constant(z_tokens.clone());
        let out = self.velocity_graph(&g, &mut binder, z, geom, &[(t, task)])?;
        Ok(g.value(out))
    }

    // -- binding ---------------------------------------------------------------

    pub(crate) fn bind(&self, g: &Graph<E>, binder: &mut Binder) -> BoundBackbone {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BoundBlock {
                norm1_gain: binder.leaf(g, &b.norm1_gain),
                wq: binder.leaf(g, &b.wq),
                wk: binder.leaf(g, &b.wk),
                wv: binder.leaf(g, &b.wv),
                wo: binder.leaf(g, &b.wo),
                norm2_gain: binder.leaf(g, &b.norm2_gain),
                ffn_w1: binder.leaf(g, &b.ffn_w1),
                ffn_b1: binder.leaf(g, &b.ffn_b1),
                ffn_w2: binder.leaf(g, &b.ffn_w2),
                ffn_b2: binder.leaf(g, &b.ffn_b2),
            })
            .collect();
        BoundBackbone {
            embed_w: binder.leaf(g, &self.patch_embed_w),
            embed_b: binder.leaf(g, &self.patch_embed_b),
            blocks,
            final_gain: binder.leaf(g, &self.final_gain),
            head_w: binder.leaf(g, &self.head_w),
            head_b: binder.leaf(g, &self.head_b),
        }
    }

    // -- checkpoints -------------------------------------------------------------
    pub fn save(&self, path: &Path) -> Result<()>
    where
        E: Element,
    {
        let entries: Vec<CkptEntry> = self
            .params()
            .iter()
            .map(|p| CkptEntry::new(&p.name, EntryKind::Base, p.trainable, &p.value.cast::<f32>()))
            .collect();
        write_vfck(path, &entries)
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let entries = read_vfck(path)?;
        let mut by_name: std::collections::BTreeMap<String, CkptEntry> =
            entries.into_iter().map(|e| (e.name.clone(), e)).collect();
        for p in self.params_mut() {
            let e = by_name.remove(&p.name).ok_or_else(|| {
                Error::invalid("load_backbone", format!("missing entry '{}'", p.name))
            })?;
            if e.shape != p.value.shape() {
                return Err(Error::invalid(
                    "load_backbone",
                    format!("entry '{}': shape {:?} vs expected {:?}", p.name, e.shape, p.value.shape()),
                ));
            }
            p.value = e.tensor()?.cast::<E>();
        }
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(Error::invalid(
                "load_backbone",
                format!("unexpected entry '{name}'"),
            ));
        }
        Ok(())
    }
}

/// Per-row conditioning tensors shared by all blocks of one forward pass.
pub(crate) struct RowConds<E> {
    /// `[R, d]` timestep-perceptron output per stream row.
    pub temb: Tensor<E>,
    pub silu_temb: Tensor<E>,
}

pub(crate) struct BlockMods {
    pub shift_a: Var,
    pub scale1p_a: Var,
    pub gate_a: Var,
    pub shift_f: Var,
    pub scale1p_f: Var,
    pub gate_f: Var,
}

pub(crate) struct BoundBlock {
    pub norm1_gain: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub norm2_gain: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

pub(crate) struct BoundBackbone {
    pub embed_w: Var,
    pub embed_b: Var,
    pub blocks: Vec<BoundBlock>,
    pub final_gain: Var,
    pub head_w: Var,
    pub head_b: Var,
}

/// Associates trainable parameters with their graph leaves so gradients can
/// be pulled out after backward.
#[derive(Default)]
pub struct Binder {
    pub pairs: Vec<(String, Var)>,
}

impl Binder {
    pub(crate) fn leaf<E: Element>(&mut self, g: &Graph<E>, p: &Param<E>) -> Var {
        let v = g.leaf(p.value.clone(), p.trainable);
        if p.trainable {
            self.pairs.push((p.name.clone(), v));
        }
        v
    }
}

/// Low-rank delta leaves for one projection: `x -> scale * (x @ down^T) @ up^T`.
#[derive(Clone, Copy)]
pub(crate) struct DeltaVars {
    pub down: Var,
    pub up: Var,
    pub scale: f64,
}

pub(crate) fn apply_delta<E: Element>(g: &Graph<E>, x: Var, d: &DeltaVars) -> Result<Var> {
    let low = g.matmul_nt(x, d.down)?;
    let out = g.matmul_nt(low, d.up)?;
    if d.scale != 1.0 {
        g.affine(out, E::from_f64(d.scale), E::zero())
    } else {
        Ok(out)
    }
}

pub(crate) struct BranchDeltas {
    pub q: DeltaVars,
    pub k: DeltaVars,
    pub v: DeltaVars,
    pub o: DeltaVars,
}

/// Multi-head attention over a token sequence with rotary positions applied
/// to Q and K. `deltas`, when present, add low-rank corrections to each
/// projection (the spatial-branch path).
pub(crate) fn attention_tokens<E: Element>(
    g: &Graph<E>,
    h: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    deltas: Option<&BranchDeltas>,
    angles: &Tensor<E>,
    heads: usize,
) -> Result<Var> {
    let proj = |w: Var, d: Option<&DeltaVars>| -> Result<Var> {
        let base = g.matmul(h, w)?;
        match d {
            None => Ok(base),
            Some(dv) => g.add(base, apply_delta(g, h, dv)?),
        }
    };
    let q = proj(wq, deltas.map(|d| &d.q))?;
    let k = proj(wk, deltas.map(|d| &d.k))?;
    let v = proj(wv, deltas.map(|d| &d.v))?;

    let qh = g.rope_rotate(g.split_heads(q, heads)?, angles)?;
    let kh = g.rope_rotate(g.split_heads(k, heads)?, angles)?;
    let vh = g.split_heads(v, heads)?;
    let att = scaled_dot_attention(g, qh, kh, vh)?;
    let att = g.merge_heads(att, heads)?;

    let out = g.matmul(att, wo)?;
    match deltas {
        None => Ok(out),
        Some(d) => g.add(out, apply_delta(g, att, &d.o)?),
    }
}

/// Position-wise FFN with optional low-rank deltas on both projections.
pub(crate) fn ffn_tokens<E: Element>(
    g: &Graph<E>,
    h: Var,
    bb: &BoundBlock,
    deltas: Option<(&DeltaVars, &DeltaVars)>,
) -> Result<Var> {
    let mut a = g.matmul(h, bb.ffn_w1)?;
    if let Some((d0, _)) = deltas {
        a = g.add(a, apply_delta(g, h, d0)?)?;
    }
    a = g.add_bias(a, bb.ffn_b1)?;
    let a = g.silu(a)?;
    let mut out = g.matmul(a, bb.ffn_w2)?;
    if let Some((_, d2)) = deltas {
        out = g.add(out, apply_delta(g, a, d2)?)?;
    }
    g.add_bias(out, bb.ffn_b2)
}

/// Modulated norm: `rms_norm(x) * (1 + scale) + shift`, per stream row.
pub(crate) fn modulated_norm<E: Element>(
    g: &Graph<E>,
    x: Var,
    gain: Var,
    scale1p: Var,
    shift: Var,
) -> Result<Var> {
    let h = g.rms_norm(x, gain)?;
    let h = g.scale_rows(h, scale1p)?;
    g.add_rows(h, shift)
}

/// One pre-norm DiT block: gated attention then gated FFN residuals.
pub(crate) fn base_block_forward<E: Element>(
    g: &Graph<E>,
    x: Var,
    bb: &BoundBlock,
    mods: &BlockMods,
    angles: &Tensor<E>,
    heads: usize,
) -> Result<Var> {
    let n = g.shape(x)[1];
    if angles.shape()[0] != n {
        return Err(Error::invalid(
            "block_forward",
            format!("{} positions for {} tokens", angles.shape()[0], n),
        ));
    }
    let h = modulated_norm(g, x, bb.norm1_gain, mods.scale1p_a, mods.shift_a)?;
    let attn = attention_tokens(g, h, bb.wq, bb.wk, bb.wv, bb.wo, None, angles, heads)?;
    let x = g.add(x, g.scale_rows(attn, mods.gate_a)?)?;

    let h2 = modulated_norm(g, x, bb.norm2_gain, mods.scale1p_f, mods.shift_f)?;
    let f = ffn_tokens(g, h2, bb, None)?;
    g.add(x, g.scale_rows(f, mods.gate_f)?)
}
