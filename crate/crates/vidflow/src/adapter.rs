//! Paired positive/negative 2D spatial-attention branches over a frozen
//! 3D-attention backbone, with dual-path routing of the noisy stream and the
//! clean condition stream.
//!
//! Per block, the attention residual becomes
//!
//! ```text
//! Attn3D(X) + SpaPos(X') - SpaNeg(X')
//! ```
//!
//! where both spatial branches share the block's frozen attention weights and
//! differ only by independent low-rank deltas. The up matrices start at zero,
//! so the two branches are the same function at init and the combined
//! spatial term cancels exactly: the adapted model reproduces the base model
//! bit for bit until training moves the deltas apart.
//!
//! The fine-tuning set is exactly the pos/neg q,k,v,o deltas plus one delta
//! pair on the block FFN (`ffn.0`, `ffn.2`); everything else stays frozen.
//!
//! Routing: the 3D attention treats `[Z; C_V]` as independent samples along
//! the batch dimension, so the noisy stream never sees the condition there.
//! The spatial branches flatten both streams into per-frame rows and attend
//! over the width-axis concatenation, with w-axis positional indices covering
//! `[0, 2w)` and every temporal index held at 0. The noisy stream is
//! modulated by the current timestep; the condition stream is always
//! modulated by the embedding of t = 0 (a clean input), with no task mixing.

use std::path::Path;

use crate::backbone::{
    attention_tokens, ffn_tokens, modulated_norm, rope3d_angles, Backbone, Binder, BranchDeltas,
    DeltaVars, Geometry, PositionTriple, TimestepEmbedding, TokenGrid,
};
use crate::checkpoint::{read_vfck, write_vfck, CkptEntry, EntryKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::Param;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Default low-rank adapter rank.
pub const DEFAULT_RANK: usize = 32;
/// Scale on the low-rank product. With Adam the per-step parameter movement
/// is rate-limited, so this scale sets how fast the adapted function can
/// move at a fixed learning rate; 8 converges on the desk-scale backbone
/// within the paper-scale epoch budget where 1 cannot.
pub const LORA_SCALING: f64 = 8.0;
/// Init std of the down projections; up projections start at exactly zero.
pub const LORA_DOWN_STD: f64 = 0.02;

/// One low-rank weight delta: `scaling * up @ down`, up zero-initialized.
pub struct LoraDelta<E> {
    pub down: Param<E>,
    pub up: Param<E>,
    pub rank: usize,
    pub scaling: f64,
}

impl<E: Element> LoraDelta<E> {
    fn init(
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::invalid(
                "init_adapter",
                format!("rank {rank} invalid for {d_in} -> {d_out} projection"),
            ));
        }
        Ok(LoraDelta {
            down: Param::trainable(
                format!("{prefix}.down"),
                Tensor::randn(&[rank, d_in], LORA_DOWN_STD, rng),
            ),
            up: Param::trainable(format!("{prefix}.up"), Tensor::zeros(&[d_out, rank])),
            rank,
            scaling: LORA_SCALING,
        })
    }

    pub(crate) fn bind(&self, g: &Graph<E>, binder: &mut Binder) -> DeltaVars {
        DeltaVars {
            down: binder.leaf(g, &self.down),
            up: binder.leaf(g, &self.up),
            scale: self.scaling,
        }
    }

    /// True when the delta is the zero map (up still all-zero).
    pub fn is_zero_map(&self) -> bool {
        self.up.value.data().iter().all(|v| *v == E::zero())
    }
}

/// Low-rank deltas for the four projections of one spatial branch.
pub struct BranchLora<E> {
    pub q: LoraDelta<E>,
    pub k: LoraDelta<E>,
    pub v: LoraDelta<E>,
    pub o: LoraDelta<E>,
}

impl<E: Element> BranchLora<E> {
    fn init(prefix: &str, d: usize, rank: usize, rng: &mut Rng) -> Result<Self> {
        Ok(BranchLora {
            q: LoraDelta::init(&format!("{prefix}.q"), d, d, rank, rng)?,
            k: LoraDelta::init(&format!("{prefix}.k"), d, d, rank, rng)?,
            v: LoraDelta::init(&format!("{prefix}.v"), d, d, rank, rng)?,
            o: LoraDelta::init(&format!("{prefix}.o"), d, d, rank, rng)?,
        })
    }

    fn bind(&self, g: &Graph<E>, binder: &mut Binder) -> BranchDeltas {
        BranchDeltas {
            q: self.q.bind(g, binder),
            k: self.k.bind(g, binder),
            v: self.v.bind(g, binder),
            o: self.o.bind(g, binder),
        }
    }

    fn deltas(&self) -> [&LoraDelta<E>; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    fn deltas_mut(&mut self) -> [&mut LoraDelta<E>; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

/// Adapter state for one block: two spatial branches sharing the block's
/// frozen attention weights, plus the FFN delta pair.
pub struct AdapterBlock<E> {
    pub pos: BranchLora<E>,
    pub neg: BranchLora<E>,
    pub ffn0: LoraDelta<E>,
    pub ffn2: LoraDelta<E>,
}

pub struct Adapter<E> {
    pub rank: usize,
    pub blocks: Vec<AdapterBlock<E>>,
}

/// Which spatial branch to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSign {
    Pos,
    Neg,
}

impl<E: Element> Adapter<E> {
    /// Install zero-cancelling spatial branches over a frozen backbone.
    ///
    /// The branches share the base attention weights (a single frozen copy;
    /// since only the low-rank deltas train, the two copies of the paper's
    /// construction can never diverge, so sharing is exactly equivalent and
    /// makes the init cancellation structural). All down matrices draw from
    /// a small-variance normal, all up matrices start at zero, so the
    /// adapted model is functionally identical to the base model.
    pub fn init(base: &Backbone<E>, rank: usize, rng: &mut Rng) -> Result<Self> {
        let d = base.cfg.dim;
        let hidden = base.cfg.ffn_hidden();
        let mut blocks = Vec::with_capacity(base.cfg.blocks);
        for i in 0..base.cfg.blocks {
            blocks.push(AdapterBlock {
                pos: BranchLora::init(&format!("blocks.{i}.spa_pos"), d, rank, rng)?,
                neg: BranchLora::init(&format!("blocks.{i}.spa_neg"), d, rank, rng)?,
                ffn0: LoraDelta::init(&format!("blocks.{i}.ffn.0.delta"), d, hidden, rank, rng)?,
                ffn2: LoraDelta::init(&format!("blocks.{i}.ffn.2.delta"), hidden, d, rank, rng)?,
            });
        }
        Ok(Adapter { rank, blocks })
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for branch in [&b.pos, &b.neg] {
                for delta in branch.deltas() {
                    out.push(&delta.down);
                    out.push(&delta.up);
                }
            }
            for delta in [&b.ffn0, &b.ffn2] {
                out.push(&delta.down);
                out.push(&delta.up);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            for branch in [&mut b.pos, &mut b.neg] {
                for delta in branch.deltas_mut() {
                    let LoraDelta { down, up, .. } = delta;
                    out.push(down);
                    out.push(up);
                }
            }
            for delta in [&mut b.ffn0, &mut b.ffn2] {
                let LoraDelta { down, up, .. } = delta;
                out.push(down);
                out.push(up);
            }
        }
        out
    }

    /// Total trainable element count: sum of `r * (d_in + d_out)` per delta.
    pub fn trainable_elements(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

/// The trainable set of a model: every `trainable == true` parameter, in a
/// fixed traversal order. For the adapted model this is exactly the pos/neg
/// q,k,v,o deltas and the ffn.0/ffn.2 deltas of every block.
pub fn trainable_parameters<'a, E: Element>(
    backbone: &'a Backbone<E>,
    adapter: Option<&'a Adapter<E>>,
) -> Vec<&'a Param<E>> {
    let mut out: Vec<&Param<E>> = backbone
        .params()
        .into_iter()
        .filter(|p| p.trainable)
        .collect();
    if let Some(a) = adapter {
        out.extend(a.params().into_iter().filter(|p| p.trainable));
    }
    out
}

// ---------------------------------------------------------------------------
// Dual-path state
// ---------------------------------------------------------------------------

/// Noisy stream, clean condition stream, and their (separate) timestep
/// embeddings. The condition stream is always embedded at t = 0.
pub struct DualPathState<E> {
    pub z_stream: TokenGrid<E>,
    pub c_stream: TokenGrid<E>,
    pub z_temb: TimestepEmbedding<E>,
    pub c_temb: TimestepEmbedding<E>,
}

impl<E: Element> DualPathState<E> {
    pub fn new(
        backbone: &Backbone<E>,
        z_stream: TokenGrid<E>,
        c_stream: TokenGrid<E>,
        t: f64,
    ) -> Result<Self> {
        if z_stream.tokens.shape() != c_stream.tokens.shape() || z_stream.geom != c_stream.geom {
            return Err(Error::ShapeMismatch {
                op: "dual_path_state",
                lhs: z_stream.tokens.shape().to_vec(),
                rhs: c_stream.tokens.shape().to_vec(),
            });
        }
        Ok(DualPathState {
            z_temb: backbone.timestep_embed(t)?,
            c_temb: backbone.timestep_embed(0.0)?,
            z_stream,
            c_stream,
        })
    }
}

// ---------------------------------------------------------------------------
// Spatial concatenation scheme
// ---------------------------------------------------------------------------

/// Positions for one concatenated per-frame row: noisy-stream tokens carry
/// `(t=0, h, w in [0, gw))`, condition tokens `(t=0, h, w in [gw, 2*gw))`.
/// h indices repeat unchanged across the halves; all temporal indices are 0.
pub fn spatial_positions(gh: usize, gw: usize) -> Vec<PositionTriple> {
    let mut out = Vec::with_capacity(2 * gh * gw);
    for h in 0..gh {
        for w in 0..gw {
            out.push(PositionTriple { t: 0, h, w });
        }
    }
    for h in 0..gh {
        for w in 0..gw {
            out.push(PositionTriple { t: 0, h, w: w + gw });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Adapted forward
// ---------------------------------------------------------------------------

pub(crate) struct BoundAdapterBlock {
    pub pos: BranchDeltas,
    pub neg: BranchDeltas,
    pub ffn0: DeltaVars,
    pub ffn2: DeltaVars,
}

impl<E: Element> Adapter<E> {
    pub(crate) fn bind(&self, g: &Graph<E>, binder: &mut Binder) -> Vec<BoundAdapterBlock> {
        self.blocks
            .iter()
            .map(|b| BoundAdapterBlock {
                pos: b.pos.bind(g, binder),
                neg: b.neg.bind(g, binder),
                ffn0: b.ffn0.bind(g, binder),
                ffn2: b.ffn2.bind(g, binder),
            })
            .collect()
    }
}

/// Everything a caller may want from one adapted forward pass.
pub struct AdaptedForward<E> {
    /// Velocity prediction for the noisy stream, `[B, N, p*p*3]`.
    pub velocity: Var,
    /// The raw modulation input rows used for the condition stream
    /// (instrumentation for the timestep-separation bit check).
    pub c_mod_input: Tensor<E>,
}

/// Graph-level dual-path forward through the adapted model.
///
/// `z` and `c` are raw patch-pixel token tensors `[B, N, p*p*3]`; `rows`
/// gives one `(t, task)` pair per batch element. The two streams run through
/// the 3D attention as separate batch samples and interact only inside the
/// spatial branches; the final head is applied to the noisy stream only.
pub fn adapted_velocity_graph<E: Element>(
    g: &Graph<E>,
    binder: &mut Binder,
    backbone: &Backbone<E>,
    adapter: &Adapter<E>,
    z: Var,
    c: Var,
    geom: Geometry,
    rows: &[(f64, usize)],
) -> Result<AdaptedForward<E>> {
    let cfg = &backbone.cfg;
    let zs = g.shape(z);
    if zs != g.shape(c) {
        return Err(Error::ShapeMismatch {
            op: "adapted_forward",
            lhs: zs,
            rhs: g.shape(c),
        });
    }
    if zs.len() != 3 || zs[1] != geom.n() || zs[2] != cfg.patch_dim() {
        return Err(Error::invalid(
            "adapted_forward",
            format!("tokens {zs:?} inconsistent with geometry {geom:?}"),
        ));
    }
    let b = zs[0];
    if rows.len() != b {
        return Err(Error::invalid(
            "adapted_forward",
            format!("{} (t, task) rows for batch {}", rows.len(), b),
        ));
    }
    if adapter.blocks.len() != cfg.blocks {
        return Err(Error::invalid(
            "adapted_forward",
            format!("adapter has {} blocks, backbone {}", adapter.blocks.len(), cfg.blocks),
        ));
    }

    let bound = backbone.bind(g, binder);
    let bound_adapter = adapter.bind(g, binder);

    // Stream rows: z rows get (t, task), c rows get (0, no task) -- the
    // condition stream's modulation input is timestep_embed(0) exactly.
    let mut cond_rows: Vec<(f64, Option<usize>)> =
        rows.iter().map(|&(t, task)| (t, Some(task))).collect();
    cond_rows.extend(std::iter::repeat((0.0, None)).take(b));
    let conds = backbone.row_conds(&cond_rows)?;
    let c_mod_input = crate::backbone::raw_rows(&conds.temb, b, b)?;

    let angles_3d = rope3d_angles::<E>(&crate::backbone::lattice_positions(geom), cfg.head_dim())?;
    let angles_spa = rope3d_angles::<E>(&spatial_positions(geom.gh, geom.gw), cfg.head_dim())?;

    // Batch-dimension routing: [Z; C_V] as independent samples.
    let zc = g.concat(&[z, c], 0)?;
    let mut x = g.matmul(zc, bound.embed_w)?;
    x = g.add_bias(x, bound.embed_b)?;

    for (i, bb) in bound.blocks.iter().enumerate() {
        let mods = backbone.block_mods(g, i, &conds)?;
        let ab = &bound_adapter[i];

        let h = modulated_norm(g, x, bb.norm1_gain, mods.scale1p_a, mods.shift_a)?;
        let attn3d = attention_tokens(g, h, bb.wq, bb.wk, bb.wv, bb.wo, None, &angles_3d, cfg.heads)?;
        let spa = spatial_pair_residual(g, backbone, h, bb, ab, geom, &angles_spa, b)?;
        let total = g.add(attn3d, spa)?;
        x = g.add(x, g.scale_rows(total, mods.gate_a)?)?;

        let h2 = modulated_norm(g, x, bb.norm2_gain, mods.scale1p_f, mods.shift_f)?;
        let f = ffn_tokens(g, h2, bb, Some((&ab.ffn0, &ab.ffn2)))?;
        x = g.add(x, g.scale_rows(f, mods.gate_f)?)?;
    }

    // Head on the noisy stream only; the condition stream's output is dropped.
    let xz = g.slice(x, 0, 0, b)?;
    let conds_z = backbone.row_conds(&cond_rows[..b])?;
    let velocity = backbone.head_graph(g, xz, &bound, &conds_z)?;
    Ok(AdaptedForward {
        velocity,
        c_mod_input,
    })
}

/// SpaPos(X') - SpaNeg(X') over per-frame width-axis concatenations,
/// reassembled to the `[2B, N, d]` stream layout.
fn spatial_pair_residual<E: Element>(
    g: &Graph<E>,
    backbone: &Backbone<E>,
    h: Var,
    bb: &crate::backbone::BoundBlock,
    ab: &BoundAdapterBlock,
    geom: Geometry,
    angles_spa: &Tensor<E>,
    b: usize,
) -> Result<Var> {
    let cfg = &backbone.cfg;
    let d = cfg.dim;
    let hw = geom.gh * geom.gw;
    let frames = b * geom.f;

    let hz = g.slice(h, 0, 0, b)?;
    let hc = g.slice(h, 0, b, b)?;
    let hz = g.reshape(hz, vec![frames, hw, d])?;
    let hc = g.reshape(hc, vec![frames, hw, d])?;
    let cat = g.concat(&[hz, hc], 1)?;

    let pos = attention_tokens(
        g, cat, bb.wq, bb.wk, bb.wv, bb.wo, Some(&ab.pos), angles_spa, cfg.heads,
    )?;
    let neg = attention_tokens(
        g, cat, bb.wq, bb.wk, bb.wv, bb.wo, Some(&ab.neg), angles_spa, cfg.heads,
    )?;
    let diff = g.sub(pos, neg)?;

    let dz = g.slice(diff, 1, 0, hw)?;
    let dc = g.slice(diff, 1, hw, hw)?;
    let dz = g.reshape(dz, vec![b, geom.n(), d])?;
    let dc = g.reshape(dc, vec![b, geom.n(), d])?;
    g.concat(&[dz, dc], 0)
}

/// One spatial branch evaluated in isolation: per-frame rows of the two
/// streams are concatenated along the width axis, attended with the frozen
/// copy plus the signed branch's deltas, and split back into halves.
pub fn spatial_branch_forward<E: Element>(
    backbone: &Backbone<E>,
    adapter: &Adapter<E>,
    block: usize,
    sign: BranchSign,
    z_frames: &Tensor<E>,
    c_frames: &Tensor<E>,
    gh: usize,
    gw: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let hw = gh * gw;
    let zs = z_frames.shape();
    if zs != c_frames.shape() || zs.len() != 3 || zs[1] != hw || zs[2] != backbone.cfg.dim {
        return Err(Error::invalid(
            "spatial_branch_forward",
            format!(
                "frame rows {:?} / {:?} inconsistent with {}x{} frames of width {}",
                zs,
                c_frames.shape(),
                gh,
                gw,
                backbone.cfg.dim
            ),
        ));
    }
    let g = Graph::new();
    let mut binder = Binder::default();
    let bb = &backbone.blocks[block];
    let wq = binder.leaf(&g, &bb.wq);
    let wk = binder.leaf(&g, &bb.wk);
    let wv = binder.leaf(&g, &bb.wv);
    let wo = binder.leaf(&g, &bb.wo);
    let branch = match sign {
        BranchSign::Pos => &adapter.blocks[block].pos,
        BranchSign::Neg => &adapter.blocks[block].neg,
    };
    let deltas = branch.bind(&g, &mut binder);
    let angles = rope3d_angles::<E>(&spatial_positions(gh, gw), backbone.cfg.head_dim())?;

    let z = g.constant(z_frames.clone());
    let c = g.constant(c_frames.clone());
    let cat = g.concat(&[z, c], 1)?;
    let out = attention_tokens(&g, cat, wq, wk, wv, wo, Some(&deltas), &angles, backbone.cfg.heads)?;
    let z_out = g.slice(out, 1, 0, hw)?;
    let c_out = g.slice(out, 1, hw, hw)?;
    Ok((g.value(z_out), g.value(c_out)))
}

/// Whole-pass convenience wrapper over [`adapted_velocity_graph`]: runs one
/// dual-path forward and returns the raw velocity tokens for the noisy
/// stream. One shared `(t, task)` for the whole batch.
pub fn adapted_forward_velocity<E: Element>(
    backbone: &Backbone<E>,
    adapter: &Adapter<E>,
    state: &DualPathState<E>,
    task: usize,
) -> Result<Tensor<E>> {
    let g = Graph::new();
    let mut binder = Binder::default();
    let z = g.constant(state.z_stream.tokens.clone());
    let c = g.constant(state.c_stream.tokens.clone());
    let b = state.z_stream.tokens.shape()[0];
    let rows: Vec<(f64, usize)> = vec![(state.z_temb.t, task); b];
    let fwd = adapted_velocity_graph(
        &g,
        &mut binder,
        backbone,
        adapter,
        z,
        c,
        state.z_stream.geom,
        &rows,
    )?;
    Ok(g.value(fwd.velocity))
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Save the full adapted model: backbone entries, an explicit frozen copy of
/// each block's attention weights (the weights shared by both spatial
/// branches), and the trainable deltas.
pub fn save_adapted<E: Element>(
    backbone: &Backbone<E>,
    adapter: &Adapter<E>,
    path: &Path,
) -> Result<()> {
    let mut entries: Vec<CkptEntry> = backbone
        .params()
        .iter()
        .map(|p| CkptEntry::new(&p.name, EntryKind::Base, p.trainable, &p.value.cast::<f32>()))
        .collect();
    for (i, b) in backbone.blocks.iter().enumerate() {
        for (suffix, p) in [("q", &b.wq), ("k", &b.wk), ("v", &b.wv), ("o", &b.wo)] {
            entries.push(CkptEntry::new(
                format!("blocks.{i}.spa_shared.{suffix}.weight"),
                EntryKind::FrozenCopy,
                false,
                &p.value.cast::<f32>(),
            ));
        }
    }
    entries.extend(adapter.params().iter().map(|p| {
        CkptEntry::new(&p.name, EntryKind::Delta, p.trainable, &p.value.cast::<f32>())
    }));
    write_vfck(path, &entries)
}

/// Load a full adapted model saved by [`save_adapted`]. The frozen-copy
/// entries are verified bit-identical to the base attention weights; a
/// checkpoint where they diverged is rejected.
pub fn load_adapted<E: Element>(
    backbone: &mut Backbone<E>,
    adapter: &mut Adapter<E>,
    path: &Path,
) -> Result<()> {
    let entries = read_vfck(path)?;
    let mut by_name: std::collections::BTreeMap<String, CkptEntry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();

    let mut fetch = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let e = by_name
            .remove(name)
            .ok_or_else(|| Error::invalid("load_adapted", format!("missing entry '{name}'")))?;
        if e.shape != shape {
            return Err(Error::invalid(
                "load_adapted",
                format!("entry '{name}': shape {:?} vs expected {:?}", e.shape, shape),
            ));
        }
        e.tensor()
    };

    for p in backbone.params_mut() {
        p.value = fetch(&p.name.clone(), p.value.shape())?.cast::<E>();
    }
    for p in adapter.params_mut() {
        p.value = fetch(&p.name.clone(), p.value.shape())?.cast::<E>();
    }
    for (i, b) in backbone.blocks.iter().enumerate() {
        for (suffix, p) in [("q", &b.wq), ("k", &b.wk), ("v", &b.wv), ("o", &b.wo)] {
            let name = format!("blocks.{i}.spa_shared.{suffix}.weight");
            let copy = fetch(&name, p.value.shape())?.cast::<E>();
            if !copy.bit_eq(&p.value) {
                return Err(Error::invalid(
                    "load_adapted",
                    format!("frozen copy '{name}' diverged from the base attention weights"),
                ));
            }
        }
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::invalid(
            "load_adapted",
            format!("unexpected entry '{name}'"),
        ));
    }
    Ok(())
}

/// Save only the trainable deltas (per-epoch training checkpoints).
pub fn save_adapter_deltas<E: Element>(adapter: &Adapter<E>, path: &Path) -> Result<()> {
    let entries: Vec<CkptEntry> = adapter
        .params()
        .iter()
        .map(|p| CkptEntry::new(&p.name, EntryKind::Delta, p.trainable, &p.value.cast::<f32>()))
        .collect();
    write_vfck(path, &entries)
}

/// Load deltas saved by [`save_adapter_deltas`] into an existing adapter.
pub fn load_adapter_deltas<E: Element>(adapter: &mut Adapter<E>, path: &Path) -> Result<()> {
    let entries = read_vfck(path)?;
    let mut by_name: std::collections::BTreeMap<String, CkptEntry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    for p in adapter.params_mut() {
        let e = by_name
            .remove(&p.name)
            .ok_or_else(|| Error::invalid("load_adapter", format!("missing entry '{}'", p.name)))?;
        if e.shape != p.value.shape() {
            return Err(Error::invalid(
                "load_adapter",
                format!("entry '{}': shape {:?} vs expected {:?}", p.name, e.shape, p.value.shape()),
            ));
        }
        p.value = e.tensor()?.cast::<E>();
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::invalid(
            "load_adapter",
            format!("unexpected entry '{name}'"),
        ));
    }
    Ok(())
}
