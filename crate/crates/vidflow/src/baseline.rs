//! Direct-tuning ablation baseline.
//!
//! Instead of the frozen-backbone/spatial-branch mechanism, this variant
//! concatenates the condition tokens with the noisy tokens along the
//! *sequence* axis, lets them interact inside every 3D attention layer, and
//! fine-tunes the attention q,k,v,o projections and both FFN weights of every
//! block directly on single-frame image pairs. One timestep embedding covers
//! the whole 2N-token sequence. The head reads the noisy half only.
//!
//! Condition tokens are placed at their native lattice positions shifted by
//! `gw` on the width axis, matching the width-concatenation convention of the
//! spatial branches so the two halves never collide in position space.

use crate::backbone::{
    base_block_forward, lattice_positions, rope3d_angles, Backbone, Binder, Geometry,
    PositionTriple,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Element;

/// Positions for the sequence-concatenated `[Z; C_V]` token layout.
pub fn concat_positions(geom: Geometry) -> Vec<PositionTriple> {
    let mut pos = lattice_positions(geom);
    pos.extend(lattice_positions(geom).into_iter().map(|p| PositionTriple {
        t: p.t,
        h: p.h,
        w: p.w + geom.gw,
    }));
    pos
}

/// Graph-level forward for the direct-tuning baseline.
///
/// `z` and `c` are raw patch-pixel tokens `[B, N, p*p*3]`; returns the
/// velocity prediction for the noisy half, `[B, N, p*p*3]`.
pub fn direct_velocity_graph<E: Element>(
    g: &Graph<E>,
    binder: &mut Binder,
    backbone: &Backbone<E>,
    z: Var,
    c: Var,
    geom: Geometry,
    rows: &[(f64, usize)],
) -> Result<Var> {
    let cfg = &backbone.cfg;
    let zs = g.shape(z);
    if zs != g.shape(c) {
        return Err(Error::ShapeMismatch {
            op: "direct_forward",
            lhs: zs,
            rhs: g.shape(c),
        });
    }
    if zs.len() != 3 || zs[1] != geom.n() || zs[2] != cfg.patch_dim() {
        return Err(Error::invalid(
            "direct_forward",
            format!("tokens {zs:?} inconsistent with geometry {geom:?}"),
        ));
    }
    let b = zs[0];
    if rows.len() != b {
        return Err(Error::invalid(
            "direct_forward",
            format!("{} (t, task) rows for batch {}", rows.len(), b),
        ));
    }

    let bound = backbone.bind(g, binder);
    let conds = backbone.row_conds(
        &rows.iter().map(|&(t, task)| (t, Some(task))).collect::<Vec<_>>(),
    )?;
    let angles = rope3d_angles::<E>(&concat_positions(geom), cfg.head_dim())?;

    let zc = g.concat(&[z, c], 1)?; // sequence axis: 2N tokens per sample
    let mut x = g.matmul(zc, bound.embed_w)?;
    x = g.add_bias(x, bound.embed_b)?;
    for (i, bb) in bound.blocks.iter().enumerate() {
        let mods = backbone.block_mods(g, i, &conds)?;
        x = base_block_forward(g, x, bb, &mods, &angles, cfg.heads)?;
    }
    let xz = g.slice(x, 1, 0, geom.n())?;
    backbone.head_graph(g, xz, &bound, &conds)
}
