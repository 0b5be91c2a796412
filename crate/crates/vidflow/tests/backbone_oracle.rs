//! Straight-line oracle for the backbone forward pass.
//!
//! Everything here is recomputed with plain nested loops at f64, independent
//! of the graph/kernel code paths, and compared against the model's output.

use vidflow::backbone::{
    lattice_positions, patch_join, patch_split, rope3d_angles, Backbone, Geometry, ModelConfig,
    PositionTriple, TokenGrid,
};
use vidflow::rng::Rng;
use vidflow::tensor::Tensor;
use vidflow::video::Video;

// ---------------------------------------------------------------------------
// naive math helpers (loops only)
// ---------------------------------------------------------------------------

fn nv_linear(x: &[f64], w: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), din);
    let mut out = vec![0.0; dout];
    for i in 0..din {
        for j in 0..dout {
            out[j] += x[i] * w.data()[i * dout + j];
        }
    }
    if let Some(b) = bias {
        for j in 0..dout {
            out[j] += b.data()[j];
        }
    }
    out
}

fn nv_silu(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = *v / (1.0 + (-*v).exp());
    }
}

fn nv_rms(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let ss: f64 = x.iter().map(|v| v * v).sum();
    let r = 1.0 / (ss / d + 1e-6).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * r * g).collect()
}

fn nv_softmax(x: &mut [f64]) {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

fn nv_sinusoid(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let omega = if half > 1 {
            1000f64.powf(i as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out[i] = (t * omega).cos();
        out[half + i] = (t * omega).sin();
    }
    out
}

/// Independent rotary-angle computation from the stated rule: ceil-to-even
/// thirds of the head dim for (t, h), remainder to w, base 10000.
fn nv_angles(pos: &PositionTriple, dh: usize) -> Vec<f64> {
    let third = (dh + 2) / 3;
    let ch = third + third % 2;
    let (pt, ph) = (ch / 2, ch / 2);
    let pw = (dh - 2 * ch) / 2;
    let mut out = Vec::new();
    for j in 0..pt {
        out.push(pos.t as f64 * 10000f64.powf(-(j as f64) / pt as f64));
    }
    for j in 0..ph {
        out.push(pos.h as f64 * 10000f64.powf(-(j as f64) / ph as f64));
    }
    for j in 0..pw {
        out.push(pos.w as f64 * 10000f64.powf(-(j as f64) / pw as f64));
    }
    out
}

fn nv_rope(x: &mut [f64], angles: &[f64]) {
    for (i, &a) in angles.iter().enumerate() {
        let (c, s) = (a.cos(), a.sin());
        let (p, q) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = p * c - q * s;
        x[2 * i + 1] = p * s + q * c;
    }
}

/// Full multi-head attention over `tokens` (each a d-vector), naive loops.
fn nv_attention(
    tokens: &[Vec<f64>],
    positions: &[PositionTriple],
    bb: &vidflow::backbone::BlockParams<f64>,
    heads: usize,
) -> Vec<Vec<f64>> {
    let n = tokens.len();
    let d = tokens[0].len();
    let dh = d / heads;
    let q: Vec<Vec<f64>> = tokens.iter().map(|x| nv_linear(x, &bb.wq.value, None)).collect();
    let k: Vec<Vec<f64>> = tokens.iter().map(|x| nv_linear(x, &bb.wk.value, None)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|x| nv_linear(x, &bb.wv.value, None)).collect();

    let mut merged = vec![vec![0.0; d]; n];
    for h in 0..heads {
        // rotate per head
        let mut qh: Vec<Vec<f64>> = q.iter().map(|x| x[h * dh..(h + 1) * dh].to_vec()).collect();
        let mut kh: Vec<Vec<f64>> = k.iter().map(|x| x[h * dh..(h + 1) * dh].to_vec()).collect();
        for i in 0..n {
            let ang = nv_angles(&positions[i], dh);
            nv_rope(&mut qh[i], &ang);
            nv_rope(&mut kh[i], &ang);
        }
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let dot: f64 = qh[i].iter().zip(&kh[j]).map(|(a, b)| a * b).sum();
                logits[j] = dot / (dh as f64).sqrt();
            }
            nv_softmax(&mut logits);
            for j in 0..n {
                for c in 0..dh {
                    merged[i][h * dh + c] += logits[j] * v[j][h * dh + c];
                }
            }
        }
    }
    merged
        .iter()
        .map(|x| nv_linear(x, &bb.wo.value, None))
        .collect()
}

/// Straight-line forward of the whole backbone for batch size 1.
fn nv_forward(model: &Backbone<f64>, z: &[Vec<f64>], geom: Geometry, t: f64, task: usize) -> Vec<Vec<f64>> {
    let cfg = &model.cfg;
    let d = cfg.dim;
    let positions = lattice_positions(geom);

    // timestep + task conditioning
    let mut feats = nv_sinusoid(t, d);
    for (f, e) in feats
        .iter_mut()
        .zip(&model.task_table.value.data()[task * d..(task + 1) * d])
    {
        *f += e;
    }
    let mut h1 = nv_linear(&feats, &model.temb_w1.value, Some(&model.temb_b1.value));
    nv_silu(&mut h1);
    let temb = nv_linear(&h1, &model.temb_w2.value, Some(&model.temb_b2.value));
    let mut silu_temb = temb.clone();
    nv_silu(&mut silu_temb);

    // embed
    let mut x: Vec<Vec<f64>> = z
        .iter()
        .map(|tok| nv_linear(tok, &model.patch_embed_w.value, Some(&model.patch_embed_b.value)))
        .collect();

    for bb in &model.blocks {
        let m = nv_linear(&silu_temb, &bb.mod_w.value, Some(&bb.mod_b.value));
        let seg = |i: usize| &m[i * d..(i + 1) * d];
        let (shift_a, scale_a, gate_a) = (seg(0).to_vec(), seg(1).to_vec(), seg(2).to_vec());
        let (shift_f, scale_f, gate_f) = (seg(3).to_vec(), seg(4).to_vec(), seg(5).to_vec());

        let hmod: Vec<Vec<f64>> = x
            .iter()
            .map(|tok| {
                let n = nv_rms(tok, bb.norm1_gain.value.data());
                n.iter()
                    .enumerate()
                    .map(|(i, v)| v * (1.0 + scale_a[i]) + shift_a[i])
                    .collect()
            })
            .collect();
        let attn = nv_attention(&hmod, &positions, bb, cfg.heads);
        for (xi, ai) in x.iter_mut().zip(&attn) {
            for i in 0..d {
                xi[i] += gate_a[i] * ai[i];
            }
        }

        let ffn: Vec<Vec<f64>> = x
            .iter()
            .map(|tok| {
                let n = nv_rms(tok, bb.norm2_gain.value.data());
                let moded: Vec<f64> = n
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (1.0 + scale_f[i]) + shift_f[i])
                    .collect();
                let mut a = nv_linear(&moded, &bb.ffn_w1.value, Some(&bb.ffn_b1.value));
                nv_silu(&mut a);
                nv_linear(&a, &bb.ffn_w2.value, Some(&bb.ffn_b2.value))
            })
            .collect();
        for (xi, fi) in x.iter_mut().zip(&ffn) {
            for i in 0..d {
                xi[i] += gate_f[i] * fi[i];
            }
        }
    }

    // final modulation + head
    let fm = nv_linear(
        &silu_temb,
        &model.final_mod_w.value,
        Some(&model.final_mod_b.value),
    );
    x.iter()
        .map(|tok| {
            let n = nv_rms(tok, model.final_gain.value.data());
            let moded: Vec<f64> = n
                .iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + fm[i]) + fm[d + i])
                .collect();
            nv_linear(&moded, &model.head_w.value, Some(&model.head_b.value))
        })
        .collect()
}

fn micro_backbone(blocks: usize, dim: usize, heads: usize, seed: u64) -> Backbone<f64> {
    let cfg = ModelConfig {
        blocks,
        dim,
        heads,
        patch: 2,
        task_vocab: 4,
        max_frames: 16,
    };
    Backbone::init(cfg, &mut Rng::seed(seed)).unwrap()
}

fn random_tokens(geom: Geometry, pd: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(&[1, geom.n(), pd], 0.7, rng)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[test]
fn single_block_forward_matches_straight_line_oracle() {
    let model = micro_backbone(1, 16, 1, 3);
    let geom = Geometry { f: 1, gh: 2, gw: 1 };
    let mut rng = Rng::seed(5);
    let z = random_tokens(geom, model.cfg.patch_dim(), &mut rng);
    let got = model.velocity_tokens(&z, geom, 0.4, 1).unwrap();

    let z_rows: Vec<Vec<f64>> = z
        .data()
        .chunks_exact(model.cfg.patch_dim())
        .map(|r| r.to_vec())
        .collect();
    let want = nv_forward(&model, &z_rows, geom, 0.4, 1);
    let mut max = 0.0f64;
    for (g, w) in got.data().chunks_exact(model.cfg.patch_dim()).zip(&want) {
        for (a, b) in g.iter().zip(w) {
            max = max.max((a - b).abs());
        }
    }
    assert!(max <= 1e-5, "max abs diff {max}");
}

#[test]
fn two_block_multihead_forward_matches_composed_oracle() {
    // multi-frame, multi-head configuration against the composed oracle
    let model = micro_backbone(2, 32, 2, 11);
    let geom = Geometry { f: 2, gh: 2, gw: 2 };
    let mut rng = Rng::seed(13);
    let z = random_tokens(geom, model.cfg.patch_dim(), &mut rng);
    let got = model.velocity_tokens(&z, geom, 0.77, 2).unwrap();

    let z_rows: Vec<Vec<f64>> = z
        .data()
        .chunks_exact(model.cfg.patch_dim())
        .map(|r| r.to_vec())
        .collect();
    let want = nv_forward(&model, &z_rows, geom, 0.77, 2);
    let mut max = 0.0f64;
    for (g, w) in got.data().chunks_exact(model.cfg.patch_dim()).zip(&want) {
        for (a, b) in g.iter().zip(w) {
            max = max.max((a - b).abs());
        }
    }
    assert!(max <= 1e-4, "max abs diff {max}");
}

#[test]
fn zero_gates_make_blocks_the_identity() {
    let mut model = micro_backbone(2, 16, 1, 7);
    for b in &mut model.blocks {
        b.mod_w.value = Tensor::zeros(b.mod_w.value.shape());
        b.mod_b.value = Tensor::zeros(b.mod_b.value.shape());
    }
    // with all gates zero the token stream is untouched; the head then sees
    // the raw embedding, so compare against head(embed(z)) directly
    let geom = Geometry { f: 1, gh: 2, gw: 2 };
    let mut rng = Rng::seed(9);
    let z = random_tokens(geom, model.cfg.patch_dim(), &mut rng);
    let got = model.velocity_tokens(&z, geom, 0.3, 0).unwrap();

    let mut no_blocks = micro_backbone(2, 16, 1, 7);
    for b in &mut no_blocks.blocks {
        b.mod_w.value = Tensor::zeros(b.mod_w.value.shape());
        b.mod_b.value = Tensor::zeros(b.mod_b.value.shape());
    }
    no_blocks.blocks.clear();
    let want = no_blocks.velocity_tokens(&z, geom, 0.3, 0).unwrap();
    assert!(got.bit_eq(&want));
}

#[test]
fn batch_elements_are_independent_bitwise() {
    let model = micro_backbone(2, 16, 1, 21);
    let geom = Geometry { f: 1, gh: 2, gw: 2 };
    let pd = model.cfg.patch_dim();
    let mut rng = Rng::seed(2);
    let a = Tensor::<f64>::randn(&[1, geom.n(), pd], 0.5, &mut rng);
    let b1 = Tensor::<f64>::randn(&[1, geom.n(), pd], 0.5, &mut rng);
    let b2 = Tensor::<f64>::randn(&[1, geom.n(), pd], 0.5, &mut rng);

    let stack = |x: &Tensor<f64>, y: &Tensor<f64>| {
        let mut data = x.data().to_vec();
        data.extend_from_slice(y.data());
        Tensor::from_vec(vec![2, geom.n(), pd], data).unwrap()
    };
    let g = vidflow::graph::Graph::new();
    let mut binder = vidflow::backbone::Binder::default();
    let out1 = model
        .velocity_graph(&g, &mut binder, g.constant(stack(&a, &b1)), geom, &[(0.5, 0), (0.5, 0)])
        .unwrap();
    let g2 = vidflow::graph::Graph::new();
    let mut binder2 = vidflow::backbone::Binder::default();
    let out2 = model
        .velocity_graph(&g2, &mut binder2, g2.constant(stack(&a, &b2)), geom, &[(0.5, 0), (0.5, 0)])
        .unwrap();

    let v1 = g.value(out1);
    let v2 = g2.value(out2);
    let n = geom.n() * pd;
    assert!(
        v1.data()[..n]
            .iter()
            .zip(&v2.data()[..n])
            .all(|(x, y)| x.to_bits() == y.to_bits()),
        "first batch element changed when the second did"
    );
    assert!(
        v1.data()[n..]
            .iter()
            .zip(&v2.data()[n..])
            .any(|(x, y)| x.to_bits() != y.to_bits()),
        "second element should differ"
    );
}

#[test]
fn forward_accepts_any_frame_count_with_the_same_parameters() {
    let model = micro_backbone(1, 16, 1, 31);
    let pd = model.cfg.patch_dim();
    for f in 1..=8 {
        let geom = Geometry { f, gh: 2, gw: 2 };
        let z = Tensor::<f64>::randn(&[1, geom.n(), pd], 0.5, &mut Rng::seed(f as u64));
        let out = model.velocity_tokens(&z, geom, 0.5, 0).unwrap();
        assert_eq!(out.shape(), &[1, geom.n(), pd]);
    }
}

#[test]
fn patchify_geometry_and_positions() {
    let model = micro_backbone(1, 16, 1, 1);
    // patch 2 on a 1-frame 2x2 video: single token at (0, 0, 0)
    let video = Video::new(1, 2, 2, 3);
    let grid = model.patchify(&video).unwrap();
    assert_eq!(grid.geom.n(), 1);
    assert_eq!(grid.positions, vec![PositionTriple { t: 0, h: 0, w: 0 }]);

    // f=2, 4x4 with patch 2 -> 2*2*2 = 8 tokens
    let video = Video::new(2, 4, 4, 3);
    let grid = model.patchify(&video).unwrap();
    assert_eq!(grid.geom.n(), 8);

    // non-divisible dimensions are rejected
    let bad = Video::new(1, 3, 4, 3);
    assert!(model.patchify(&bad).is_err());
}

#[test]
fn patch_rearrangement_roundtrip_is_bit_exact() {
    let mut rng = Rng::seed(8);
    let mut video = Video::new(2, 4, 6, 3);
    for v in &mut video.data {
        *v = rng.uniform() as f32;
    }
    let (tokens, geom) = patch_split::<f32>(&video, 2).unwrap();
    let back = patch_join(&tokens, geom, 2).unwrap();
    assert!(video.bit_eq(&back));
}

#[test]
fn patchify_unpatchify_with_orthonormal_projection() {
    // embed with an orthonormal basis, decode with its transpose: <= 1e-5
    let mut model = micro_backbone(1, 12, 1, 2); // dim 12 = patch_dim 2*2*3
    assert_eq!(model.cfg.patch_dim(), 12);
    // Gram-Schmidt an orthonormal 12x12 basis
    let mut rng = Rng::seed(3);
    let d = 12;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b.iter()) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    let w: Vec<f64> = (0..d * d).map(|i| basis[i / d][i % d]).collect();
    model.patch_embed_w.value = Tensor::from_vec(vec![d, d], w.clone()).unwrap();
    model.patch_embed_b.value = Tensor::zeros(&[d]);

    let mut video = Video::new(1, 4, 4, 3);
    for v in &mut video.data {
        *v = rng.uniform() as f32;
    }
    let grid = model.patchify(&video).unwrap();
    // decode: tokens @ W^T (orthonormal inverse)
    let n = grid.geom.n();
    let mut decoded = vec![0.0f64; n * d];
    for (ti, tok) in grid.tokens.data().chunks_exact(d).enumerate() {
        for i in 0..d {
            for j in 0..d {
                decoded[ti * d + i] += tok[j] * w[i * d + j];
            }
        }
    }
    let grid_dec = TokenGrid::new(
        Tensor::from_vec(vec![1, n, d], decoded).unwrap(),
        grid.positions.clone(),
        grid.geom,
    )
    .unwrap();
    let back = model.unpatchify(&grid_dec).unwrap();
    let mut max = 0.0f32;
    for (a, b) in video.data.iter().zip(back.data.iter()) {
        max = max.max((a - b).abs());
    }
    assert!(max <= 1e-5, "max abs diff {max}");
}

#[test]
fn timestep_embedding_contract() {
    let model = micro_backbone(1, 16, 1, 17);
    let e0 = model.timestep_embed(0.0).unwrap();
    let e0b = model.timestep_embed(0.0).unwrap();
    assert!(e0.vector.bit_eq(&e0b.vector), "determinism at t = 0");

    let e1 = model.timestep_embed(1.0).unwrap();
    let l2: f64 = e0
        .vector
        .data()
        .iter()
        .zip(e1.vector.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(l2 > 1e-3, "embed(0) vs embed(1) L2 = {l2}");

    let eh = model.timestep_embed(0.5).unwrap();
    let eh2 = model.timestep_embed(0.5).unwrap();
    assert!(eh.vector.bit_eq(&eh2.vector));

    assert!(model.timestep_embed(-0.1).is_err());
    assert!(model.timestep_embed(1.1).is_err());
}

#[test]
fn rope_angles_zero_position_and_axis_isolation() {
    let dh = 16;
    let zero = rope3d_angles::<f64>(&[PositionTriple { t: 0, h: 0, w: 0 }], dh).unwrap();
    assert!(zero.data().iter().all(|&a| a == 0.0));

    // two tokens differing only in w: angles differ only in the w group
    let a = rope3d_angles::<f64>(&[PositionTriple { t: 3, h: 2, w: 1 }], dh).unwrap();
    let b = rope3d_angles::<f64>(&[PositionTriple { t: 3, h: 2, w: 4 }], dh).unwrap();
    // dh=16: ceil-to-even third = 6 channels -> 3 pairs for t and h, 2 for w
    let (pt, ph) = (3, 3);
    for i in 0..pt + ph {
        assert_eq!(a.data()[i], b.data()[i], "t/h group changed at {i}");
    }
    assert!(a.data()[pt + ph..].iter().zip(&b.data()[pt + ph..]).any(|(x, y)| x != y));

    // odd head dim is rejected
    assert!(rope3d_angles::<f64>(&[PositionTriple { t: 0, h: 0, w: 0 }], 7).is_err());
    // too small to give w a share
    assert!(rope3d_angles::<f64>(&[PositionTriple { t: 0, h: 0, w: 0 }], 8).is_err());
}

#[test]
fn attention_logits_depend_only_on_relative_offsets() {
    // pure-rotary q, k: shift every position by a constant and compare logits
    let dh = 16;
    let mut rng = Rng::seed(41);
    let geom = Geometry { f: 2, gh: 2, gw: 2 };
    let base_pos = lattice_positions(geom);
    let shifted: Vec<PositionTriple> = base_pos
        .iter()
        .map(|p| PositionTriple {
            t: p.t + 3,
            h: p.h + 5,
            w: p.w + 2,
        })
        .collect();

    let n = base_pos.len();
    let q = Tensor::<f64>::randn(&[1, n, dh], 1.0, &mut rng);
    let k = Tensor::<f64>::randn(&[1, n, dh], 1.0, &mut rng);

    let logits = |positions: &[PositionTriple]| -> Vec<f64> {
        let angles = rope3d_angles::<f64>(positions, dh).unwrap();
        let g = vidflow::graph::Graph::new();
        let qv = g.rope_rotate(g.constant(q.clone()), &angles).unwrap();
        let kv = g.rope_rotate(g.constant(k.clone()), &angles).unwrap();
        let l = g.matmul_nt(qv, kv).unwrap();
        g.value(l).data().to_vec()
    };
    let a = logits(&base_pos);
    let b = logits(&shifted);
    let max = a
        .iter()
        .zip(&b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(max <= 1e-5, "max logit diff {max}");
}

#[test]
fn backbone_checkpoint_roundtrip_is_bit_exact() {
    let dir = std::env::temp_dir().join(format!("vidflow-bb-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("backbone.vfck");

    let model32: Backbone<f32> = {
        let cfg = ModelConfig::micro(2, 16);
        Backbone::init(cfg, &mut Rng::seed(77)).unwrap()
    };
    model32.save(&path).unwrap();
    let mut other = Backbone::init(ModelConfig::micro(2, 16), &mut Rng::seed(123)).unwrap();
    other.load_into(&path).unwrap();
    for (a, b) in model32.params().iter().zip(other.params().iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.bit_eq(&b.value), "{} differs", a.name);
    }
}
