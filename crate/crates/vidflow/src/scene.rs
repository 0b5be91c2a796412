//! Procedural moving-shape videos and analytic edit oracles.
//!
//! Every edit task is defined at the scene-description level, so the exact
//! ground-truth edited video is computable by construction — including for
//! removal and addition, where pixel-level operators could not know what lies
//! behind an object. Rendering is a pure function of `(SceneSpec, frame)`:
//! hard-edged shapes, painter's order by list index, linear motion reflected
//! off the canvas walls so shapes stay fully inside.
//!
//! Dataset note: each task kind fixes one canonical edit operator (one
//! permutation, one tint, "remove the topmost shape", a fixed added shape,
//! and so on) so that a single adapter can learn the task as a mapping.

use serde::{Deserialize, Serialize};

use crate::data::write_dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::Video;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    /// Bounding-box side (circle diameter) in pixels.
    pub size: f64,
    /// Initial center (x, y).
    pub pos: (f64, f64),
    /// Pixels per frame.
    pub vel: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: [f32; 3],
    pub shapes: Vec<Shape>,
    pub frames: usize,
}

/// Triangle-wave reflection of an unbounded coordinate into [lo, hi].
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let period = 2.0 * (hi - lo);
    let mut m = (x - lo) % period;
    if m < 0.0 {
        m += period;
    }
    lo + m.min(period - m)
}

impl Shape {
    /// Center position at a frame index under linear-bounce motion.
    pub fn center_at(&self, spec: &SceneSpec, frame: usize) -> (f64, f64) {
        let margin = self.size / 2.0;
        let (lox, hix) = (margin, spec.width as f64 - 1.0 - margin);
        let (loy, hiy) = (margin, spec.height as f64 - 1.0 - margin);
        let k = frame as f64;
        (
            reflect(self.pos.0 + self.vel.0 * k, lox, hix),
            reflect(self.pos.1 + self.vel.1 * k, loy, hiy),
        )
    }

    fn covers(&self, cx: f64, cy: f64, x: f64, y: f64) -> bool {
        let half = self.size / 2.0;
        match self.kind {
            ShapeKind::Circle => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= half * half
            }
            ShapeKind::Square => (x - cx).abs() <= half && (y - cy).abs() <= half,
            ShapeKind::Triangle => {
                // apex-up isoceles triangle inside the bounding box
                let (ax, ay) = (cx, cy - half);
                let (bx, by) = (cx - half, cy + half);
                let (qx, qy) = (cx + half, cy + half);
                let sign = |x1: f64, y1: f64, x2: f64, y2: f64| {
                    (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2)
                };
                let d1 = sign(ax, ay, bx, by);
                let d2 = sign(bx, by, qx, qy);
                let d3 = sign(qx, qy, ax, ay);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            let margin = s.size / 2.0;
            let (lox, hix) = (margin, self.width as f64 - 1.0 - margin);
            let (loy, hiy) = (margin, self.height as f64 - 1.0 - margin);
            if s.pos.0 < lox || s.pos.0 > hix || s.pos.1 < loy || s.pos.1 > hiy {
                return Err(Error::invalid(
                    "render_video",
                    format!("shape {i} starts outside the canvas: {:?}", s.pos),
                ));
            }
        }
        Ok(())
    }
}

/// Topmost shape index + 1 per pixel (0 = background) for one frame.
pub fn shape_mask(spec: &SceneSpec, frame: usize) -> Vec<usize> {
    let centers: Vec<(f64, f64)> = spec
        .shapes
        .iter()
        .map(|s| s.center_at(spec, frame))
        .collect();
    let mut mask = vec![0usize; spec.height * spec.width];
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fx, fy) = (x as f64, y as f64);
            for (i, s) in spec.shapes.iter().enumerate() {
                let (cx, cy) = centers[i];
                if s.covers(cx, cy, fx, fy) {
                    mask[y * spec.width + x] = i + 1;
                }
            }
        }
    }
    mask
}

/// Deterministic rasterization of the whole scene.
pub fn render_video(spec: &SceneSpec) -> Result<Video> {
    spec.validate()?;
    let mut video = Video::new(spec.frames, spec.height, spec.width, 3);
    for f in 0..spec.frames {
        let mask = shape_mask(spec, f);
        for y in 0..spec.height {
            for x in 0..spec.width {
                let color = match mask[y * spec.width + x] {
                    0 => &spec.background,
                    i => &spec.shapes[i - 1].color,
                };
                video.pixel_mut(f, y, x).copy_from_slice(color);
            }
        }
    }
    Ok(video)
}

/// Binary edge map of the scene: white where the topmost-shape assignment
/// changes across any 4-neighbor, black elsewhere.
pub fn edge_map_video(spec: &SceneSpec) -> Result<Video> {
    spec.validate()?;
    let mut video = Video::new(spec.frames, spec.height, spec.width, 3);
    let (h, w) = (spec.height, spec.width);
    for f in 0..spec.frames {
        let mask = shape_mask(spec, f);
        for y in 0..h {
            for x in 0..w {
                let me = mask[y * w + x];
                let mut edge = false;
                if x > 0 && mask[y * w + x - 1] != me {
                    edge = true;
                }
                if x + 1 < w && mask[y * w + x + 1] != me {
                    edge = true;
                }
                if y > 0 && mask[(y - 1) * w + x] != me {
                    edge = true;
                }
                if y + 1 < h && mask[(y + 1) * w + x] != me {
                    edge = true;
                }
                if edge {
                    video.pixel_mut(f, y, x).copy_from_slice(&[1.0, 1.0, 1.0]);
                }
            }
        }
    }
    Ok(video)
}

// ---------------------------------------------------------------------------
// Edit tasks
// ---------------------------------------------------------------------------

/// An analytic edit operator over a procedural scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditTask {
    /// Output channel i takes input channel perm\[i\].
    ChannelPermute { perm: [usize; 3] },
    /// Pixelwise `clamp(matrix * rgb + bias)` (style-transfer analog).
    ColorAffine {
        matrix: [[f32; 3]; 3],
        bias: [f32; 3],
    },
    /// Object removal (exact: the scene is re-rendered without the shape).
    ShapeRemove { index: usize },
    /// Object addition (the new shape is drawn topmost).
    ShapeAdd { shape: Shape },
    /// Rigid replacement: same color/size/motion, different kind.
    ShapeSwap { index: usize, kind: ShapeKind },
    /// Color alteration of one shape.
    ShapeRecolor { index: usize, color: [f32; 3] },
    /// Conditioning analog: source is the scene's binary edge map,
    /// target is the rendered scene.
    EdgeCondition,
}

/// Stable task-id registry shared by datasets, prompts and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ChannelPermute,
    ColorAffine,
    ShapeRemove,
    ShapeAdd,
    ShapeSwap,
    ShapeRecolor,
    EdgeCondition,
}

pub const ALL_TASKS: [TaskKind; 7] = [
    TaskKind::ChannelPermute,
    TaskKind::ColorAffine,
    TaskKind::ShapeRemove,
    TaskKind::ShapeAdd,
    TaskKind::ShapeSwap,
    TaskKind::ShapeRecolor,
    TaskKind::EdgeCondition,
];

impl TaskKind {
    pub fn id(self) -> usize {
        match self {
            TaskKind::ChannelPermute => 0,
            TaskKind::ColorAffine => 1,
            TaskKind::ShapeRemove => 2,
            TaskKind::ShapeAdd => 3,
            TaskKind::ShapeSwap => 4,
            TaskKind::ShapeRecolor => 5,
            TaskKind::EdgeCondition => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ChannelPermute => "channel-permute",
            TaskKind::ColorAffine => "color-affine",
            TaskKind::ShapeRemove => "shape-remove",
            TaskKind::ShapeAdd => "shape-add",
            TaskKind::ShapeSwap => "shape-swap",
            TaskKind::ShapeRecolor => "shape-recolor",
            TaskKind::EdgeCondition => "edge-condition",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_TASKS
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = ALL_TASKS.iter().map(|t| t.name()).collect();
                Error::invalid(
                    "task",
                    format!("unknown task '{}'; known tasks: {}", name, names.join(", ")),
                )
            })
    }
}

/// The canonical operator instance each task kind trains on.
pub fn canonical_task(kind: TaskKind, spec: &SceneSpec) -> EditTask {
    match kind {
        TaskKind::ChannelPermute => EditTask::ChannelPermute { perm: [1, 2, 0] },
        TaskKind::ColorAffine => EditTask::ColorAffine {
            matrix: [[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.1, 0.2, 0.6]],
            bias: [0.08, 0.04, 0.0],
        },
        TaskKind::ShapeRemove => EditTask::ShapeRemove {
            index: spec.shapes.len().saturating_sub(1),
        },
        TaskKind::ShapeAdd => EditTask::ShapeAdd {
            shape: Shape {
                kind: ShapeKind::Square,
                color: [0.9, 0.15, 0.1],
                size: 8.0,
                pos: (15.5, 15.5),
                vel: (0.0, 0.0),
            },
        },
        TaskKind::ShapeSwap => EditTask::ShapeSwap {
            index: spec.shapes.len().saturating_sub(1),
            kind: ShapeKind::Square,
        },
        TaskKind::ShapeRecolor => EditTask::ShapeRecolor {
            index: spec.shapes.len().saturating_sub(1),
            color: [0.1, 0.9, 0.1],
        },
        TaskKind::EdgeCondition => EditTask::EdgeCondition,
    }
}

fn permute_pixels(video: &Video, perm: [usize; 3]) -> Result<Video> {
    if perm.iter().any(|&i| i > 2) || {
        let mut s = perm;
        s.sort_unstable();
        s != [0, 1, 2]
    } {
        return Err(Error::invalid(
            "apply_edit",
            format!("{perm:?} is not a permutation of the channels"),
        ));
    }
    let mut out = video.clone();
    for (dst, src) in out.data.chunks_exact_mut(3).zip(video.data.chunks_exact(3)) {
        for i in 0..3 {
            dst[i] = src[perm[i]];
        }
    }
    Ok(out)
}

/// Source and exact ground-truth target for a task applied to a scene.
pub fn apply_edit_oracle(spec: &SceneSpec, task: &EditTask) -> Result<(Video, Video)> {
    let check_index = |index: usize| -> Result<()> {
        if index >= spec.shapes.len() {
            return Err(Error::invalid(
                "apply_edit",
                format!("shape index {index} out of range ({} shapes)", spec.shapes.len()),
            ));
        }
        Ok(())
    };
    match task {
        EditTask::ChannelPermute { perm } => {
            let src = render_video(spec)?;
            let tgt = permute_pixels(&src, *perm)?;
            Ok((src, tgt))
        }
        EditTask::ColorAffine { matrix, bias } => {
            let src = render_video(spec)?;
            let mut tgt = src.clone();
            for px in tgt.data.chunks_exact_mut(3) {
                let rgb = [px[0], px[1], px[2]];
                for i in 0..3 {
                    let v = matrix[i][0] * rgb[0]
                        + matrix[i][1] * rgb[1]
                        + matrix[i][2] * rgb[2]
                        + bias[i];
                    px[i] = v.clamp(0.0, 1.0);
                }
            }
            Ok((src, tgt))
        }
        EditTask::ShapeRemove { index } => {
            check_index(*index)?;
            let mut edited = spec.clone();
            edited.shapes.remove(*index);
            Ok((render_video(spec)?, render_video(&edited)?))
        }
        EditTask::ShapeAdd { shape } => {
            let mut edited = spec.clone();
            edited.shapes.push(shape.clone());
            Ok((render_video(spec)?, render_video(&edited)?))
        }
        EditTask::ShapeSwap { index, kind } => {
            check_index(*index)?;
            let mut edited = spec.clone();
            edited.shapes[*index].kind = *kind;
            Ok((render_video(spec)?, render_video(&edited)?))
        }
        EditTask::ShapeRecolor { index, color } => {
            check_index(*index)?;
            let mut edited = spec.clone();
            edited.shapes[*index].color = *color;
            Ok((render_video(spec)?, render_video(&edited)?))
        }
        EditTask::EdgeCondition => Ok((edge_map_video(spec)?, render_video(spec)?)),
    }
}

// ---------------------------------------------------------------------------
// Random scenes and dataset generation
// ---------------------------------------------------------------------------

/// Train/eval seed namespaces are disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn namespace(self) -> u64 {
        match self {
            Split::Train => 0x5452_4149,
            Split::Eval => 0x4556_414c,
        }
    }
}

fn sample_color(rng: &mut Rng, avoid: Option<[f32; 3]>) -> [f32; 3] {
    for _ in 0..16 {
        let c = [
            rng.uniform() as f32,
            rng.uniform() as f32,
            rng.uniform() as f32,
        ];
        match avoid {
            Some(bg) => {
                let dist = c
                    .iter()
                    .zip(bg.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                if dist >= 0.2 {
                    return c;
                }
            }
            None => return c,
        }
    }
    // extremely unlikely fallback; still deterministic
    [0.95, 0.95, 0.95]
}

fn sample_shape(rng: &mut Rng, height: usize, width: usize, bg: [f32; 3], kinds: &[ShapeKind]) -> Shape {
    let kind = kinds[rng.below(kinds.len())];
    let color = sample_color(rng, Some(bg));
    let size = rng.range(6.0, 12.0);
    let margin = size / 2.0 + 0.5;
    let pos = (
        rng.range(margin, width as f64 - 1.0 - margin),
        rng.range(margin, height as f64 - 1.0 - margin),
    );
    let mag = |rng: &mut Rng| {
        let m = rng.range(1.0, 2.5);
        if rng.below(2) == 0 {
            m
        } else {
            -m
        }
    };
    let vel = (mag(rng), mag(rng));
    Shape {
        kind,
        color,
        size,
        pos,
        vel,
    }
}

/// A random scene suited to the given task kind. Pure function of the rng
/// state; every shape moves at >= 1 px/frame per axis.
pub fn random_scene(
    rng: &mut Rng,
    canvas: usize,
    frames: usize,
    task: TaskKind,
) -> SceneSpec {
    let background = [
        rng.range(0.05, 0.45) as f32,
        rng.range(0.05, 0.45) as f32,
        rng.range(0.05, 0.45) as f32,
    ];
    let all = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
    let non_square = [ShapeKind::Circle, ShapeKind::Triangle];
    let n_shapes = match task {
        TaskKind::ShapeRemove => 1,
        TaskKind::ShapeAdd | TaskKind::ShapeSwap | TaskKind::ShapeRecolor => 1 + rng.below(2),
        _ => 1 + rng.below(3),
    };
    let mut shapes = Vec::with_capacity(n_shapes);
    for i in 0..n_shapes {
        // the swap task must have a non-square topmost shape to edit
        let kinds: &[ShapeKind] = if task == TaskKind::ShapeSwap && i == n_shapes - 1 {
            &non_square
        } else {
            &all
        };
        shapes.push(sample_shape(rng, canvas, canvas, background, kinds));
    }
    SceneSpec {
        height: canvas,
        width: canvas,
        background,
        shapes,
        frames,
    }
}

/// Generated pair plus the scene it came from.
pub struct GeneratedPair {
    pub id: String,
    pub task_id: usize,
    pub spec: SceneSpec,
    pub source: Video,
    pub target: Video,
}

/// Generate `n` pairs for one task. Training sets use `frames = 1`
/// (single-frame videos); evaluation sets use multi-frame clips with seeds
/// drawn from a disjoint namespace.
pub fn gen_pairs(
    task: TaskKind,
    n: usize,
    seed: u64,
    frames: usize,
    canvas: usize,
    split: Split,
) -> Result<Vec<GeneratedPair>> {
    if n == 0 {
        return Err(Error::invalid("gen_dataset", "n must be >= 1"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::derive(&[seed, split.namespace(), task.id() as u64, i as u64]);
        let spec = random_scene(&mut rng, canvas, frames, task);
        let op = canonical_task(task, &spec);
        let (source, target) = apply_edit_oracle(&spec, &op)?;
        out.push(GeneratedPair {
            id: format!("{}-{:04}", task.name(), i),
            task_id: task.id(),
            spec,
            source,
            target,
        });
    }
    Ok(out)
}

/// Generate and write a dataset directory (pairs as VVF plus manifest).
pub fn gen_dataset(
    dir: &std::path::Path,
    tasks: &[TaskKind],
    n_per_task: usize,
    seed: u64,
    frames: usize,
    canvas: usize,
    split: Split,
) -> Result<crate::data::Manifest> {
    let mut rows = Vec::new();
    for &task in tasks {
        for p in gen_pairs(task, n_per_task, seed, frames, canvas, split)? {
            rows.push((p.id, p.task_id, p.source, p.target));
        }
    }
    let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
    write_dataset(dir, &rows, seed, &names.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_spec(frames: usize) -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            background: [0.2, 0.3, 0.1],
            shapes: vec![
                Shape {
                    kind: ShapeKind::Circle,
                    color: [0.9, 0.2, 0.2],
                    size: 8.0,
                    pos: (10.0, 12.0),
                    vel: (1.5, -1.0),
                },
                Shape {
                    kind: ShapeKind::Triangle,
                    color: [0.1, 0.4, 0.9],
                    size: 10.0,
                    pos: (22.0, 20.0),
                    vel: (-1.0, 2.0),
                },
            ],
            frames,
        }
    }

    #[test]
    fn zero_shapes_renders_constant_background() {
        let spec = SceneSpec {
            height: 8,
            width: 8,
            background: [0.5, 0.25, 0.75],
            shapes: vec![],
            frames: 3,
        };
        let v = render_video(&spec).unwrap();
        for px in v.data.chunks_exact(3) {
            assert_eq!(px, &[0.5, 0.25, 0.75]);
        }
    }

    #[test]
    fn zero_velocity_freezes_all_frames() {
        let mut spec = demo_spec(4);
        for s in &mut spec.shapes {
            s.vel = (0.0, 0.0);
        }
        let v = render_video(&spec).unwrap();
        for f in 1..v.frames {
            assert_eq!(v.frame(f), v.frame(0));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = demo_spec(5);
        let a = render_video(&spec).unwrap();
        let b = render_video(&spec).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn out_of_canvas_shape_is_rejected() {
        let mut spec = demo_spec(1);
        spec.shapes[0].pos = (1.0, 1.0); // size 8 shape cannot center at 1
        assert!(render_video(&spec).is_err());
    }

    #[test]
    fn shapes_stay_inside_under_bounce() {
        let spec = demo_spec(64);
        for f in 0..spec.frames {
            for s in &spec.shapes {
                let (cx, cy) = s.center_at(&spec, f);
                let m = s.size / 2.0;
                assert!(cx >= m && cx <= spec.width as f64 - 1.0 - m);
                assert!(cy >= m && cy <= spec.height as f64 - 1.0 - m);
            }
        }
    }

    #[test]
    fn identity_permutation_is_bit_exact() {
        let spec = demo_spec(2);
        let (src, tgt) =
            apply_edit_oracle(&spec, &EditTask::ChannelPermute { perm: [0, 1, 2] }).unwrap();
        assert!(src.bit_eq(&tgt));
    }

    #[test]
    fn channel_permute_moves_channels_as_specified() {
        // output channel i takes input channel perm(i): (1,0,0) -> (0,0,1)
        let spec = SceneSpec {
            height: 4,
            width: 4,
            background: [1.0, 0.0, 0.0],
            shapes: vec![],
            frames: 1,
        };
        let (_, tgt) =
            apply_edit_oracle(&spec, &EditTask::ChannelPermute { perm: [1, 2, 0] }).unwrap();
        assert_eq!(tgt.pixel(0, 0, 0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn channel_permute_commutes_with_rendering() {
        let perm = [1, 2, 0];
        let spec = demo_spec(3);
        // permute pixels after rendering
        let (_, tgt_pixels) =
            apply_edit_oracle(&spec, &EditTask::ChannelPermute { perm }).unwrap();
        // permute every spec color, then render
        let mut permuted = spec.clone();
        let apply = |c: [f32; 3]| [c[perm[0]], c[perm[1]], c[perm[2]]];
        permuted.background = apply(permuted.background);
        for s in &mut permuted.shapes {
            s.color = apply(s.color);
        }
        let tgt_spec = render_video(&permuted).unwrap();
        assert!(tgt_pixels.bit_eq(&tgt_spec));
    }

    #[test]
    fn remove_only_shape_leaves_background() {
        let mut spec = demo_spec(2);
        spec.shapes.truncate(1);
        let (_, tgt) = apply_edit_oracle(&spec, &EditTask::ShapeRemove { index: 0 }).unwrap();
        for px in tgt.data.chunks_exact(3) {
            assert_eq!(px, &spec.background);
        }
    }

    #[test]
    fn invalid_shape_index_errors() {
        let spec = demo_spec(1);
        assert!(apply_edit_oracle(&spec, &EditTask::ShapeRemove { index: 7 }).is_err());
    }

    #[test]
    fn edge_condition_produces_binary_map_and_render() {
        let spec = demo_spec(2);
        let (src, tgt) = apply_edit_oracle(&spec, &EditTask::EdgeCondition).unwrap();
        assert!(src
            .data
            .iter()
            .all(|&v| v == 0.0 || v == 1.0));
        assert!(tgt.bit_eq(&render_video(&spec).unwrap()));
        // some edges exist
        assert!(src.data.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn generation_is_reproducible_and_split_disjoint() {
        let a = gen_pairs(TaskKind::ChannelPermute, 4, 7, 1, 32, Split::Train).unwrap();
        let b = gen_pairs(TaskKind::ChannelPermute, 4, 7, 1, 32, Split::Train).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.spec, y.spec);
            assert!(x.source.bit_eq(&y.source));
        }
        let eval = gen_pairs(TaskKind::ChannelPermute, 4, 7, 8, 32, Split::Eval).unwrap();
        for x in &a {
            for y in &eval {
                assert_ne!(x.spec.shapes, y.spec.shapes);
            }
        }
    }

    #[test]
    fn generated_scenes_move_at_least_one_pixel_per_frame() {
        for p in gen_pairs(TaskKind::ColorAffine, 8, 3, 4, 32, Split::Eval).unwrap() {
            for s in &p.spec.shapes {
                assert!(s.vel.0.abs() >= 1.0 && s.vel.1.abs() >= 1.0);
            }
        }
    }
}
