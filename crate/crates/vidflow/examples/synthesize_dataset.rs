//! Generate a paired dataset with exact oracle targets and export a few
//! PPM previews.
//!
//! ```text
//! cargo run --release --example synthesize_dataset [out_dir]
//! ```

use std::path::PathBuf;

use vidflow::data::read_manifest;
use vidflow::scene::{gen_dataset, gen_pairs, Split, TaskKind};
use vidflow::video::write_ppm;

fn main() -> vidflow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from("runs/example_dataset"));

    // a small training set (single-frame pairs) for two tasks
    let tasks = [TaskKind::ChannelPermute, TaskKind::ShapeRemove];
    gen_dataset(&out.join("train"), &tasks, 12, 7, 1, 32, Split::Train)?;
    let manifest = read_manifest(&out.join("train"))?;
    println!(
        "train: {} pairs for {} into {}",
        manifest.pairs.len(),
        manifest.task,
        out.join("train").display()
    );

    // a held-out multi-frame evaluation set from the disjoint seed namespace
    gen_dataset(&out.join("eval"), &tasks, 4, 7, 8, 32, Split::Eval)?;
    println!("eval: 8-frame clips into {}", out.join("eval").display());

    // PPM previews of one evaluation pair
    let pairs = gen_pairs(TaskKind::ShapeRemove, 1, 7, 8, 32, Split::Eval)?;
    let p = &pairs[0];
    let preview = out.join("preview");
    std::fs::create_dir_all(&preview)
        .map_err(|e| vidflow::Error::io(&preview, e))?;
    for f in 0..p.source.frames {
        write_ppm(&preview.join(format!("source_{f}.ppm")), &p.source, f)?;
        write_ppm(&preview.join(format!("target_{f}.ppm")), &p.target, f)?;
    }
    println!(
        "preview: {} source/target frame pairs in {}",
        p.source.frames,
        preview.display()
    );
    println!("scene: {:?}", p.spec);
    Ok(())
}
