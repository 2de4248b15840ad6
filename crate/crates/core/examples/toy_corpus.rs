//! Writes the synthetic corpora used by the experiments.
//!
//! Usage: `cargo run --example toy_corpus -- [OUT_DIR] [SEED]` (defaults `data/toy`, 1).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use affectgen::corpus::TextPairs;
use affectgen::synthetic::{affect_dialogues, copy_task};

fn write(pairs: &TextPairs, path: PathBuf) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    for (p, r) in &pairs.pairs {
        writeln!(out, "{}\t{}", p.join(" "), r.join(" "))?;
    }
    println!("{} pairs -> {}", pairs.pairs.len(), path.display());
    out.flush()
}

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/toy".into()));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(1);
    std::fs::create_dir_all(&dir)?;
    write(&affect_dialogues(3000, seed), dir.join("dialogues_train.tsv"))?;
    write(&affect_dialogues(100, seed + 1000), dir.join("dialogues_heldout.tsv"))?;
    write(&copy_task(50, 46, 2, 5, seed), dir.join("copy.tsv"))?;
    Ok(())
}
