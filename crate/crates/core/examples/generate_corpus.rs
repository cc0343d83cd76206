//! Writes a synthetic corpus: `cargo run --example generate_corpus -- DIR [SCALE]`.

use std::path::PathBuf;

use deferral_lab::synth::{generate, SynthOptions};

fn main() -> deferral_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let scale: usize = args.next().map(|s| s.parse().expect("scale must be an integer")).unwrap_or(1);
    let options = if scale == 1 { SynthOptions::fixture() } else { SynthOptions::scaled(scale) };
    let corpus = generate(&options)?;
    corpus.write(&dir)?;
    println!(
        "{} items, {} responses, {} decompositions in {}",
        corpus.items.len(),
        corpus.responses.len(),
        corpus.decompositions.len(),
        dir.display()
    );
    Ok(())
}
