//! Generate the default synthetic dataset, split it, and write CSVs.
//!
//! cargo run --example generate_data -- [out_dir]

use std::path::PathBuf;

use crl_core::data::{generate, save, split, Fractions, GenerativeSpec};
use crl_core::numerics::{Rng, Stream};

fn main() -> crl_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "generated".into()));
    std::fs::create_dir_all(&out).map_err(|e| crl_core::Error::Contract(e.to_string()))?;

    let spec = GenerativeSpec::default();
    let ds = generate(&spec, 8334, &mut Rng::stream(0, Stream::Data))?;
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;

    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let positives = part.samples().iter().filter(|s| s.y == 1).count();
        let per_group: Vec<usize> = (0..part.num_groups())
            .map(|g| part.samples().iter().filter(|s| s.group == g).count())
            .collect();
        println!("{name}: {} rows, {positives} positive, per group {per_group:?}", part.len());
        save(part, &out.join(format!("{name}.csv")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
