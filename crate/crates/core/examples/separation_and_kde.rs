//! Class separation along PC1 and density plots for one trained run per mode.
//!
//! cargo run --release --example separation_and_kde -- [out_dir]

use std::path::PathBuf;

use crl_core::data::{generate, split, Fractions, GenerativeSpec};
use crl_core::metrics::{eval_indices, separation_delta};
use crl_core::numerics::{Rng, Stream};
use crl_core::plot::plot_embeddings;
use crl_core::train::{train_run, Mode, TrainConfig};

fn main() -> crl_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "plots".into()));
    std::fs::create_dir_all(&out).map_err(|e| crl_core::Error::Contract(e.to_string()))?;
    let ds = generate(&GenerativeSpec::default(), 8334, &mut Rng::stream(0, Stream::Data))?;
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;

    for mode in [Mode::Invariant, Mode::Baseline] {
        let cfg = TrainConfig {
            mode,
            ..TrainConfig::default()
        };
        let run = train_run(&cfg, &splits, 0)?;
        let idx = eval_indices(&splits.test, cfg.eval.n_eval, cfg.eval.eval_seed);
        let z = run.best_checkpoint.embed(&splits.test.x_matrix(&idx))?;
        let labels = splits.test.labels(&idx);
        let sep = separation_delta(&z, &labels)?;
        println!(
            "{}: c_NF {:.4}, c_D {:.4}, range [{:.4}, {:.4}], delta {:.4}",
            mode.name(),
            sep.c_nf,
            sep.c_d,
            sep.c_min,
            sep.c_max,
            sep.delta
        );

        let plots = plot_embeddings(&z, &labels, &splits.test.groups(&idx), None, 256, mode.name())?;
        println!(
            "  max L1 gap between class curves {:.3}, between group curves {:.3}",
            plots.sidecar.max_class_l1_gap, plots.sidecar.max_group_l1_gap
        );
        for (kind, svg) in [("class", &plots.class_svg), ("group", &plots.group_svg)] {
            let path = out.join(format!("{}-{kind}.svg", mode.name()));
            std::fs::write(&path, svg).map_err(|e| crl_core::Error::Contract(e.to_string()))?;
        }
    }
    println!("wrote SVGs to {}", out.display());
    Ok(())
}
