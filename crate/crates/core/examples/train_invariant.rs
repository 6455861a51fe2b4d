//! Train invariant and baseline models over several seeds and compare.
//!
//! cargo run --release --example train_invariant -- [epochs]

use crl_core::data::{generate, split, Fractions, GenerativeSpec};
use crl_core::numerics::{Rng, Stream};
use crl_core::train::{run_experiment, Mode, TrainConfig};

fn main() -> crl_core::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let ds = generate(&GenerativeSpec::default(), 8334, &mut Rng::stream(0, Stream::Data))?;
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    for mode in [Mode::Invariant, Mode::Baseline] {
        let cfg = TrainConfig {
            mode,
            epochs,
            ..TrainConfig::default()
        };
        let exp = run_experiment(&cfg, &splits, jobs)?;
        println!("{}:", mode.name());
        for r in &exp.runs {
            let last = r.history.last().expect("at least one epoch");
            println!(
                "  seed {}: best epoch {:2}, val AUROC {:.4}, test AUROC {:.4}, final train loss {:.4}",
                r.seed, r.best_epoch, r.val_auroc, r.test_metrics.auroc, last.train_total
            );
        }
        for (name, m) in &exp.aggregate.metrics {
            println!("  {name:16} {:.4} ± {:.4}", m.mean, m.std);
        }
    }
    Ok(())
}
