//! Cross-seed agreement of learned representations, and their agreement
//! with the ground-truth content and style latents.

use crl_core::data::{generate, split, Fractions, GenerativeSpec};
use crl_core::metrics::{eval_indices, mcc_strong, mcc_weak};
use crl_core::numerics::{Rng, Stream};
use crl_core::train::{cross_seed_mcc, run_experiment, Mode, TrainConfig};

fn main() -> crl_core::Result<()> {
    let ds = generate(&GenerativeSpec::default(), 8334, &mut Rng::stream(0, Stream::Data))?;
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    for mode in [Mode::Invariant, Mode::Baseline] {
        let cfg = TrainConfig {
            mode,
            ..TrainConfig::default()
        };
        let exp = run_experiment(&cfg, &splits, jobs)?;
        let models: Vec<_> = exp.runs.iter().map(|r| &r.best_checkpoint).collect();
        let pair = cross_seed_mcc(&models, &splits.test, cfg.eval.n_eval, cfg.eval.eval_seed)?;
        println!("{}: mean strong MCC {:.4}, mean weak MCC {:.4}", mode.name(), pair.mean_strong, pair.mean_weak);
        for row in &pair.strong {
            println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
        }

        let idx = eval_indices(&splits.test, cfg.eval.n_eval, cfg.eval.eval_seed);
        let content = splits.test.content_matrix(&idx).expect("synthetic data has latents");
        let style = splits.test.style_matrix(&idx).expect("synthetic data has latents");
        for r in &exp.runs {
            let z = r.best_checkpoint.embed(&splits.test.x_matrix(&idx))?;
            println!(
                "  seed {}: content strong {:.3} weak {:.3}, style weak {:.3}",
                r.seed,
                mcc_strong(&content, &z)?,
                mcc_weak(&content, &z)?,
                mcc_weak(&style, &z)?
            );
        }
    }
    Ok(())
}
