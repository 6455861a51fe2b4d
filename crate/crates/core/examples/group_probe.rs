//! Linear group probe on raw inputs and on learned representations.

use crl_core::data::{generate, split, Fractions, GenerativeSpec};
use crl_core::metrics::{eval_indices, group_probe_with, ProbeConfig};
use crl_core::numerics::{Rng, Stream};
use crl_core::train::{train_run, Mode, TrainConfig};

fn main() -> crl_core::Result<()> {
    let ds = generate(&GenerativeSpec::default(), 8334, &mut Rng::stream(0, Stream::Data))?;
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;
    let probe = ProbeConfig::default();
    let cfg = TrainConfig::default();
    let idx = eval_indices(&splits.test, cfg.eval.n_eval, cfg.eval.eval_seed);
    let x = splits.test.x_matrix(&idx);
    let groups = splits.test.groups(&idx);

    let raw = group_probe_with(&x, &groups, &probe)?;
    println!("raw x: accuracy {:.4}, chance {:.4}", raw.accuracy, raw.chance);

    for mode in [Mode::Invariant, Mode::Baseline] {
        let run = train_run(&cfg.with_mode(mode), &splits, 0)?;
        let z = run.best_checkpoint.embed(&x)?;
        let r = group_probe_with(&z, &groups, &probe)?;
        println!(
            "{}: accuracy {:.4}, chance {:.4} ({} train / {} held out)",
            mode.name(),
            r.accuracy,
            r.chance,
            r.n_train,
            r.n_test
        );
    }
    Ok(())
}
