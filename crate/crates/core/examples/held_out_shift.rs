//! Train on two groups and test on a third whose style mean lies outside
//! the training range. In training, half the samples have their group tied
//! to the label, so style is a shortcut that fails on the third group.
//!
//! cargo run --release --example held_out_shift -- [epochs]

use crl_core::data::{generate, split, Fractions, GenerativeSpec, SplitTag, Splits};
use crl_core::numerics::{Rng, Stream};
use crl_core::train::{run_experiment, Mode, TrainConfig};

fn main() -> crl_core::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let base = GenerativeSpec::default();
    let m = base.group_style_means[1][0];
    let spec = GenerativeSpec {
        groups: 3,
        group_style_means: vec![vec![-m; 2], vec![m; 2], vec![3.0 * m; 2]],
        group_style_scales: vec![base.group_style_scales[0].clone(); 3],
        group_label_correlation: 0.5,
        ..base
    };
    let ds = generate(&spec, 12_500, &mut Rng::stream(0, Stream::Data))?;
    let seen = split(&ds.restrict_groups(&[0, 1], SplitTag::Full)?, Fractions::default(), &mut Rng::stream(0, Stream::Split))?;
    let shifted = Splits {
        test: ds.restrict_groups(&[2], SplitTag::Test)?,
        ..seen.clone()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    println!("test AUROC on held-out group {:?} (in-distribution in brackets)", spec.group_style_means[2]);
    let mut per_mode = Vec::new();
    for mode in [Mode::Invariant, Mode::Baseline] {
        let cfg = TrainConfig {
            mode,
            epochs,
            ..TrainConfig::default()
        };
        let exp = run_experiment(&cfg, &shifted, jobs)?;
        let aucs: Vec<f64> = exp.runs.iter().map(|r| r.test_metrics.auroc).collect();
        for r in &exp.runs {
            let iid = crl_core::metrics::classification_metrics(&r.best_checkpoint, &seen.test)?.0;
            println!("  {:9} seed {}: {:.4} ({iid:.4})", mode.name(), r.seed, r.test_metrics.auroc);
        }
        per_mode.push(aucs);
    }
    let wins = per_mode[0].iter().zip(&per_mode[1]).filter(|(a, b)| a >= b).count();
    println!("invariant >= baseline in {wins} of {} seeds", per_mode[0].len());
    Ok(())
}
