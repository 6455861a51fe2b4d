//! Finite-difference check of the full objective on one grouped batch.

use crl_core::data::{generate, GenerativeSpec};
use crl_core::losses::{check_total_gradients, BatchMeta, LossConfig};
use crl_core::model::{init, Architecture};
use crl_core::numerics::{Rng, Stream};
use crl_core::sampler::{draw_grouped_batch, partition_groups, SamplerConfig};

fn main() -> crl_core::Result<()> {
    let spec = GenerativeSpec::default();
    let ds = generate(&spec, 400, &mut Rng::stream(0, Stream::Data))?;
    let cells = partition_groups(&ds);
    let batch = draw_grouped_batch(&SamplerConfig::default(), &cells, 8, &mut Rng::stream(0, Stream::Sampling))?;
    let x = ds.x_matrix(&batch.rows);
    let meta = BatchMeta {
        labels: batch.labels,
        groups: batch.groups,
        pairing: batch.pairing,
    };

    let model = init(&Architecture(vec![ds.input_dim(), 6, 5, 3]), &mut Rng::stream(0, Stream::Init))?;
    let report = check_total_gradients(&model, &x, &meta, &LossConfig::default(), 1e-5, 1e-5)?;
    println!(
        "checked {} entries: max relative error {:.3e} (analytic {:.6e}, numeric {:.6e}) -> {}",
        report.entries_checked,
        report.max_rel_error,
        report.analytic,
        report.numeric,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(())
}
