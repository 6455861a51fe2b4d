//! Draw one grouped batch and show how samples are paired.

use crl_core::data::{generate, GenerativeSpec};
use crl_core::losses::Pairing;
use crl_core::numerics::{Rng, Stream};
use crl_core::sampler::{draw_grouped_batch, draw_iteration, partition_groups, SamplerConfig};

fn main() -> crl_core::Result<()> {
    let ds = generate(&GenerativeSpec::default(), 1000, &mut Rng::stream(0, Stream::Data))?;
    let cells = partition_groups(&ds);
    for g in 0..cells.num_groups() {
        println!("group {g}: {} negatives, {} positives", cells.get(g, 0).len(), cells.get(g, 1).len());
    }

    let mut rng = Rng::stream(0, Stream::Sampling);
    let cfg = SamplerConfig {
        samples_per_iteration: 4,
        ..SamplerConfig::default()
    };
    let it = draw_iteration(&cfg, &cells, &mut rng)?;
    println!("\none iteration with P = 4, class {}", it.y);
    for (row, group) in &it.samples {
        println!("  row {row:5} from group {group}");
    }
    println!("  pairs (positions): {:?}", it.pairs().collect::<Vec<_>>());

    let batch = draw_grouped_batch(&SamplerConfig::default(), &cells, 32, &mut rng)?;
    if let Pairing::Chain { pairs, rounds } = &batch.pairing {
        println!("\nbatch of {} rows, {rounds} rounds, {} pairs", batch.rows.len(), pairs.len());
        for &(a, b) in pairs.iter().take(4) {
            println!(
                "  ({a:2}, {b:2}): class {} / {}, group {} / {}",
                batch.labels[a], batch.labels[b], batch.groups[a], batch.groups[b]
            );
        }
    }
    Ok(())
}
