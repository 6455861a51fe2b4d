//! Grouped sampling for invariant training and the IID sampler used by the
//! baseline and for evaluation.
//!
//! One grouped iteration draws a class `y` uniformly, then `P` groups, then
//! one sample of class `y` from each drawn group. Groups are either distinct
//! (a random permutation, repeated when `P > K`, never the same group twice in
//! a row) or drawn uniformly with replacement. A reference is picked uniformly among the `P` samples; walking the
//! samples in order, each is paired with the current reference, which then
//! becomes that sample. The first pair can therefore be a sample with
//! itself.

use serde::{Deserialize, Serialize};

use crate::data::{GroupedDataset, CLASSES};
use crate::error::{Error, Result};
use crate::losses::Pairing;
use crate::numerics::Rng;

/// Per-(group, class) row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Cells {
    /// `cells[group][class]`
    cells: Vec<Vec<Vec<usize>>>,
}

impl Cells {
    pub fn num_groups(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, group: usize, class: u8) -> &[usize] {
        &self.cells[group][class as usize]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().map(Vec::len).sum()
    }

    /// `(group, class)` pairs with no samples.
    pub fn empty_cells(&self) -> Vec<(usize, u8)> {
        let mut out = Vec::new();
        for (g, row) in self.cells.iter().enumerate() {
            for &c in &CLASSES {
                if row[c as usize].is_empty() {
                    out.push((g, c));
                }
            }
        }
        out
    }

    /// Error naming the first empty cell, if any.
    pub fn require_complete(&self) -> Result<()> {
        match self.empty_cells().first() {
            Some(&(g, c)) => Err(Error::Sampling(format!("empty cell (group {g}, class {c})"))),
            None => Ok(()),
        }
    }
}

pub fn partition_groups(ds: &GroupedDataset) -> Cells {
    let mut cells = vec![vec![Vec::new(); CLASSES.len()]; ds.num_groups()];
    for (i, s) in ds.samples().iter().enumerate() {
        cells[s.group][s.y as usize].push(i);
    }
    Cells { cells }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Invariant,
    Iid,
}

/// How the `P` groups of an iteration are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupDraw {
    /// Independent uniform draws; an iteration may repeat a group.
    WithReplacement,
    /// Uniform without replacement, so consecutive samples come from
    /// different groups. When `P > K` the draw restarts from a fresh
    /// permutation every `K` samples, never repeating the previous group.
    Distinct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Samples per iteration, at least 2.
    pub samples_per_iteration: usize,
    pub mode: SamplerMode,
    pub group_draw: GroupDraw,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            samples_per_iteration: 2,
            mode: SamplerMode::Invariant,
            group_draw: GroupDraw::Distinct,
        }
    }
}

fn draw_groups(p_count: usize, k: usize, how: GroupDraw, rng: &mut Rng) -> Vec<usize> {
    match how {
        GroupDraw::WithReplacement => (0..p_count).map(|_| rng.index(k)).collect(),
        GroupDraw::Distinct => {
            let mut out: Vec<usize> = Vec::with_capacity(p_count);
            while out.len() < p_count {
                let mut perm = rng.permutation(k);
                if k > 1 && out.last() == perm.first() {
                    perm.swap(0, k - 1);
                }
                out.extend(perm.into_iter().take(p_count - out.len()));
            }
            out
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingIteration {
    pub y: u8,
    /// `(dataset row, group)` in draw order.
    pub samples: Vec<(usize, usize)>,
    /// `reference_order[p]` is the position (within `samples`) that sample
    /// `p` is paired with.
    pub reference_order: Vec<usize>,
}

impl SamplingIteration {
    /// Chain pairs as positions within this iteration.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.reference_order.iter().enumerate().map(|(p, &r)| (p, r))
    }
}

pub fn draw_iteration(cfg: &SamplerConfig, cells: &Cells, rng: &mut Rng) -> Result<SamplingIteration> {
    let p_count = cfg.samples_per_iteration;
    if p_count < 2 {
        return Err(Error::config("samples_per_iteration", format!("must be at least 2, got {p_count}")));
    }
    let k = cells.num_groups();
    if k == 0 {
        return Err(Error::Sampling("no groups".into()));
    }
    let y = CLASSES[rng.index(CLASSES.len())];
    let groups = draw_groups(p_count, k, cfg.group_draw, rng);
    let mut samples = Vec::with_capacity(p_count);
    for g in groups {
        let cell = cells.get(g, y);
        if cell.is_empty() {
            return Err(Error::Sampling(format!("empty cell (group {g}, class {y})")));
        }
        samples.push((cell[rng.index(cell.len())], g));
    }
    let mut reference = rng.index(p_count);
    let mut reference_order = Vec::with_capacity(p_count);
    for p in 0..p_count {
        reference_order.push(reference);
        reference = p;
    }
    Ok(SamplingIteration {
        y,
        samples,
        reference_order,
    })
}

/// A training batch assembled from whole iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedBatch {
    pub rows: Vec<usize>,
    pub groups: Vec<usize>,
    pub labels: Vec<u8>,
    pub pairing: Pairing,
    pub iterations: Vec<SamplingIteration>,
}

/// `⌈batch_size / P⌉` independent iterations concatenated.
pub fn draw_grouped_batch(
    cfg: &SamplerConfig,
    cells: &Cells,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<GroupedBatch> {
    let p = cfg.samples_per_iteration.max(1);
    let rounds = batch_size.div_ceil(p).max(1);
    let mut batch = GroupedBatch {
        rows: Vec::new(),
        groups: Vec::new(),
        labels: Vec::new(),
        pairing: Pairing::Chain {
            pairs: Vec::new(),
            rounds,
        },
        iterations: Vec::with_capacity(rounds),
    };
    let mut pairs = Vec::new();
    for _ in 0..rounds {
        let it = draw_iteration(cfg, cells, rng)?;
        let offset = batch.rows.len();
        for &(row, g) in &it.samples {
            batch.rows.push(row);
            batch.groups.push(g);
            batch.labels.push(it.y);
        }
        pairs.extend(it.pairs().map(|(a, b)| (a + offset, b + offset)));
        batch.iterations.push(it);
    }
    batch.pairing = Pairing::Chain { pairs, rounds };
    Ok(batch)
}

/// Shuffled mini-batches without replacement; every epoch reshuffles.
#[derive(Clone, Debug)]
pub struct IidSampler {
    n: usize,
    batch_size: usize,
    rng: Rng,
}

impl IidSampler {
    pub fn new(n: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::contract(format!(
                "batch size {batch_size} must be in [1, {n}]"
            )));
        }
        Ok(IidSampler { n, batch_size, rng })
    }

    /// One epoch of batches covering every index exactly once; the last batch
    /// may be short.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let order = self.rng.permutation(self.n);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// First batch of a fresh epoch over `ds`.
pub fn draw_iid_batch(ds: &GroupedDataset, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if batch_size == 0 || batch_size > ds.len() {
        return Err(Error::contract(format!(
            "batch size {batch_size} must be in [1, {}]",
            ds.len()
        )));
    }
    let order = rng.permutation(ds.len());
    Ok(order[..batch_size].to_vec())
}
