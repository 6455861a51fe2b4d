use serde::{Deserialize, Serialize};

use crate::data::{GroupedDataset, SplitTag, CLASSES};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Fractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("fractions", format!("all fractions must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("fractions", format!("fractions must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
}

/// Stratified split by `(group, class)` cell. Every cell contributes at least
/// one sample to each split; rows keep their original relative order.
pub fn split(ds: &GroupedDataset, fractions: Fractions, rng: &mut Rng) -> Result<Splits> {
    fractions.validate()?;
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for group in 0..ds.num_groups() {
        for &class in &CLASSES {
            let mut cell: Vec<usize> = ds
                .samples()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.group == group && s.y == class)
                .map(|(i, _)| i)
                .collect();
            let n = cell.len();
            if n < 3 {
                return Err(Error::Split(format!(
                    "cell (group {group}, class {class}) has {n} samples; at least 3 are needed"
                )));
            }
            rng.shuffle(&mut cell);
            let n_val = ((fractions.val * n as f64).round() as usize).max(1);
            let n_test = ((fractions.test * n as f64).round() as usize).max(1);
            let n_train = n.saturating_sub(n_val + n_test).max(1);
            // shrink the larger of val/test when rounding overshoots
            let (n_val, n_test) = if n_train + n_val + n_test > n {
                if n_val >= n_test {
                    (n - n_train - n_test, n_test)
                } else {
                    (n_val, n - n_train - n_val)
                }
            } else {
                (n_val, n_test)
            };
            parts[0].extend_from_slice(&cell[..n_train]);
            parts[1].extend_from_slice(&cell[n_train..n_train + n_val]);
            parts[2].extend_from_slice(&cell[n_train + n_val..]);
            debug_assert_eq!(n_train + n_val + n_test, n);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(Splits {
        train: ds.subset(&parts[0], SplitTag::Train)?,
        val: ds.subset(&parts[1], SplitTag::Val)?,
        test: ds.subset(&parts[2], SplitTag::Test)?,
    })
}
