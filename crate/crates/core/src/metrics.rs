//! Evaluation: AUROC, strong and weak MCC, PC1 separation, a linear group
//! probe, and Gaussian KDE.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::fmt_real;
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::linalg::{hungarian, least_squares, symmetric_eigen};
use crate::numerics::{Matrix, Rng, Stream};

/// Mann–Whitney AUROC: concordant pairs plus half the tied pairs, over
/// `#pos × #neg`. Computed from average ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "auroc",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::metric("auroc: non-finite score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.iter().filter(|&&y| y == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::metric("auroc: labels must be 0 or 1"));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::metric("auroc: both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied average ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share (i+1 + j+1)/2.
        let twice_avg = (i + 1 + j + 1) as u128;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_avg * pos_in_block;
        i = j + 1;
    }
    let np = n_pos as u128;
    // 2U = 2·R_pos − np(np+1)
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

fn column_stats(m: &Matrix, which: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = m.rows() as f64;
    let means = m.column_means().into_vec();
    let mut sds = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            sds[j] += (v - means[j]).powi(2);
        }
    }
    for (j, s) in sds.iter_mut().enumerate() {
        *s = (*s / b).sqrt();
        if !(*s > 1e-300) || !s.is_finite() {
            return Err(Error::metric(format!("zero-variance column {j} in {which}")));
        }
    }
    Ok((means, sds))
}

/// `|Pearson|` between every column of `a` and every column of `b`.
pub fn abs_correlation(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "correlation",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.rows() < 3 {
        return Err(Error::metric(format!("correlation needs at least 3 rows, got {}", a.rows())));
    }
    let (ma, sa) = column_stats(a, "first argument")?;
    let (mb, sb) = column_stats(b, "second argument")?;
    let n = a.rows() as f64;
    let mut c = Matrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let ra = a.row(r);
        let rb = b.row(r);
        for i in 0..a.cols() {
            let da = ra[i] - ma[i];
            for j in 0..b.cols() {
                c[(i, j)] += da * (rb[j] - mb[j]);
            }
        }
    }
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            c[(i, j)] = (c[(i, j)] / (n * sa[i] * sb[j])).abs().min(1.0);
        }
    }
    Ok(c)
}

/// Mean matched `|Pearson|` under the best one-to-one column matching.
///
/// With different column counts, every column of the narrower argument is
/// matched and the mean runs over those.
pub fn mcc_strong(a: &Matrix, b: &Matrix) -> Result<f64> {
    let corr = abs_correlation(a, b)?;
    let corr = if corr.rows() <= corr.cols() { corr } else { corr.transpose() };
    let cost = corr.map(|v| -v);
    let assignment = hungarian(&cost)?;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| corr[(i, j)]).sum();
    Ok(total / assignment.len() as f64)
}

/// Least-squares affine map from `b` onto `a`, applied to `b`.
pub fn affine_align(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "affine_align",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if b.rows() <= b.cols() {
        return Err(Error::metric(format!(
            "affine alignment needs more rows than columns, got {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    let design = b.hstack(&Matrix::filled(b.rows(), 1, 1.0))?;
    let beta = least_squares(&design, a)?;
    design.matmul(&beta)
}

/// Strong MCC after the best affine map from `b` to `a`. When `b` is the
/// narrower side the map runs the other way, so every matched column is
/// predicted from the full wider representation.
pub fn mcc_weak(a: &Matrix, b: &Matrix) -> Result<f64> {
    column_stats(a, "first argument")?;
    column_stats(b, "second argument")?;
    if b.cols() < a.cols() {
        return mcc_strong(&affine_align(b, a)?, b);
    }
    let aligned = affine_align(a, b)?;
    mcc_strong(a, &aligned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pc1 {
    /// Unit vector; its largest-magnitude coordinate is positive.
    pub direction: Vec<f64>,
    /// Centered projections onto `direction`.
    pub projections: Vec<f64>,
    /// Top eigenvalue of the sample covariance.
    pub explained_variance: f64,
    /// `explained_variance / trace`.
    pub explained_ratio: f64,
}

pub fn covariance(z: &Matrix) -> Result<Matrix> {
    if z.rows() < 2 {
        return Err(Error::metric(format!("covariance needs at least 2 rows, got {}", z.rows())));
    }
    let c = z.centered();
    Ok(c.t_matmul(&c)?.scale(1.0 / (z.rows() - 1) as f64))
}

pub fn pca_pc1(z: &Matrix) -> Result<Pc1> {
    let cov = covariance(z)?;
    let trace: f64 = (0..cov.rows()).map(|i| cov[(i, i)]).sum();
    if !(trace > 0.0) {
        return Err(Error::metric("pca: zero covariance"));
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut direction = vectors.col(0);
    let lead = direction
        .iter()
        .copied()
        .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if lead < 0.0 { -1.0 } else { 1.0 };
    for v in &mut direction {
        *v *= sign / norm;
    }
    let centered = z.centered();
    let projections = (0..z.rows())
        .map(|i| centered.row(i).iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    Ok(Pc1 {
        direction,
        projections,
        explained_variance: values[0],
        explained_ratio: values[0] / trace,
    })
}

/// Class-centroid separation along PC1. Class 0 is "no finding", class 1
/// is "disease".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub c_nf: f64,
    pub c_d: f64,
    pub c_max: f64,
    pub c_min: f64,
    /// `(c_max − c_min)²`
    pub s: f64,
    /// `(c_nf − c_d)² / s`
    pub delta: f64,
}

pub fn separation_from_projections(p: &[f64], labels: &[u8]) -> Result<SeparationReport> {
    if p.len() != labels.len() {
        return Err(Error::Shape {
            op: "separation",
            left: (p.len(), 1),
            right: (labels.len(), 1),
        });
    }
    let mean_of = |class: u8| -> Result<f64> {
        let vals: Vec<f64> = p.iter().zip(labels).filter(|(_, &y)| y == class).map(|(v, _)| *v).collect();
        if vals.is_empty() {
            return Err(Error::metric(format!("separation: class {class} absent")));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let c_nf = mean_of(0)?;
    let c_d = mean_of(1)?;
    let c_max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let s = (c_max - c_min).powi(2);
    if !(s > 0.0) {
        return Err(Error::metric("separation: degenerate PC1 range"));
    }
    Ok(SeparationReport {
        c_nf,
        c_d,
        c_max,
        c_min,
        s,
        delta: (c_nf - c_d).powi(2) / s,
    })
}

pub fn separation_delta(z: &Matrix, labels: &[u8]) -> Result<SeparationReport> {
    let pc = pca_pc1(z)?;
    separation_from_projections(&pc.projections, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub l2: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.7,
            l2: 1e-3,
            iterations: 2000,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Majority-group rate on the held-out part.
    pub chance: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Row permutation split for the probe.
pub fn probe_split(n: usize, cfg: &ProbeConfig) -> (Vec<usize>, Vec<usize>) {
    let order = Rng::stream(cfg.seed, Stream::Probe).permutation(n);
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    (order[..n_train].to_vec(), order[n_train..].to_vec())
}

/// Standardize with train-part statistics; constant columns map to zero.
pub fn standardize(z: &Matrix, train: &[usize]) -> Matrix {
    let t = z.select_rows(train);
    let means = t.column_means().into_vec();
    let mut sds = vec![0.0; z.cols()];
    for i in 0..t.rows() {
        for (j, v) in t.row(i).iter().enumerate() {
            sds[j] += (v - means[j]).powi(2);
        }
    }
    for s in &mut sds {
        *s = (*s / t.rows() as f64).sqrt();
    }
    let mut out = z.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = if sds[j] > 1e-12 { (*v - means[j]) / sds[j] } else { 0.0 };
        }
    }
    out
}

fn softmax_rows(logits: &mut Matrix) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Multinomial logistic regression with L2 on the weights, fitted by
/// full-batch gradient descent with a step from the curvature bound.
/// Returns `(weights d×K, bias 1×K)`.
pub fn fit_softmax(x: &Matrix, y: &[usize], k: usize, l2: f64, iterations: usize) -> Result<(Matrix, Matrix)> {
    let n = x.rows() as f64;
    let gram = x.t_matmul(x)?.scale(1.0 / n);
    let (eig, _) = symmetric_eigen(&gram)?;
    // softmax CE Hessian ≤ ½ (‖x‖² + 1) per sample; +1 for the bias
    let lipschitz = 0.5 * (eig[0].max(0.0) + 1.0) + l2;
    let step = 1.0 / lipschitz;
    let mut w = Matrix::zeros(x.cols(), k);
    let mut b = Matrix::zeros(1, k);
    for _ in 0..iterations {
        let mut p = x.matmul(&w)?;
        for i in 0..p.rows() {
            for (j, v) in p.row_mut(i).iter_mut().enumerate() {
                *v += b[(0, j)];
            }
        }
        softmax_rows(&mut p);
        for (i, &yi) in y.iter().enumerate() {
            p[(i, yi)] -= 1.0;
        }
        let gw = x.t_matmul(&p)?.scale(1.0 / n).add(&w.scale(l2))?;
        let gb = p.column_means();
        w = w.sub(&gw.scale(step))?;
        b = b.sub(&gb.scale(step))?;
    }
    Ok((w, b))
}

pub fn group_probe_with(z: &Matrix, groups: &[usize], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if z.rows() != groups.len() {
        return Err(Error::Shape {
            op: "group_probe",
            left: z.shape(),
            right: (groups.len(), 1),
        });
    }
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let present = (0..k).filter(|g| groups.contains(g)).count();
    if present < 2 {
        return Err(Error::metric("group probe needs at least 2 groups"));
    }
    if z.rows() < 4 {
        return Err(Error::metric("group probe needs at least 4 samples"));
    }
    let (train, test) = probe_split(z.rows(), cfg);
    let zs = standardize(z, &train);
    let xt = zs.select_rows(&train);
    let yt: Vec<usize> = train.iter().map(|&i| groups[i]).collect();
    let (w, b) = fit_softmax(&xt, &yt, k, cfg.l2, cfg.iterations)?;
    let scores = zs.select_rows(&test).matmul(&w)?;
    let mut correct = 0usize;
    let mut counts = vec![0usize; k];
    for (r, &i) in test.iter().enumerate() {
        let row = scores.row(r);
        let pred = (0..k)
            .max_by(|&a, &c| (row[a] + b[(0, a)]).total_cmp(&(row[c] + b[(0, c)])).then(c.cmp(&a)))
            .expect("k ≥ 2");
        correct += usize::from(pred == groups[i]);
        counts[groups[i]] += 1;
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        chance: *counts.iter().max().expect("k ≥ 2") as f64 / test.len() as f64,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// Held-out accuracy of a linear probe predicting group from `z`.
pub fn group_probe(z: &Matrix, groups: &[usize]) -> Result<f64> {
    Ok(group_probe_with(z, groups, &ProbeConfig::default())?.accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    pub fn trapezoid(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Silverman's rule: `0.9 · min(σ, IQR/1.34) · n^(−1/5)`, falling back to
/// `σ` when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::metric("bandwidth needs at least 2 values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::metric("bandwidth: values have zero spread"));
    }
    Ok(h)
}

/// Gaussian-kernel density on `grid` evenly spaced points over
/// `[min − 3h, max + 3h]`, rescaled so the trapezoid integral is 1 on that
/// window.
pub fn kde(values: &[f64], bandwidth: f64, grid: usize) -> Result<KdeCurve> {
    if grid < 2 {
        return Err(Error::metric("kde grid needs at least 2 points"));
    }
    if values.is_empty() {
        return Err(Error::metric("kde needs at least 2 values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    kde_on_grid(values, bandwidth, linspace(lo, hi, grid))
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Gaussian-kernel density evaluated on a caller-supplied ascending grid,
/// rescaled so the trapezoid integral over the grid is 1.
pub fn kde_on_grid(values: &[f64], bandwidth: f64, grid: Vec<f64>) -> Result<KdeCurve> {
    if values.len() < 2 {
        return Err(Error::metric("kde needs at least 2 values"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::metric(format!("kde bandwidth must be positive, got {bandwidth}")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::metric("kde grid needs at least 2 strictly ascending points"));
    }
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    let mass = trapezoid(&grid, &density);
    if !(mass > 0.0) {
        return Err(Error::metric("kde grid does not cover the data"));
    }
    for d in &mut density {
        *d /= mass;
    }
    Ok(KdeCurve {
        bandwidth,
        grid,
        density,
    })
}

/// Per-run evaluation numbers. Ground-truth metrics are absent for data
/// without latent columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    /// φ outputs vs ground-truth content.
    pub mcc_strong: Option<f64>,
    pub mcc_weak: Option<f64>,
    /// φ outputs vs ground-truth style (weak); lower means more invariant.
    pub mcc_weak_style: Option<f64>,
    pub delta: f64,
    pub separation: SeparationReport,
    pub group_probe_acc: Option<f64>,
    pub group_probe_chance: Option<f64>,
    pub bce: f64,
    pub n_eval: usize,
}

/// Evaluation-set size, seed, and optional metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_eval: usize,
    pub eval_seed: u64,
    pub group_probe: bool,
    /// MCC against ground-truth latents when the data carries them.
    pub ground_truth_mcc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_eval: 1000,
            eval_seed: 12345,
            group_probe: true,
            ground_truth_mcc: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_eval < 4 {
            return Err(Error::config("eval.n_eval", "must be at least 4"));
        }
        Ok(())
    }
}

/// Rows of `ds` used for evaluation: `n_eval` rows drawn by the shared
/// evaluation seed, or all rows when the split is smaller.
pub fn eval_indices(ds: &GroupedDataset, n_eval: usize, eval_seed: u64) -> Vec<usize> {
    if n_eval >= ds.len() {
        return ds.all_indices();
    }
    let mut idx = Rng::stream(eval_seed, Stream::Eval).permutation(ds.len());
    idx.truncate(n_eval);
    idx.sort_unstable();
    idx
}

/// Logit AUROC and BCE over a whole split.
pub fn classification_metrics(model: &ModelParams, ds: &GroupedDataset) -> Result<(f64, f64)> {
    let idx = ds.all_indices();
    let logits = model.logits(&ds.x_matrix(&idx))?;
    let labels = ds.labels(&idx);
    Ok((auroc(&logits, &labels)?, crate::losses::bce_with_logits(&labels, &logits)?))
}

pub fn evaluate(model: &ModelParams, ds: &GroupedDataset, cfg: &EvalConfig) -> Result<MetricsReport> {
    let (auc, bce) = classification_metrics(model, ds)?;
    let idx = eval_indices(ds, cfg.n_eval, cfg.eval_seed);
    let z = model.embed(&ds.x_matrix(&idx))?;
    let labels = ds.labels(&idx);
    let groups = ds.groups(&idx);
    let separation = separation_delta(&z, &labels)?;
    let (mcc_strong, mcc_weak, mcc_weak_style) = match (ds.content_matrix(&idx), ds.style_matrix(&idx)) {
        (Some(c), s) if cfg.ground_truth_mcc => (
            Some(self::mcc_strong(&c, &z)?),
            Some(self::mcc_weak(&c, &z)?),
            match s {
                Some(s) if s.cols() > 0 => Some(self::mcc_weak(&s, &z)?),
                _ => None,
            },
        ),
        _ => (None, None, None),
    };
    let probe = if cfg.group_probe && groups.iter().any(|&g| g != groups[0]) {
        Some(group_probe_with(&z, &groups, &ProbeConfig::default())?)
    } else {
        None
    };
    Ok(MetricsReport {
        auroc: auc,
        mcc_strong,
        mcc_weak,
        mcc_weak_style,
        delta: separation.delta,
        separation,
        group_probe_acc: probe.as_ref().map(|p| p.accuracy),
        group_probe_chance: probe.as_ref().map(|p| p.chance),
        bce,
        n_eval: idx.len(),
    })
}

/// Pairwise MCC between runs' representations of one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMcc {
    pub strong: Vec<Vec<f64>>,
    /// `weak[i][j]` aligns run `j` onto run `i`.
    pub weak: Vec<Vec<f64>>,
    pub mean_strong: f64,
    pub mean_weak: f64,
}

pub fn pairwise_mcc(embeddings: &[Matrix]) -> Result<PairwiseMcc> {
    let r = embeddings.len();
    if r < 2 {
        return Err(Error::metric(format!("pairwise MCC needs at least 2 runs, got {r}")));
    }
    let (b, n) = embeddings[0].shape();
    for (i, e) in embeddings.iter().enumerate() {
        if e.shape() != (b, n) {
            return Err(Error::metric(format!(
                "run {i} has {}x{} representations, run 0 has {b}x{n}",
                e.rows(),
                e.cols()
            )));
        }
    }
    let mut strong = vec![vec![1.0; r]; r];
    let mut weak = vec![vec![1.0; r]; r];
    let (mut s_sum, mut w_sum) = (0.0, 0.0);
    for i in 0..r {
        for j in 0..r {
            if i == j {
                continue;
            }
            if i < j {
                let s = mcc_strong(&embeddings[i], &embeddings[j])?;
                strong[i][j] = s;
                strong[j][i] = s;
                s_sum += 2.0 * s;
            }
            let w = mcc_weak(&embeddings[i], &embeddings[j])?;
            weak[i][j] = w;
            w_sum += w;
        }
    }
    let pairs = (r * (r - 1)) as f64;
    Ok(PairwiseMcc {
        strong,
        weak,
        mean_strong: s_sum / pairs,
        mean_weak: w_sum / pairs,
    })
}

/// Representations with labels and groups, as exchanged through
/// `z0..z{N-1},y,group` CSV files.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub z: Matrix,
    pub labels: Vec<u8>,
    pub groups: Vec<usize>,
}

pub fn save_embeddings(e: &Embeddings, path: &Path) -> Result<()> {
    let mut out: Vec<String> = (0..e.z.cols()).map(|i| format!("z{i}")).collect();
    out.push("y".into());
    out.push("group".into());
    let mut text = out.join(",");
    text.push('\n');
    for i in 0..e.z.rows() {
        let fields: Vec<String> = e.z.row(i).iter().map(|&v| fmt_real(v)).collect();
        let _ = writeln!(text, "{},{},{}", fields.join(","), e.labels[i], e.groups[i]);
    }
    fs::write(path, text).map_err(|err| Error::io(path, err))
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
    let p = path.display().to_string();
    let perr = |line: usize, field: &str, message: String| Error::Parse {
        path: p.clone(),
        line,
        field: field.into(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let n = header.len().saturating_sub(2);
    let expected: Vec<String> = (0..n).map(|i| format!("z{i}")).chain(["y".into(), "group".into()]).collect();
    if n == 0 || header != expected {
        let bad = header
            .iter()
            .zip(&expected)
            .find(|(h, e)| **h != e.as_str())
            .map_or("header", |(h, _)| *h);
        return Err(perr(1, bad, "expected columns z0..z{N-1},y,group".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n + 2 {
            return Err(perr(lineno, "row", format!("expected {} fields, found {}", n + 2, f.len())));
        }
        for (j, v) in f[..n].iter().enumerate() {
            let v: f64 = v.trim().parse().map_err(|_| perr(lineno, header[j], format!("not a number: `{v}`")))?;
            data.push(v);
        }
        labels.push(match f[n].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(lineno, "y", format!("label must be 0 or 1, got `{other}`"))),
        });
        groups.push(
            f[n + 1]
                .trim()
                .parse()
                .map_err(|_| perr(lineno, "group", format!("not a group index: `{}`", f[n + 1])))?,
        );
    }
    let rows = labels.len();
    Ok(Embeddings {
        z: Matrix::from_vec(rows, n, data)?,
        labels,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_perfect_and_ties() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 1, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn mcc_of_permuted_signflip_is_one() {
        let mut rng = Rng::new(1);
        let a = Matrix::from_vec(50, 3, (0..150).map(|_| rng.normal()).collect()).unwrap();
        let mut b = Matrix::zeros(50, 3);
        for i in 0..50 {
            b[(i, 0)] = -2.0 * a[(i, 2)];
            b[(i, 1)] = a[(i, 0)] + 5.0;
            b[(i, 2)] = 0.5 * a[(i, 1)];
        }
        assert!((mcc_strong(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_column_is_named() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 2.0], vec![3.0, 2.0]]);
        let err = mcc_strong(&a, &a).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
    }

    #[test]
    fn weak_recovers_affine() {
        let mut rng = Rng::new(2);
        let a = Matrix::from_vec(200, 2, (0..400).map(|_| rng.normal()).collect()).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 1.0]]);
        let b = a.matmul(&m).unwrap().add(&Matrix::filled(200, 2, 3.0)).unwrap();
        assert!((mcc_weak(&a, &b).unwrap() - 1.0).abs() < 1e-8);
        assert!(mcc_strong(&a, &b).unwrap() < 0.99);
    }

    #[test]
    fn pc1_axis_aligned() {
        let pc = pca_pc1(&Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
        assert!((pc.direction[0] - 1.0).abs() < 1e-12 && pc.direction[1].abs() < 1e-12);
        assert!((pc.projections[0] - 1.0).abs() < 1e-12 && (pc.projections[1] + 1.0).abs() < 1e-12);
        assert!(pca_pc1(&Matrix::filled(3, 2, 1.0)).is_err());
    }

    #[test]
    fn delta_hand_example() {
        let r = separation_from_projections(&[0.0, 0.2, 0.8, 1.0], &[0, 0, 1, 1]).unwrap();
        assert!((r.c_nf - 0.1).abs() < 1e-12);
        assert!((r.c_d - 0.9).abs() < 1e-12);
        assert!((r.s - 1.0).abs() < 1e-12);
        assert!((r.delta - 0.64).abs() < 1e-12);
    }

    #[test]
    fn probe_extremes() {
        let n = 200;
        let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let onehot = Matrix::from_vec(n, 2, groups.iter().flat_map(|&g| [f64::from(g == 0), f64::from(g == 1)]).collect()).unwrap();
        assert_eq!(group_probe(&onehot, &groups).unwrap(), 1.0);
        let constant = Matrix::filled(n, 3, 0.4);
        let r = group_probe_with(&constant, &groups, &ProbeConfig::default()).unwrap();
        assert!(r.accuracy <= r.chance + 1e-12);
        assert!(group_probe(&constant, &[0; 200]).is_err());
    }

    #[test]
    fn kde_integrates_to_one_and_is_bimodal() {
        let mut v: Vec<f64> = (0..50).map(|i| -3.0 + 0.01 * i as f64).collect();
        v.extend((0..50).map(|i| 3.0 + 0.01 * i as f64));
        let c = kde(&v, silverman_bandwidth(&v).unwrap(), 512).unwrap();
        assert!((c.trapezoid() - 1.0).abs() < 1e-3);
        let peaks = (1..c.density.len() - 1)
            .filter(|&i| c.density[i] > c.density[i - 1] && c.density[i] >= c.density[i + 1])
            .count();
        assert_eq!(peaks, 2);
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        let e = Embeddings {
            z: Matrix::from_rows(&[vec![0.1, 0.2], vec![1.0 / 3.0, 0.7]]),
            labels: vec![0, 1],
            groups: vec![1, 0],
        };
        save_embeddings(&e, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), e);
        assert_eq!(load_embeddings(&dir.path().join("nope.csv")).unwrap_err().exit_code(), 4);
    }
}
