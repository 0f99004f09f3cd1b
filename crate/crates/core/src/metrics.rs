//! Similarity metrics between generated and real segments, and the summary
//! statistics used for reporting them.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Segment;

pub const DUPLICATE_THRESHOLD: f64 = 0.8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_BINS: usize = 30;

fn check_pair(x: &[f64], g: &[f64], what: &str) -> Result<()> {
    if x.len() != g.len() {
        return Err(Error::Dimension(format!(
            "{what}: segment lengths differ ({} vs {})",
            x.len(),
            g.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Dimension(format!("{what}: segments need at least 2 samples")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample (n - 1) variance.
fn variance(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn covariance(x: &[f64], mx: f64, g: &[f64], mg: f64) -> f64 {
    x.iter().zip(g).map(|(a, b)| (a - mx) * (b - mg)).sum::<f64>() / (x.len() - 1) as f64
}

/// Fréchet distance between the scalar Gaussians fitted to two segments.
///
/// The trace form `(mx - mg)^2 + cx + cg - 2 sqrt(cx cg)` is evaluated as
/// `(mx - mg)^2 + (sqrt(cx) - sqrt(cg))^2`, which is the same quantity without
/// cancellation.
pub fn fid_pair(x: &[f64], g: &[f64]) -> Result<f64> {
    check_pair(x, g, "fid_pair")?;
    let (mx, mg) = (mean(x), mean(g));
    let (cx, cg) = (variance(x, mx), variance(g, mg));
    let dm = mx - mg;
    let ds = cx.sqrt() - cg.sqrt();
    Ok(dm * dm + ds * ds)
}

fn windows(set: &[Segment], dim: usize) -> Vec<&[f64]> {
    set.iter().flat_map(|s| s.values.chunks_exact(dim)).collect()
}

fn moments(obs: &[&[f64]], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = obs.len() as f64;
    let mut mu = DVector::zeros(dim);
    for o in obs {
        for (i, v) in o.iter().enumerate() {
            mu[i] += v;
        }
    }
    mu /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for o in obs {
        let d = DVector::from_iterator(dim, o.iter().zip(mu.iter()).map(|(v, m)| v - m));
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    (mu, cov)
}

fn sym_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))
}

/// Clamps tiny negative eigenvalues to zero and rejects meaningful ones.
fn checked_eigenvalues(values: &DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let radius = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    values
        .iter()
        .map(|&v| {
            if v < -1e-8 * radius {
                Err(Error::Numerical(format!(
                    "{what} has eigenvalue {v:e} (spectral radius {radius:e})"
                )))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let roots: Vec<f64> = checked_eigenvalues(&eig.eigenvalues, "covariance")?
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(roots));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to `dim`-long windows pooled
/// from every segment of each set.
pub fn fid_multivariate(x_set: &[Segment], g_set: &[Segment], dim: usize) -> Result<f64> {
    if dim == 0 {
        return Err(Error::Parameter("window dimension must be at least 1".into()));
    }
    let (ox, og) = (windows(x_set, dim), windows(g_set, dim));
    if ox.len() < 2 || og.len() < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 windows of length {dim} per set, got {} and {}",
            ox.len(),
            og.len()
        )));
    }
    let (mx, cx) = moments(&ox, dim);
    let (mg, cg) = moments(&og, dim);
    let root_x = psd_sqrt(cx.clone())?;
    let inner = &root_x * &cg * &root_x;
    let eig = sym_eigen(inner)?;
    let trace_sqrt: f64 = checked_eigenvalues(&eig.eigenvalues, "covariance product")?
        .into_iter()
        .map(f64::sqrt)
        .sum();
    let value = (&mx - &mg).norm_squared() + cx.trace() + cg.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

/// How the dynamic range `L` of an SSIM comparison is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// max - min over both segments together.
    #[default]
    Union,
    /// max - min of the first (reference) segment.
    Reference,
    Fixed(f64),
}

fn range_of(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

/// Global structural similarity of two equal-length segments.
pub fn ssim(x: &[f64], g: &[f64], k1: f64, k2: f64, range_mode: RangeMode) -> Result<f64> {
    check_pair(x, g, "ssim")?;
    let (lx, hx) = range_of(x);
    let (lg, hg) = range_of(g);
    let l = match range_mode {
        RangeMode::Union => hx.max(hg) - lx.min(lg),
        RangeMode::Reference => hx - lx,
        RangeMode::Fixed(v) => v,
    };
    if l == 0.0 && x == g {
        return Ok(1.0);
    }
    let c1 = (k1 * l).powi(2);
    let c2 = (k2 * l).powi(2);
    let (mx, mg) = (mean(x), mean(g));
    let (vx, vg) = (variance(x, mx), variance(g, mg));
    let cov = covariance(x, mx, g, mg);
    let num = (2.0 * mx * mg + c1) * (2.0 * cov + c2);
    let den = (mx * mx + mg * mg + c1) * (vx + vg + c2);
    if den == 0.0 {
        return Ok(if x == g { 1.0 } else { 0.0 });
    }
    Ok((num / den).clamp(-1.0, 1.0))
}

/// SSIM with the default constants and union range.
pub fn ssim_default(x: &[f64], g: &[f64]) -> Result<f64> {
    ssim(x, g, SSIM_K1, SSIM_K2, RangeMode::Union)
}

/// One score between generated segment `gen_index` and segment `ref_index`
/// (a real segment, or another generated one for diversity).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub gen_index: usize,
    pub ref_index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.bins()).map(|i| self.density[i] * self.width(i)).sum()
    }
}

/// Equal-width histogram over `[min, max]` scaled to a density.
///
/// When every value is equal the result is one bin of unit width centred on
/// that value, so density and mass are both 1.
pub fn histogram_pdf(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::Parameter("histogram needs values and at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("histogram values must be finite".into()));
    }
    let (lo, hi) = range_of(values);
    let n = values.len();
    if hi == lo {
        return Ok(Histogram {
            edges: vec![lo - 0.5, lo + 0.5],
            counts: vec![n],
            density: vec![1.0],
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let density = counts
        .iter()
        .enumerate()
        .map(|(i, c)| *c as f64 / (n as f64 * (edges[i + 1] - edges[i])))
        .collect();
    Ok(Histogram {
        edges,
        counts,
        density,
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(quantile_sorted(&sorted(values), 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quartiles by linear interpolation, whiskers at the most extreme values
/// within 1.5 IQR of the box.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Parameter("box_stats needs at least one value".into()));
    }
    let s = sorted(values);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= fence_lo && *v <= fence_hi).collect();
    Ok(BoxStats {
        min: s[0],
        q1,
        median: quantile_sorted(&s, 0.5),
        q3,
        max: s[s.len() - 1],
        whisker_low: inside.first().copied().unwrap_or(q1).min(q1),
        whisker_high: inside.last().copied().unwrap_or(q3).max(q3),
        outliers: s.iter().copied().filter(|v| *v < fence_lo || *v > fence_hi).collect(),
    })
}

/// Gaussian kernel density estimate on `points` evenly spaced grid points,
/// bandwidth by Silverman's rule of thumb.
pub fn kde(values: &[f64], points: usize) -> Result<Vec<(f64, f64)>> {
    if values.len() < 2 || points < 2 {
        return Err(Error::Parameter("kde needs at least 2 values and 2 grid points".into()));
    }
    let s = sorted(values);
    let n = s.len() as f64;
    let m = mean(&s);
    let sd = variance(&s, m).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => 1e-3 * m.abs().max(1.0),
    };
    let h = 0.9 * spread * n.powf(-0.2);
    let (lo, hi) = (s[0] - 3.0 * h, s[s.len() - 1] + 3.0 * h);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let d = s.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, d)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    /// Centre of the densest histogram bin.
    pub pdf_mode: f64,
}

/// Summary of a score set. Statistics are taken over the sorted values, so
/// they do not depend on input order.
pub fn summarize(values: &[f64], hist: &Histogram) -> ScoreSummary {
    let s = sorted(values);
    let m = mean(&s);
    let mode_bin = (0..hist.bins())
        .max_by(|a, b| {
            hist.density[*a]
                .partial_cmp(&hist.density[*b])
                .unwrap_or(Ordering::Equal)
                .then(b.cmp(a))
        })
        .unwrap_or(0);
    ScoreSummary {
        count: s.len(),
        mean: m,
        variance: if s.len() > 1 { variance(&s, m) } else { 0.0 },
        median: quantile_sorted(&s, 0.5),
        pdf_mode: hist.center(mode_bin),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub threshold: f64,
    pub scores: Vec<PairScore>,
    pub summary: ScoreSummary,
    pub histogram: Histogram,
    pub duplicates: Vec<PairScore>,
}

impl EvalReport {
    fn from_scores(metric: &str, threshold: f64, scores: Vec<PairScore>) -> Result<Self> {
        let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
        let histogram = histogram_pdf(&values, DEFAULT_BINS)?;
        let summary = summarize(&values, &histogram);
        let duplicates = scores.iter().copied().filter(|s| s.value > threshold).collect();
        Ok(EvalReport {
            metric: metric.into(),
            threshold,
            scores,
            summary,
            histogram,
            duplicates,
        })
    }

    pub fn duplicate_count(&self) -> usize {
        self.duplicates.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.value).collect()
    }

    pub fn write_scores_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "gen_index,ref_index,{}", self.metric)?;
        for s in &self.scores {
            writeln!(out, "{},{},{}", s.gen_index, s.ref_index, s.value)?;
        }
        Ok(())
    }
}

/// SSIM of every (generated, real) pair; pairs above `threshold` are
/// reported as duplicates of real data.
pub fn creativity_report(gen: &[Segment], real: &[Segment], threshold: f64) -> Result<EvalReport> {
    if gen.is_empty() || real.is_empty() {
        return Err(Error::Parameter("creativity report needs generated and real segments".into()));
    }
    let mut scores = Vec::with_capacity(gen.len() * real.len());
    for (i, g) in gen.iter().enumerate() {
        for (j, r) in real.iter().enumerate() {
            scores.push(PairScore {
                gen_index: i,
                ref_index: j,
                value: ssim_default(&g.values, &r.values)?,
            });
        }
    }
    EvalReport::from_scores("ssim", threshold, scores)
}

/// SSIM over distinct unordered pairs of generated segments.
pub fn diversity_report(gen: &[Segment], threshold: f64) -> Result<EvalReport> {
    if gen.len() < 2 {
        return Err(Error::Parameter("diversity report needs at least 2 segments".into()));
    }
    let mut scores = Vec::with_capacity(gen.len() * (gen.len() - 1) / 2);
    for i in 0..gen.len() {
        for j in i + 1..gen.len() {
            scores.push(PairScore {
                gen_index: i,
                ref_index: j,
                value: ssim_default(&gen[i].values, &gen[j].values)?,
            });
        }
    }
    EvalReport::from_scores("ssim", threshold, scores)
}

/// Per-pair FID between each generated segment and its partner in `real`.
/// `partners[i]` is the real index paired with generated segment `i`.
pub fn fid_report(gen: &[Segment], real: &[Segment], partners: &[usize]) -> Result<EvalReport> {
    if gen.is_empty() || gen.len() != partners.len() {
        return Err(Error::Parameter("fid report needs one partner per generated segment".into()));
    }
    let scores = gen
        .iter()
        .zip(partners)
        .enumerate()
        .map(|(i, (g, j))| {
            let r = real.get(*j).ok_or_else(|| {
                Error::Parameter(format!("partner index {j} out of range for {} real segments", real.len()))
            })?;
            Ok(PairScore {
                gen_index: i,
                ref_index: *j,
                value: fid_pair(&r.values, &g.values)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores("fid", f64::INFINITY, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Condition, Source};

    fn seg(values: Vec<f64>) -> Segment {
        Segment {
            values,
            condition: Condition::Undamaged,
            joint_id: 0,
            source: Source::Real,
            segment_index: 0,
        }
    }

    #[test]
    fn fid_pair_examples() {
        let x = [0.3, -1.2, 4.0, 2.2];
        assert_eq!(fid_pair(&x, &x).unwrap(), 0.0);
        assert_eq!(fid_pair(&[0.0; 8], &[1.0; 8]).unwrap(), 1.0);
        // variances 4 and 1 with zero means
        let a = [2.0, -2.0, 2.0, -2.0];
        let b = [1.0, -1.0, 1.0, -1.0];
        let scale: f64 = 3.0 / 4.0; // n-1 correction: sample variance of a is 16/3
        let a: Vec<f64> = a.iter().map(|v| v * scale.sqrt()).collect();
        let b: Vec<f64> = b.iter().map(|v| v * scale.sqrt()).collect();
        assert!((fid_pair(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(fid_pair(&[1.0, 2.0], &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_examples() {
        let x = [0.5, -0.25, 1.0, 0.0, -1.0];
        assert_eq!(ssim_default(&x, &x).unwrap(), 1.0);
        let g = [0.1, 0.2, -0.3, 0.9, 0.0];
        assert_eq!(ssim_default(&x, &g).unwrap(), ssim_default(&g, &x).unwrap());
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let centered: Vec<f64> = x.iter().map(|v| v - mean(&x)).collect();
        let neg_c: Vec<f64> = centered.iter().map(|v| -v).collect();
        assert!(ssim_default(&centered, &neg_c).unwrap() < 0.0);
        assert!(ssim_default(&x, &neg).unwrap() < 1.0);
        assert_eq!(ssim_default(&[2.0; 4], &[2.0; 4]).unwrap(), 1.0);
    }

    #[test]
    fn box_stats_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = box_stats(&v).unwrap();
        assert_eq!((b.median, b.q1, b.q3), (50.5, 25.75, 75.25));
        assert!(b.outliers.is_empty());
        let one = box_stats(&[3.5]).unwrap();
        assert_eq!(
            [one.min, one.q1, one.median, one.q3, one.max, one.whisker_low, one.whisker_high],
            [3.5; 7]
        );
        let mut v = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        v.push(100.0);
        let b = box_stats(&v).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.whisker_high, 5.0);
        assert!(b.min <= b.whisker_low && b.whisker_low <= b.q1 && b.q3 <= b.whisker_high);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram_pdf(&[7.0], 10).unwrap();
        assert_eq!(h.bins(), 1);
        assert_eq!(h.total_mass(), 1.0);
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let h = histogram_pdf(&v, 10).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert!(h.density.iter().all(|d| (d - 1.0).abs() < 0.11));
    }

    #[test]
    fn reports_count_pairs() {
        let segs: Vec<Segment> = (0..5).map(|i| seg(vec![i as f64, 1.0, -2.0, 0.5 * i as f64])).collect();
        let d = diversity_report(&segs, DUPLICATE_THRESHOLD).unwrap();
        assert_eq!(d.scores.len(), 10);
        let same = vec![seg(vec![1.0, 2.0, 0.0]); 4];
        let d = diversity_report(&same, DUPLICATE_THRESHOLD).unwrap();
        assert_eq!(d.duplicate_count(), 6);
        let c = creativity_report(&segs[..2], &segs[1..], DUPLICATE_THRESHOLD).unwrap();
        assert!(c.duplicates.iter().any(|p| p.gen_index == 1 && p.ref_index == 0));
    }

    #[test]
    fn kde_integrates_to_one() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 10.0).collect();
        let grid = kde(&v, 400).unwrap();
        let dx = grid[1].0 - grid[0].0;
        let area: f64 = grid.iter().map(|(_, d)| d * dx).sum();
        assert!((area - 1.0).abs() < 1e-2, "{area}");
    }
}
