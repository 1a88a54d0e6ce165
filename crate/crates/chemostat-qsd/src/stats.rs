//! Small statistics toolbox: sample moments, binomial errors, 2-d empirical
//! histograms with total-variation distance, bootstrap resampling and the
//! survival-decay fit used for the extinction-rate estimator.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of an empirical proportion.
pub fn binomial_se(p_hat: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Shared binning for empirical laws on `N* x (s_lo, s_hi)`: rows are
/// `x = 1..=x_cap` plus one overflow row, columns are `s_bins` equal-width
/// substrate bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramSpec {
    pub x_cap: u64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub s_bins: usize,
}

impl HistogramSpec {
    pub fn new(x_cap: u64, s_lo: f64, s_hi: f64, s_bins: usize) -> Result<Self> {
        if x_cap == 0 || s_bins == 0 || !(s_hi > s_lo) {
            return Err(Error::Config(format!(
                "invalid histogram spec: x_cap = {x_cap}, s in [{s_lo}, {s_hi}], {s_bins} bins"
            )));
        }
        Ok(HistogramSpec { x_cap, s_lo, s_hi, s_bins })
    }

    /// Derives `x_cap` as the 99.9th percentile of the sampled counts
    /// (overflow bin catches the rest).
    pub fn from_samples(samples: &[(u64, f64)], s_lo: f64, s_hi: f64, s_bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Power("cannot derive a histogram spec from zero samples".into()));
        }
        let mut xs: Vec<u64> = samples.iter().map(|&(x, _)| x).collect();
        xs.sort_unstable();
        let idx = ((xs.len() as f64 * 0.999).ceil() as usize).clamp(1, xs.len()) - 1;
        HistogramSpec::new(xs[idx].max(1), s_lo, s_hi, s_bins)
    }

    pub fn rows(&self) -> usize {
        self.x_cap as usize + 1
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.s_bins
    }

    fn cell_index(&self, x: u64, s: f64) -> usize {
        let row = if x > self.x_cap { self.x_cap as usize } else { (x - 1) as usize };
        let frac = (s - self.s_lo) / (self.s_hi - self.s_lo);
        let col = ((frac * self.s_bins as f64).floor() as isize).clamp(0, self.s_bins as isize - 1) as usize;
        row * self.s_bins + col
    }

    pub fn s_bin_edges(&self, col: usize) -> (f64, f64) {
        let w = (self.s_hi - self.s_lo) / self.s_bins as f64;
        (self.s_lo + col as f64 * w, self.s_lo + (col + 1) as f64 * w)
    }
}

/// Normalized empirical histogram over a [`HistogramSpec`].
#[derive(Debug, Clone, Serialize)]
pub struct Histogram2d {
    pub spec: HistogramSpec,
    mass: Vec<f64>,
    /// Number of samples behind the histogram.
    pub n: u64,
}

impl Histogram2d {
    pub fn from_samples(spec: HistogramSpec, samples: &[(u64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Power("cannot build a histogram from zero samples".into()));
        }
        for &(x, _) in samples {
            if x == 0 {
                return Err(Error::Precondition("histogram samples must have x >= 1".into()));
            }
        }
        let mut mass = vec![0.0; spec.cells()];
        let w = 1.0 / samples.len() as f64;
        for &(x, s) in samples {
            mass[spec.cell_index(x, s)] += w;
        }
        Ok(Histogram2d { spec, mass, n: samples.len() as u64 })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn cell_mass(&self, x: u64, s: f64) -> f64 {
        self.mass[self.spec.cell_index(x, s)]
    }

    /// Binomial standard error of one cell's mass.
    pub fn cell_stderr(&self, idx: usize) -> f64 {
        binomial_se(self.mass[idx], self.n)
    }

    /// Total-variation distance to another histogram on the same binning.
    pub fn total_variation(&self, other: &Histogram2d) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::Precondition("total variation requires identical binning".into()));
        }
        Ok(0.5 * self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// Re-bins the histogram onto a coarser spec, assigning each cell's
    /// mass to the coarse cell containing its midpoint.
    pub fn project(&self, spec: HistogramSpec) -> Histogram2d {
        let mut mass = vec![0.0; spec.cells()];
        for row in 0..self.spec.rows() {
            let x = if row == self.spec.x_cap as usize { self.spec.x_cap + 1 } else { row as u64 + 1 };
            for col in 0..self.spec.s_bins {
                let m = self.mass[row * self.spec.s_bins + col];
                if m > 0.0 {
                    let (lo, hi) = self.spec.s_bin_edges(col);
                    mass[spec.cell_index(x, 0.5 * (lo + hi))] += m;
                }
            }
        }
        Histogram2d { spec, mass, n: self.n }
    }

    /// Draws one `(x, s)` from the histogram: cell by mass, `s` uniform in
    /// the bin. Overflow-row draws land at `x_cap + 1`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (u64, f64) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.mass.len() - 1;
        for (i, &m) in self.mass.iter().enumerate() {
            acc += m;
            if u < acc {
                idx = i;
                break;
            }
        }
        let row = idx / self.spec.s_bins;
        let col = idx % self.spec.s_bins;
        let x = if row == self.spec.x_cap as usize { self.spec.x_cap + 1 } else { row as u64 + 1 };
        let (lo, hi) = self.spec.s_bin_edges(col);
        (x, lo + rng.gen::<f64>() * (hi - lo))
    }
}

/// Total variation between two sample sets, with a paired-bootstrap
/// confidence interval (percentile method).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TvEstimate {
    pub tv: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
}

pub fn bootstrap_tv<R: Rng>(
    a: &[(u64, f64)],
    b: &[(u64, f64)],
    spec: HistogramSpec,
    resamples: usize,
    rng: &mut R,
) -> Result<TvEstimate> {
    let ha = Histogram2d::from_samples(spec, a)?;
    let hb = Histogram2d::from_samples(spec, b)?;
    let tv = ha.total_variation(&hb)?;
    let mut reps = Vec::with_capacity(resamples);
    let mut buf_a = Vec::with_capacity(a.len());
    let mut buf_b = Vec::with_capacity(b.len());
    for _ in 0..resamples {
        buf_a.clear();
        buf_b.clear();
        for _ in 0..a.len() {
            buf_a.push(a[rng.gen_range(0..a.len())]);
        }
        for _ in 0..b.len() {
            buf_b.push(b[rng.gen_range(0..b.len())]);
        }
        let ra = Histogram2d::from_samples(spec, &buf_a)?;
        let rb = Histogram2d::from_samples(spec, &buf_b)?;
        reps.push(ra.total_variation(&rb)?);
    }
    reps.sort_by(|x, y| x.total_cmp(y));
    let lo_idx = ((resamples as f64) * 0.025).floor() as usize;
    let hi_idx = (((resamples as f64) * 0.975).ceil() as usize).min(resamples - 1);
    let (_, se) = mean_se(&reps);
    let sd = se * (resamples as f64).sqrt();
    Ok(TvEstimate { tv, ci_low: reps[lo_idx], ci_high: reps[hi_idx], se: sd })
}

/// Total variation between two sample sets on a binning derived from their
/// union (`s` from 0 to the largest observation, `x_cap` at the union's
/// 99.9th percentile).
pub fn bootstrap_tv_shared<R: Rng>(
    a: &[(u64, f64)],
    b: &[(u64, f64)],
    s_bins: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<TvEstimate> {
    let union: Vec<(u64, f64)> = a.iter().chain(b).copied().collect();
    let s_hi = union.iter().map(|&(_, s)| s).fold(0.0f64, f64::max).max(1e-12) * (1.0 + 1e-9);
    let spec = HistogramSpec::from_samples(&union, 0.0, s_hi, s_bins)?;
    bootstrap_tv(a, b, spec, resamples, rng)
}

/// Weighted least-squares fit of the decay rate of `-log S(t)` from nested
/// survival counts. Consecutive increments of the empirical log-survival are
/// asymptotically independent, which turns the generalized fit into a plain
/// weighted fit on increments.
///
/// Returns `(rate, standard error)`.
pub fn fit_survival_decay(ts: &[f64], survivors: &[u64], n: u64) -> Result<(f64, f64)> {
    if ts.len() != survivors.len() || ts.len() < 2 {
        return Err(Error::Precondition("decay fit needs at least two (t, survivors) points".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..ts.len() {
        let (s_prev, s_cur) = (survivors[i - 1], survivors[i]);
        if s_cur == 0 || s_cur > s_prev || ts[i] <= ts[i - 1] {
            return Err(Error::Precondition(
                "survival counts must be positive and non-increasing along increasing times".into(),
            ));
        }
        let p_prev = s_prev as f64 / n as f64;
        let p_cur = s_cur as f64 / n as f64;
        let d = (p_prev / p_cur).ln();
        let dt = ts[i] - ts[i - 1];
        // var of the log-survival increment; floor avoids a zero weight when
        // no extinction fell in the window.
        let var = ((1.0 - p_cur) / p_cur - (1.0 - p_prev) / p_prev).max(0.25 / n as f64) / n as f64;
        let w = 1.0 / var;
        num += w * d * dt;
        den += w * dt * dt;
    }
    if den == 0.0 {
        return Err(Error::Numeric("degenerate decay fit".into()));
    }
    Ok((num / den, (1.0 / den).sqrt()))
}

/// Ordinary least-squares slope with its standard error.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return None;
    }
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let sxx = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum::<f64>();
    if sxx == 0.0 {
        return None;
    }
    let sxy = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum::<f64>();
    let se = (rss / (n as f64 - 2.0) / sxx).sqrt();
    Some((slope, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn histogram_normalizes_and_respects_overflow() {
        let spec = HistogramSpec::new(3, 0.0, 1.0, 4).unwrap();
        let h = Histogram2d::from_samples(spec, &[(1, 0.1), (2, 0.6), (9, 0.9), (1, 0.12)]).unwrap();
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h.cell_mass(1, 0.1) - 0.5).abs() < 1e-12);
        assert!((h.cell_mass(9, 0.9) - 0.25).abs() < 1e-12);
        // overflow row shared by any x > x_cap
        assert!((h.cell_mass(100, 0.9) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tv_zero_on_identical_and_one_on_disjoint() {
        let spec = HistogramSpec::new(2, 0.0, 1.0, 2).unwrap();
        let a = Histogram2d::from_samples(spec, &[(1, 0.2), (2, 0.7)]).unwrap();
        let b = Histogram2d::from_samples(spec, &[(1, 0.2), (2, 0.7)]).unwrap();
        assert_eq!(a.total_variation(&b).unwrap(), 0.0);
        let c = Histogram2d::from_samples(spec, &[(1, 0.7), (2, 0.2)]).unwrap();
        assert_eq!(a.total_variation(&c).unwrap(), 1.0);
    }

    #[test]
    fn tv_requires_matching_binning() {
        let a = Histogram2d::from_samples(HistogramSpec::new(2, 0.0, 1.0, 2).unwrap(), &[(1, 0.2)]).unwrap();
        let b = Histogram2d::from_samples(HistogramSpec::new(2, 0.0, 1.0, 4).unwrap(), &[(1, 0.2)]).unwrap();
        assert!(a.total_variation(&b).is_err());
    }

    #[test]
    fn decay_fit_recovers_exponential_rate() {
        // Exact exponential survival, counts rounded: rate 0.7.
        let n = 1_000_000u64;
        let ts = [1.0, 2.0, 3.0, 4.0, 5.0];
        let survivors: Vec<u64> = ts.iter().map(|t: &f64| ((n as f64) * (-0.7 * t).exp()).round() as u64).collect();
        let (rate, se) = fit_survival_decay(&ts, &survivors, n).unwrap();
        assert!((rate - 0.7).abs() < 3.0 * se + 1e-3, "rate {rate} se {se}");
    }

    #[test]
    fn histogram_sampling_round_trips() {
        let spec = HistogramSpec::new(4, 0.0, 0.5, 8).unwrap();
        let samples: Vec<(u64, f64)> = (0..2000).map(|i| ((i % 4) as u64 + 1, 0.5 * ((i % 10) as f64 + 0.5) / 10.0)).collect();
        let h = Histogram2d::from_samples(spec, &samples).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let redrawn: Vec<(u64, f64)> = (0..4000).map(|_| h.sample(&mut rng)).collect();
        let h2 = Histogram2d::from_samples(spec, &redrawn).unwrap();
        assert!(h.total_variation(&h2).unwrap() < 0.05);
    }
}
