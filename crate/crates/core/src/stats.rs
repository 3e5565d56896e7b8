//! Degree-sequence statistics.
//!
//! `N_n(k)` is the number of vertices of degree at least `k` after `n`
//! arrivals. Replicate aggregation sums integer counts, so estimates do not
//! depend on the order replicates finish in.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::GraphState;

/// Exact degree counts of one graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeTail {
    pub n: usize,
    /// `tail[k-1] = N_n(k)` for `k = 1..=max degree`.
    pub tail: Vec<u64>,
    /// `exact[k-1]` = number of vertices with degree exactly `k`.
    pub exact: Vec<u64>,
}

impl DegreeTail {
    pub fn from_degrees(degrees: &[u32]) -> Self {
        let max = degrees.iter().copied().max().unwrap_or(0) as usize;
        let mut exact = vec![0u64; max];
        for &d in degrees {
            if d > 0 {
                exact[d as usize - 1] += 1;
            }
        }
        let mut tail = exact.clone();
        for k in (0..max.saturating_sub(1)).rev() {
            tail[k] += tail[k + 1];
        }
        DegreeTail { n: degrees.len().saturating_sub(1), tail, exact }
    }

    /// `N_n(k)`, zero beyond the maximum degree.
    pub fn count_at_least(&self, k: usize) -> u64 {
        if k == 0 {
            return (self.n + 1) as u64;
        }
        self.tail.get(k - 1).copied().unwrap_or(0)
    }

    pub fn count_exactly(&self, k: usize) -> u64 {
        if k == 0 {
            return 0;
        }
        self.exact.get(k - 1).copied().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.tail.len()
    }

    /// `N(1) = n + 1`, monotone, degree sum `2n`, and `N(k) <= 2n/k`.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n as u64;
        if self.n >= 1 && self.count_at_least(1) != n + 1 {
            return Err(Error::Invariant(format!("N(1) = {} != n + 1 = {}", self.count_at_least(1), n + 1)));
        }
        if self.tail.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invariant("N(k) increases in k".into()));
        }
        let sum: u64 = self.tail.iter().sum();
        if sum != 2 * n {
            return Err(Error::Invariant(format!("sum of N(k) = {sum} != 2n = {}", 2 * n)));
        }
        if let Some((i, c)) = self.tail.iter().enumerate().find(|&(i, &c)| (i as u64 + 1) * c > 2 * n) {
            return Err(Error::Invariant(format!("N({}) = {c} exceeds 2n/k", i + 1)));
        }
        Ok(())
    }
}

pub fn degree_tail(state: &GraphState) -> DegreeTail {
    DegreeTail::from_degrees(state.degrees())
}

/// Integer running sums over replicates; merging is exact, associative and commutative.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailAccumulator {
    pub n: Option<usize>,
    pub replicates: u64,
    tail_sum: Vec<u64>,
    tail_sq: Vec<u128>,
    exact_sum: Vec<u64>,
    exact_sq: Vec<u128>,
}

impl TailAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn grow(&mut self, len: usize) {
        if self.tail_sum.len() < len {
            self.tail_sum.resize(len, 0);
            self.tail_sq.resize(len, 0);
            self.exact_sum.resize(len, 0);
            self.exact_sq.resize(len, 0);
        }
    }

    pub fn add(&mut self, t: &DegreeTail) -> Result<()> {
        match self.n {
            Some(n) if n != t.n => return Err(Error::Mismatch(format!("replicate has n = {}, expected {n}", t.n))),
            _ => self.n = Some(t.n),
        }
        self.grow(t.tail.len());
        for (k, (&a, &e)) in t.tail.iter().zip(&t.exact).enumerate() {
            self.tail_sum[k] += a;
            self.tail_sq[k] += (a as u128) * (a as u128);
            self.exact_sum[k] += e;
            self.exact_sq[k] += (e as u128) * (e as u128);
        }
        self.replicates += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &TailAccumulator) -> Result<()> {
        if other.replicates == 0 {
            return Ok(());
        }
        match (self.n, other.n) {
            (Some(a), Some(b)) if a != b => return Err(Error::Mismatch(format!("merging n = {a} with n = {b}"))),
            _ => self.n = self.n.or(other.n),
        }
        self.grow(other.tail_sum.len());
        for k in 0..other.tail_sum.len() {
            self.tail_sum[k] += other.tail_sum[k];
            self.tail_sq[k] += other.tail_sq[k];
            self.exact_sum[k] += other.exact_sum[k];
            self.exact_sq[k] += other.exact_sq[k];
        }
        self.replicates += other.replicates;
        Ok(())
    }

    pub fn estimate(&self) -> Result<TailEstimate> {
        let n = self.n.ok_or_else(|| Error::Mismatch("no replicates to aggregate".into()))?;
        let r = self.replicates as f64;
        let scale = (n + 1) as f64;
        // mean and standard error of count / (n + 1), from exact integer moments
        let moments = |sum: u64, sq: u128| -> (f64, f64) {
            let mean = sum as f64 / r / scale;
            if self.replicates < 2 {
                return (mean, 0.0);
            }
            let centered = sq as f64 - (sum as f64) * (sum as f64) / r;
            let var = (centered.max(0.0) / (r - 1.0)) / (scale * scale);
            (mean, (var / r).sqrt())
        };
        let (tail_mean, tail_stderr) = self.tail_sum.iter().zip(&self.tail_sq).map(|(&s, &q)| moments(s, q)).unzip();
        let (pmf_mean, pmf_stderr) = self.exact_sum.iter().zip(&self.exact_sq).map(|(&s, &q)| moments(s, q)).unzip();
        Ok(TailEstimate { n, replicates: self.replicates, tail_mean, tail_stderr, pmf_mean, pmf_stderr })
    }
}

/// Replicate-averaged proportions: `tail_mean[k-1]` estimates `ρ_k`,
/// `pmf_mean[k-1]` the proportion of degree exactly `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: usize,
    pub replicates: u64,
    pub tail_mean: Vec<f64>,
    pub tail_stderr: Vec<f64>,
    pub pmf_mean: Vec<f64>,
    pub pmf_stderr: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Tail,
    Pmf,
}

impl TailEstimate {
    /// An estimate with the given tail proportions and zero standard error.
    pub fn synthetic(n: usize, tail: Vec<f64>) -> Self {
        let mut pmf: Vec<f64> = tail.windows(2).map(|w| w[0] - w[1]).collect();
        pmf.extend(tail.last().copied());
        let zeros = vec![0.0; tail.len()];
        TailEstimate { n, replicates: 1, tail_stderr: zeros.clone(), pmf_stderr: zeros, tail_mean: tail, pmf_mean: pmf }
    }

    pub fn tail(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        self.tail_mean.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn pmf(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.pmf_mean.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn pmf_stderr(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.pmf_stderr.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Average number of vertices per replicate with degree at least `k`.
    pub fn expected_count(&self, k: usize) -> f64 {
        self.tail(k) * (self.n + 1) as f64
    }

    /// `k,mean,stderr` rows for the chosen column.
    pub fn write_csv<W: Write>(&self, mut out: W, column: Column) -> std::io::Result<()> {
        let (mean, se) = match column {
            Column::Tail => (&self.tail_mean, &self.tail_stderr),
            Column::Pmf => (&self.pmf_mean, &self.pmf_stderr),
        };
        writeln!(out, "k,mean,stderr")?;
        for (k, (m, s)) in mean.iter().zip(se).enumerate() {
            writeln!(out, "{},{m},{s}", k + 1)?;
        }
        Ok(())
    }
}

/// Aggregates per-replicate tails of a common `n`.
pub fn aggregate_tail(tails: &[DegreeTail]) -> Result<TailEstimate> {
    let mut acc = TailAccumulator::new();
    for t in tails {
        acc.add(t)?;
    }
    acc.estimate()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// Slope of `-log ρ_k` against `k`.
    ExponentialRate,
    /// Slope of `log(-log q_k)` against `log k`.
    StretchedExponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kind: FitKind,
    pub rate: f64,
    pub intercept: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub r_squared: f64,
    pub points: usize,
}

impl RateFit {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "kind,rate,intercept,k_min,k_max,r_squared,points")?;
        let kind = match self.kind {
            FitKind::ExponentialRate => "exponential_rate",
            FitKind::StretchedExponential => "stretched_exponential",
        };
        writeln!(out, "{kind},{},{},{},{},{},{}", self.rate, self.intercept, self.k_min, self.k_max, self.r_squared, self.points)
    }
}

/// Which `k` enter a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    /// Smallest `k` considered.
    pub k_min: usize,
    /// Largest `k` considered, if capped.
    pub k_max: Option<usize>,
    /// Minimum average number of vertices with degree `>= k` per replicate.
    pub min_count: f64,
}

impl FitWindow {
    pub const DEFAULT_MIN_COUNT: f64 = 10.0;

    pub fn from_min_count(min_count: f64) -> Self {
        FitWindow { k_min: 1, k_max: None, min_count }
    }

    /// The contiguous run of `k >= k_min` satisfying the count rule and `accept`.
    fn usable(&self, est: &TailEstimate, accept: impl Fn(f64) -> bool) -> Vec<usize> {
        let upper = self.k_max.unwrap_or(usize::MAX).min(est.tail_mean.len());
        (self.k_min.max(1)..=upper)
            .take_while(|&k| est.expected_count(k) >= self.min_count && accept(est.tail(k)))
            .collect()
    }
}

impl Default for FitWindow {
    fn default() -> Self {
        Self::from_min_count(Self::DEFAULT_MIN_COUNT)
    }
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope, intercept, R²)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// `μ̂`: slope of `-log ρ̂_k` against `k` over `k = 1, 2, ...` while the
/// average count of vertices with degree `>= k` is at least `min_count`.
pub fn fit_exponential_rate(est: &TailEstimate, min_count: f64) -> Result<RateFit> {
    fit_exponential_rate_window(est, FitWindow::from_min_count(min_count))
}

pub fn fit_exponential_rate_window(est: &TailEstimate, window: FitWindow) -> Result<RateFit> {
    let ks = window.usable(est, |q| q > 0.0);
    if ks.len() < 3 {
        return Err(Error::Fit(format!("exponential fit needs 3 usable k, found {}", ks.len())));
    }
    let x: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let y: Vec<f64> = ks.iter().map(|&k| -est.tail(k).ln()).collect();
    let (rate, intercept, r_squared) = least_squares(&x, &y);
    Ok(RateFit {
        kind: FitKind::ExponentialRate,
        rate,
        intercept,
        k_min: ks[0],
        k_max: *ks.last().unwrap(),
        r_squared,
        points: ks.len(),
    })
}

/// `γ̂`: slope of `log(-log q̂_k)` against `log k` over the usable window,
/// restricted to `q̂_k ∈ (0, 1)`.
pub fn fit_stretched_exponential(est: &TailEstimate, min_count: f64) -> Result<RateFit> {
    fit_stretched_exponential_window(est, FitWindow::from_min_count(min_count))
}

pub fn fit_stretched_exponential_window(est: &TailEstimate, window: FitWindow) -> Result<RateFit> {
    // q_1 = 1 has log(-log q) = -inf; start where the transform is defined
    let window = FitWindow { k_min: window.k_min.max(2), ..window };
    let ks = window.usable(est, |q| q > 0.0 && q < 1.0);
    if ks.len() < 4 {
        return Err(Error::Fit(format!("stretched-exponential fit needs 4 usable k, found {}", ks.len())));
    }
    let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = ks.iter().map(|&k| (-est.tail(k).ln()).ln()).collect();
    let (rate, intercept, r_squared) = least_squares(&x, &y);
    if !rate.is_finite() {
        return Err(Error::Fit("degenerate window".into()));
    }
    Ok(RateFit {
        kind: FitKind::StretchedExponential,
        rate,
        intercept,
        k_min: ks[0],
        k_max: *ks.last().unwrap(),
        r_squared,
        points: ks.len(),
    })
}

/// Slope of `log q̂_k` against `log k` over the usable window (negative for decaying tails).
pub fn fit_power_law_slope(est: &TailEstimate, window: FitWindow) -> Result<RateFit> {
    let window = FitWindow { k_min: window.k_min.max(1), ..window };
    let ks = window.usable(est, |q| q > 0.0);
    if ks.len() < 3 {
        return Err(Error::Fit(format!("power-law fit needs 3 usable k, found {}", ks.len())));
    }
    let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = ks.iter().map(|&k| est.tail(k).ln()).collect();
    let (rate, intercept, r_squared) = least_squares(&x, &y);
    Ok(RateFit {
        kind: FitKind::StretchedExponential,
        rate,
        intercept,
        k_min: ks[0],
        k_max: *ks.last().unwrap(),
        r_squared,
        points: ks.len(),
    })
}

/// Fraction of arrivals `i = 1..n` whose chosen endpoint is not their nearest predecessor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchStats {
    pub n: usize,
    pub mismatches: u64,
    pub fraction: f64,
    /// Set for ONG states, where the fraction is zero by construction.
    pub trivially_zero: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<(usize, f64)>>,
}

pub fn mismatch_fraction(state: &GraphState) -> MismatchStats {
    let n = state.n();
    let mismatches = state.mismatches().iter().skip(1).filter(|&&m| m).count() as u64;
    let fraction = if n == 0 { 0.0 } else { mismatches as f64 / n as f64 };
    MismatchStats { n, mismatches, fraction, trivially_zero: state.is_ong(), trajectory: None }
}

/// Mismatch fraction with the running value `m_j` recorded at each `j` in `at`.
pub fn mismatch_trajectory(state: &GraphState, at: &[usize]) -> MismatchStats {
    let mut stats = mismatch_fraction(state);
    let flags = state.mismatches();
    let mut running = 0u64;
    let mut traj = Vec::with_capacity(at.len());
    let mut targets = at.iter().copied().filter(|&j| j >= 1 && j <= stats.n).peekable();
    for (i, &m) in flags.iter().enumerate().skip(1) {
        running += m as u64;
        while targets.peek() == Some(&i) {
            traj.push((i, running as f64 / i as f64));
            targets.next();
        }
    }
    stats.trajectory = Some(traj);
    stats
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxDegreeRecord {
    pub n: usize,
    pub max_degree: u32,
    /// `max deg / log n`; undefined for `n = 1`.
    pub per_log_n: Option<f64>,
    /// `log(max deg) / (log n)^ν`; undefined for `n = 1`.
    pub log_per_log_n_pow: Option<f64>,
}

/// Max-degree diagnostics for states at increasing `n`, with exponent `nu`
/// for the GPA ratio.
pub fn max_degree_growth(states: &[&GraphState], nu: f64) -> Vec<MaxDegreeRecord> {
    states.iter().map(|s| max_degree_record(s.n(), s.max_degree(), nu)).collect()
}

pub fn max_degree_record(n: usize, max_degree: u32, nu: f64) -> MaxDegreeRecord {
    let log_n = (n as f64).ln();
    let defined = n > 1;
    MaxDegreeRecord {
        n,
        max_degree,
        per_log_n: defined.then(|| max_degree as f64 / log_n),
        log_per_log_n_pow: defined.then(|| (max_degree as f64).ln() / log_n.powf(nu)),
    }
}

/// Total-variation distance `½ Σ_k |p_k - q_k|` between two pmfs.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Density, Domain, RngStream};
    use crate::growth::{run_growth, Attractiveness, GrowthOptions, Model};
    use proptest::prelude::*;

    #[test]
    fn tail_of_single_edge() {
        let t = DegreeTail::from_degrees(&[1, 1]);
        assert_eq!(t.n, 1);
        assert_eq!(t.count_at_least(1), 2);
        assert_eq!(t.count_at_least(2), 0);
        t.check_invariants().unwrap();
    }

    #[test]
    fn tail_of_path() {
        let t = DegreeTail::from_degrees(&[1, 2, 1]);
        assert_eq!((t.count_at_least(1), t.count_at_least(2), t.count_at_least(3)), (3, 1, 0));
        assert_eq!((t.count_exactly(1), t.count_exactly(2)), (2, 1));
        t.check_invariants().unwrap();
    }

    #[test]
    fn invariant_violations_are_reported() {
        // degree sum 5 is odd: cannot be 2n
        assert!(DegreeTail::from_degrees(&[1, 2, 2]).check_invariants().is_err());
    }

    #[test]
    fn star_max_degree() {
        let s = GraphState::star(2, 50);
        assert_eq!(s.max_degree(), 50);
        let recs = max_degree_growth(&[&s], 0.7);
        assert_eq!(recs[0].max_degree, 50);
        assert_eq!(recs[0].n, 50);
        degree_tail(&s).check_invariants().unwrap();
    }

    #[test]
    fn ong_n_one_max_degree() {
        let mut rng = RngStream::new(1, 0);
        let s = run_growth(Model::Ong, 1, &Density::Uniform, Domain::torus(2), &mut rng, GrowthOptions::default()).unwrap();
        let rec = &max_degree_growth(&[&s], 0.7)[0];
        assert_eq!(rec.max_degree, 1);
        assert_eq!(rec.per_log_n, None);
    }

    #[test]
    fn identical_replicates_have_zero_stderr() {
        let t = DegreeTail::from_degrees(&[1, 3, 1, 1]);
        let est = aggregate_tail(&[t.clone(), t.clone(), t]).unwrap();
        assert!(est.tail_stderr.iter().chain(&est.pmf_stderr).all(|&s| s == 0.0));
        assert_eq!(est.tail_mean, vec![1.0, 0.25, 0.25]);
        assert_eq!(est.pmf_mean, vec![0.75, 0.0, 0.25]);
    }

    #[test]
    fn mismatched_n_is_rejected() {
        let a = DegreeTail::from_degrees(&[1, 1]);
        let b = DegreeTail::from_degrees(&[1, 2, 1]);
        assert!(matches!(aggregate_tail(&[a, b]), Err(Error::Mismatch(_))));
        assert!(aggregate_tail(&[]).is_err());
    }

    #[test]
    fn stderr_matches_textbook_formula() {
        let tails = [
            DegreeTail::from_degrees(&[1, 2, 1]),
            DegreeTail::from_degrees(&[2, 1, 1]),
            DegreeTail::from_degrees(&[1, 1, 2]),
            DegreeTail::from_degrees(&[1, 2, 1]),
        ];
        // replace one path by a different shape with the same n
        let est = aggregate_tail(&tails).unwrap();
        assert_eq!(est.tail_stderr[1], 0.0);
        let ragged = [DegreeTail::from_degrees(&[1, 1, 1, 3]), DegreeTail::from_degrees(&[1, 2, 2, 1])];
        let est = aggregate_tail(&ragged).unwrap();
        let xs = [1.0 / 4.0, 2.0 / 4.0];
        let mean = 0.375;
        let sd = (xs.iter().map(|x: &f64| (x - mean).powi(2)).sum::<f64>() / 1.0).sqrt();
        assert!((est.tail_mean[1] - mean).abs() < 1e-15);
        assert!((est.tail_stderr[1] - sd / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ong_tail_sums_to_finite_degree_sum() {
        let mut tails = Vec::new();
        for r in 0..5 {
            let mut rng = RngStream::new(77, r);
            let s = run_growth(Model::Ong, 3000, &Density::Uniform, Domain::torus(2), &mut rng, GrowthOptions::default()).unwrap();
            let t = degree_tail(&s);
            t.check_invariants().unwrap();
            tails.push(t);
        }
        let est = aggregate_tail(&tails).unwrap();
        let total: f64 = est.tail_mean.iter().sum();
        assert!((total - 2.0 * 3000.0 / 3001.0).abs() < 1e-12);
        assert_eq!(est.tail_mean[0], 1.0);
    }

    #[test]
    fn exponential_fit_exact_on_synthetic() {
        let tail: Vec<f64> = (1..=20).map(|k| (-0.8 * k as f64).exp()).collect();
        let est = TailEstimate::synthetic(1_000_000_000, tail);
        let fit = fit_exponential_rate(&est, 10.0).unwrap();
        assert!((fit.rate - 0.8).abs() < 1e-10, "{fit:?}");
        assert_eq!((fit.k_min, fit.k_max), (1, 20));
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_fit_respects_count_window() {
        let tail: Vec<f64> = (1..=20).map(|k| (-0.8 * k as f64).exp()).collect();
        // (n+1) e^{-0.8k} >= 10 holds up to k = 8 for n + 1 = 10^4
        let est = TailEstimate::synthetic(9_999, tail);
        let fit = fit_exponential_rate(&est, 10.0).unwrap();
        assert_eq!(fit.k_max, 8);
        let tiny = TailEstimate::synthetic(20, vec![1.0, 0.5, 0.25, 0.1]);
        assert!(matches!(fit_exponential_rate(&tiny, 10.0), Err(Error::Fit(_))));
    }

    #[test]
    fn stretched_fit_exact_on_synthetic() {
        let tail: Vec<f64> = (1..=200).map(|k| (-(k as f64).powf(0.5)).exp()).collect();
        let est = TailEstimate::synthetic(1_000_000_000, tail);
        let fit = fit_stretched_exponential(&est, 10.0).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-10, "{fit:?}");
        assert_eq!(fit.k_min, 2);
    }

    #[test]
    fn stretched_fit_on_power_law_control() {
        // Independent numpy evaluation of the same least-squares slope on
        // q_k = k^-2, k = 10..=100: 0.2824983564257017. Locally the slope is
        // 1/ln k, so it only creeps toward zero as the window moves out.
        let tail: Vec<f64> = (1..=100).map(|k| (k as f64).powi(-2)).collect();
        let est = TailEstimate::synthetic(1_000_000_000, tail);
        let window = FitWindow { k_min: 10, k_max: Some(100), min_count: 10.0 };
        let fit = fit_stretched_exponential_window(&est, window).unwrap();
        assert_eq!((fit.k_min, fit.k_max), (10, 100));
        assert!((fit.rate - 0.282_498_356_425_701_7).abs() < 1e-10, "{}", fit.rate);
    }

    #[test]
    fn power_law_slope_exact_on_synthetic() {
        let tail: Vec<f64> = (1..=50).map(|k| 2.0 * (k as f64).powi(-2)).map(|q: f64| q.min(1.0)).collect();
        let est = TailEstimate::synthetic(1_000_000_000, tail);
        let fit = fit_power_law_slope(&est, FitWindow { k_min: 2, k_max: None, min_count: 10.0 }).unwrap();
        assert!((fit.rate + 2.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_stretched_window() {
        let est = TailEstimate::synthetic(1_000_000, vec![1.0, 0.4, 0.1]);
        assert!(fit_stretched_exponential(&est, 10.0).is_err());
    }

    #[test]
    fn mismatch_of_ong_is_zero() {
        let mut rng = RngStream::new(3, 0);
        let s = run_growth(Model::Ong, 500, &Density::Uniform, Domain::torus(1), &mut rng, GrowthOptions::default()).unwrap();
        let m = mismatch_fraction(&s);
        assert_eq!(m.fraction, 0.0);
        assert!(m.trivially_zero);
    }

    #[test]
    fn constant_f_rarely_picks_the_nearest() {
        let mut rng = RngStream::new(4, 0);
        let model = Model::Gpa { f: Attractiveness::Constant };
        let s = run_growth(model, 10_000, &Density::Uniform, Domain::cube(1), &mut rng, GrowthOptions::default()).unwrap();
        let m = mismatch_trajectory(&s, &[10, 100, 10_000]);
        assert!(m.fraction > 0.3, "{}", m.fraction);
        assert!(!m.trivially_zero);
        let traj = m.trajectory.unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(traj[2].1, m.fraction);
    }

    #[test]
    fn total_variation_basics() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(total_variation(&[1.0], &[0.0, 1.0]), 1.0);
    }

    proptest! {
        #[test]
        fn tails_of_random_trees_satisfy_invariants(parents in proptest::collection::vec(any::<prop::sample::Index>(), 1..200)) {
            // random recursive tree: vertex i+1 attaches to some j <= i
            let mut deg = vec![0u32; parents.len() + 1];
            for (i, p) in parents.iter().enumerate() {
                let j = p.index(i + 1);
                deg[i + 1] += 1;
                deg[j] += 1;
            }
            let t = DegreeTail::from_degrees(&deg);
            prop_assert!(t.check_invariants().is_ok());
        }

        #[test]
        fn aggregation_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..7) {
            let tails: Vec<DegreeTail> = (0..7).map(|r| {
                let mut rng = RngStream::new(seed, r);
                let s = run_growth(Model::Ong, 200, &Density::Uniform, Domain::torus(1), &mut rng, GrowthOptions::default()).unwrap();
                degree_tail(&s)
            }).collect();
            let mut rotated = tails.clone();
            rotated.rotate_left(shift);
            prop_assert_eq!(aggregate_tail(&tails).unwrap(), aggregate_tail(&rotated).unwrap());
            let mut a = TailAccumulator::new();
            let mut b = TailAccumulator::new();
            for t in &tails[..3] { a.add(t).unwrap(); }
            for t in &tails[3..] { b.add(t).unwrap(); }
            b.merge(&a).unwrap();
            prop_assert_eq!(b.estimate().unwrap(), aggregate_tail(&tails).unwrap());
        }
    }
}
