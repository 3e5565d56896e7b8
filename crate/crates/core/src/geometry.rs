//! Domains, densities, point sampling and distances.
//!
//! Points live in `[0,1]^d`, either with the plain Euclidean metric (unit cube)
//! or with the minimum-image metric of the flat torus. Densities are uniform or
//! piecewise constant on an axis-aligned grid with strictly positive, finite
//! cell weights, so they are bounded away from `0` and `∞` on their support.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::Attractiveness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    UnitCube,
    Torus,
}

/// The ambient space: `[0,1]^d` with either the cube or the torus metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub dim: usize,
}

impl Domain {
    pub fn new(kind: DomainKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("domain dimension must be at least 1".into()));
        }
        Ok(Domain { kind, dim })
    }

    pub fn cube(dim: usize) -> Self {
        Domain { kind: DomainKind::UnitCube, dim: dim.max(1) }
    }

    pub fn torus(dim: usize) -> Self {
        Domain { kind: DomainKind::Torus, dim: dim.max(1) }
    }

    /// Per-axis separation under this domain's metric.
    #[inline(always)]
    pub fn axis_delta(&self, a: f64, b: f64) -> f64 {
        let diff = (a - b).abs();
        match self.kind {
            DomainKind::UnitCube => diff,
            DomainKind::Torus => diff.min(1.0 - diff),
        }
    }

    /// Squared distance. Every backend goes through this one function (or its
    /// bounded twin, which sums in the same order) so that ties and rounding
    /// are identical everywhere.
    ///
    /// Axis `i` accumulates into lane `i % 4`; lanes combine as `(l0 + l1) + (l2 + l3)`.
    #[inline]
    pub fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let mut lanes = [0.0f64; 4];
        let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            self.accumulate4(&mut lanes, x, y);
        }
        for (i, (&x, &y)) in ra.iter().zip(rb).enumerate() {
            let t = self.axis_delta(x, y);
            lanes[i] += t * t;
        }
        (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
    }

    #[inline(always)]
    fn accumulate4(&self, lanes: &mut [f64; 4], x: &[f64], y: &[f64]) {
        for j in 0..4 {
            let t = self.axis_delta(x[j], y[j]);
            lanes[j] += t * t;
        }
    }

    /// Squared distance, abandoning the sum once it exceeds `bound`.
    ///
    /// Returns `None` when the partial sum is already strictly larger than
    /// `bound`; otherwise the full squared distance, bit-identical to
    /// [`Domain::distance_sq`].
    #[inline]
    pub fn distance_sq_bounded(&self, a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
        debug_assert_eq!(a.len(), b.len());
        let mut lanes = [0.0f64; 4];
        let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (j, (x, y)) in ca.zip(cb).enumerate() {
            self.accumulate4(&mut lanes, x, y);
            // lanes only grow, so a partial total above the bound stays above it
            if j % 4 == 3 && (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) > bound {
                return None;
            }
        }
        for (i, (&x, &y)) in ra.iter().zip(rb).enumerate() {
            let t = self.axis_delta(x, y);
            lanes[i] += t * t;
        }
        let total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        if total > bound {
            None
        } else {
            Some(total)
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.distance_sq(a, b).sqrt()
    }

    /// Largest possible distance between two points of the domain.
    pub fn diameter(&self) -> f64 {
        let per_axis = match self.kind {
            DomainKind::UnitCube => 1.0,
            DomainKind::Torus => 0.5,
        };
        per_axis * (self.dim as f64).sqrt()
    }

    /// Distance from coordinate `x` to the interval `[lo, hi]` along one axis.
    #[inline]
    pub fn axis_gap(&self, x: f64, lo: f64, hi: f64) -> f64 {
        if x >= lo && x <= hi {
            return 0.0;
        }
        match self.kind {
            DomainKind::UnitCube => {
                if x < lo {
                    lo - x
                } else {
                    x - hi
                }
            }
            DomainKind::Torus => {
                let up = (lo - x).rem_euclid(1.0);
                let down = (x - hi).rem_euclid(1.0);
                up.min(down)
            }
        }
    }

    /// Largest distance from coordinate `x` to a point of `[lo, hi]` along one axis.
    #[inline]
    pub fn axis_reach(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let far = (x - lo).abs().max((x - hi).abs());
        match self.kind {
            DomainKind::UnitCube => far,
            DomainKind::Torus => {
                // max over y in [lo,hi] of min(|x-y|, 1-|x-y|), capped at 1/2
                let a = self.axis_delta(x, lo);
                let b = self.axis_delta(x, hi);
                let antipode = (x + 0.5).rem_euclid(1.0);
                let contains_antipode = (antipode >= lo && antipode <= hi)
                    || (antipode + 1.0 >= lo && antipode + 1.0 <= hi);
                if contains_antipode {
                    0.5
                } else {
                    a.max(b)
                }
            }
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim && p.iter().all(|c| (0.0..=1.0).contains(c))
    }
}

/// A location in `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("point must have at least one coordinate".into()));
        }
        if let Some(c) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("coordinate {c} outside [0,1]")));
        }
        Ok(Point(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Sampling density on `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Uniform,
    /// Piecewise constant on a grid with `resolution[i]` cells along axis `i`.
    /// `weights` is row-major with the last axis varying fastest and need not
    /// be normalized.
    Grid { resolution: Vec<usize>, weights: Vec<f64> },
}

impl Density {
    /// Checks the density against a domain dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Density::Uniform => Ok(()),
            Density::Grid { resolution, weights } => {
                if resolution.len() != dim {
                    return Err(Error::Config(format!(
                        "density grid has {} axes, domain has {dim}",
                        resolution.len()
                    )));
                }
                if resolution.contains(&0) {
                    return Err(Error::Config("density grid resolution must be positive".into()));
                }
                let cells: usize = resolution.iter().product();
                if weights.len() != cells {
                    return Err(Error::Config(format!(
                        "density grid expects {cells} weights, got {}",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
                    return Err(Error::Config(
                        "density weights must be finite and strictly positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Bounds `(inf f, sup f)` of the normalized density.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Density::Uniform => (1.0, 1.0),
            Density::Grid { resolution, weights } => {
                let cells: usize = resolution.iter().product();
                let total: f64 = weights.iter().sum();
                let scale = cells as f64 / total;
                let lo = weights.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = weights.iter().cloned().fold(0.0, f64::max);
                (lo * scale, hi * scale)
            }
        }
    }

    /// Prepares a sampler; call [`Density::validate`] first.
    pub fn sampler(&self) -> DensitySampler {
        match self {
            Density::Uniform => DensitySampler { cumulative: Vec::new(), resolution: Vec::new() },
            Density::Grid { resolution, weights } => {
                let mut cumulative = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w;
                    cumulative.push(acc);
                }
                DensitySampler { cumulative, resolution: resolution.clone() }
            }
        }
    }
}

/// Draws points from a [`Density`].
#[derive(Clone, Debug)]
pub struct DensitySampler {
    cumulative: Vec<f64>,
    resolution: Vec<usize>,
}

impl DensitySampler {
    /// Fills `out` with one point.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if self.cumulative.is_empty() {
            for c in out.iter_mut() {
                *c = rng.random::<f64>();
            }
            return;
        }
        let total = *self.cumulative.last().unwrap();
        let target = rng.random::<f64>() * total;
        let mut cell = self.cumulative.partition_point(|&c| c <= target);
        cell = cell.min(self.cumulative.len() - 1);
        // row-major decode, last axis fastest
        for axis in (0..self.resolution.len()).rev() {
            let r = self.resolution[axis];
            let idx = cell % r;
            cell /= r;
            let u: f64 = rng.random();
            out[axis] = ((idx as f64 + u) / r as f64).min(1.0);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Point {
        let mut coords = vec![0.0; dim];
        self.sample_into(rng, &mut coords);
        Point(coords)
    }
}

/// Draws one point from `density` on `domain`.
pub fn sample_point(density: &Density, domain: &Domain, rng: &mut RngStream) -> Point {
    density.sampler().sample(rng, domain.dim)
}

/// Seeded random stream: one per replicate.
///
/// Identical `(seed, stream_id)` pairs reproduce identical draws; distinct
/// stream ids select disjoint ChaCha streams.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in the open interval `(0, 1]`.
    #[inline]
    pub fn unit_open_closed(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `log F(r)` for the attractiveness function `F`.
///
/// `r = 0` is reported as [`Error::CoincidentPoints`].
pub fn log_attractiveness(f: &Attractiveness, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(f.log_value_sq(r * r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn distance_examples() {
        assert!(close(Domain::cube(1).distance(&[0.2], &[0.7]), 0.5));
        assert!(close(Domain::torus(1).distance(&[0.1], &[0.9]), 0.2));
        let d = Domain::torus(2).distance(&[0.05, 0.05], &[0.95, 0.95]);
        assert!(close(d, (0.1f64 * 0.1 + 0.1 * 0.1).sqrt()));
        assert_eq!(Domain::cube(3).distance(&[0.3; 3], &[0.3; 3]), 0.0);
    }

    #[test]
    fn bounded_distance_agrees_with_full() {
        let dom = Domain::torus(20);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..200 {
            let a: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let full = dom.distance_sq(&a, &b);
            assert_eq!(dom.distance_sq_bounded(&a, &b, f64::INFINITY), Some(full));
            assert_eq!(dom.distance_sq_bounded(&a, &b, full), Some(full));
            assert_eq!(dom.distance_sq_bounded(&a, &b, full * 0.5), None);
        }
    }

    #[test]
    fn triangle_inequality_and_symmetry() {
        for dom in [Domain::cube(1), Domain::cube(2), Domain::cube(3), Domain::torus(1), Domain::torus(2), Domain::torus(3)] {
            let mut rng = RngStream::new(11, dom.dim as u64);
            for _ in 0..10_000 {
                let p: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..dom.dim).map(|_| rng.random()).collect())
                    .collect();
                let ab = dom.distance(&p[0], &p[1]);
                let bc = dom.distance(&p[1], &p[2]);
                let ac = dom.distance(&p[0], &p[2]);
                assert!(ac <= ab + bc + 1e-12);
                assert_eq!(ab, dom.distance(&p[1], &p[0]));
                assert!(ab <= dom.diameter() + 1e-12);
            }
        }
    }

    #[test]
    fn axis_gap_and_reach_bracket_true_distances() {
        let mut rng = RngStream::new(5, 1);
        for dom in [Domain::cube(1), Domain::torus(1)] {
            for _ in 0..5000 {
                let x: f64 = rng.random();
                let lo: f64 = rng.random::<f64>() * 0.9;
                let hi = lo + rng.random::<f64>() * (1.0 - lo);
                let gap = dom.axis_gap(x, lo, hi);
                let reach = dom.axis_reach(x, lo, hi);
                for i in 0..=20 {
                    let y = lo + (hi - lo) * i as f64 / 20.0;
                    let t = dom.axis_delta(x, y);
                    assert!(t >= gap - 1e-12, "{dom:?} x={x} [{lo},{hi}] y={y}");
                    assert!(t <= reach + 1e-12, "{dom:?} x={x} [{lo},{hi}] y={y}");
                }
            }
        }
    }

    #[test]
    fn uniform_mean_is_one_half() {
        let mut rng = RngStream::new(42, 0);
        let n = 100_000;
        let dom = Domain::cube(1);
        let sampler = Density::Uniform.sampler();
        let mean: f64 = (0..n).map(|_| sampler.sample(&mut rng, dom.dim).coords()[0]).sum::<f64>() / n as f64;
        let stderr = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * stderr, "mean {mean}");
    }

    #[test]
    fn grid_density_cell_frequencies() {
        let density = Density::Grid { resolution: vec![4], weights: vec![2.0, 0.5, 0.5, 1.0] };
        density.validate(1).unwrap();
        let sampler = density.sampler();
        let mut rng = RngStream::new(9, 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let p = sampler.sample(&mut rng, 1);
            counts[((p.coords()[0] * 4.0) as usize).min(3)] += 1;
        }
        let expected = [0.5, 0.125, 0.125, 0.25];
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(&c, p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 3 degrees of freedom, upper 1e-3 quantile is 16.27
        assert!(chi2 < 16.27, "chi2 {chi2} counts {counts:?}");
        assert_eq!(density.bounds(), (0.5, 2.0));
    }

    #[test]
    fn grid_density_two_dimensional_layout() {
        // last axis fastest: cell (row 1, col 0) is weights[2]
        let density = Density::Grid { resolution: vec![2, 2], weights: vec![1e-9, 1e-9, 1.0, 1e-9] };
        density.validate(2).unwrap();
        let sampler = density.sampler();
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            let p = sampler.sample(&mut rng, 2);
            assert!(p.coords()[0] >= 0.5 && p.coords()[1] < 0.5, "{p:?}");
        }
    }

    #[test]
    fn density_validation_errors() {
        assert!(Density::Grid { resolution: vec![2], weights: vec![1.0, 0.0] }.validate(1).is_err());
        assert!(Density::Grid { resolution: vec![2], weights: vec![1.0] }.validate(1).is_err());
        assert!(Density::Grid { resolution: vec![2], weights: vec![1.0, 1.0] }.validate(2).is_err());
        assert!(Density::Uniform.validate(7).is_ok());
    }

    #[test]
    fn stream_determinism() {
        let draw = |seed, stream| {
            let mut rng = RngStream::new(seed, stream);
            (0..16).map(|_| rng.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
        let dom = Domain::torus(2);
        let mut a = RngStream::new(1, 2);
        let mut b = RngStream::new(1, 2);
        for _ in 0..10 {
            assert_eq!(sample_point(&Density::Uniform, &dom, &mut a), sample_point(&Density::Uniform, &dom, &mut b));
        }
    }

    #[test]
    fn log_attractiveness_examples() {
        let g2 = Attractiveness::Gamma { gamma: 2.0 };
        assert!(close(log_attractiveness(&g2, (-1.0f64).exp()).unwrap(), 1.0));
        assert_eq!(log_attractiveness(&g2, 1.5).unwrap(), 0.0);
        let p2 = Attractiveness::PowerLaw { s: 2.0 };
        assert!(close(log_attractiveness(&p2, 0.5).unwrap(), 2.0 * 2f64.ln()));
        assert_eq!(log_attractiveness(&Attractiveness::Constant, 0.3).unwrap(), 0.0);
        assert!(matches!(log_attractiveness(&p2, 0.0), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn log_attractiveness_is_nonincreasing() {
        let specs = [
            Attractiveness::Constant,
            Attractiveness::PowerLaw { s: 0.5 },
            Attractiveness::PowerLaw { s: 4.0 },
            Attractiveness::Gamma { gamma: 1.2 },
            Attractiveness::Gamma { gamma: 3.0 },
        ];
        let mut rng = RngStream::new(2, 0);
        let mut rs: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * 2.0 + 1e-12).collect();
        rs.sort_by(f64::total_cmp);
        for f in &specs {
            let vals: Vec<f64> = rs.iter().map(|&r| log_attractiveness(f, r).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{f:?}");
        }
    }
}
