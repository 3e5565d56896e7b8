//! Incremental nearest-predecessor index.
//!
//! Points are inserted one at a time and receive ids `0, 1, 2, ...`. Queries
//! return exact nearest and second-nearest stored points, with ties broken by
//! the smaller id. Two backends share one distance routine
//! ([`Domain::distance_sq`]) and therefore agree bit-for-bit:
//!
//! * `Grid`: uniform cells of side about `n_expected^{-1/d}`, searched in
//!   expanding Chebyshev shells until the best distance is certified smaller
//!   than anything an unexplored shell could hold.
//! * `LinearScan`: brute force with partial-distance early exit. Used as the
//!   oracle, and as the default for `d > 3` where a grid buys nothing. From
//!   `d = 16` on, a byte-per-axis copy of the points rules out most candidates
//!   before their full coordinates are read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, DomainKind};

/// Upper bound on the number of grid cells allocated.
const MAX_GRID_CELLS: usize = 1 << 22;

/// Relative slack on the shell certificate, absorbing rounding in cell assignment.
const SHELL_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Grid,
    LinearScan,
}

impl Backend {
    /// Grid for `d <= 3`, linear scan otherwise.
    pub fn auto(dim: usize) -> Self {
        if dim <= 3 {
            Backend::Grid
        } else {
            Backend::LinearScan
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Candidate {
    const NONE: Candidate = Candidate { d2: f64::INFINITY, id: usize::MAX };

    #[inline(always)]
    fn beats(&self, other: &Candidate) -> bool {
        self.d2 < other.d2 || (self.d2 == other.d2 && self.id < other.id)
    }

    fn into_neighbor(self) -> Neighbor {
        Neighbor { id: self.id, dist: self.d2.sqrt() }
    }
}

/// Running best-two tracker.
#[derive(Clone, Copy, Debug)]
struct BestTwo {
    first: Candidate,
    second: Candidate,
}

impl BestTwo {
    fn new() -> Self {
        BestTwo { first: Candidate::NONE, second: Candidate::NONE }
    }

    #[inline(always)]
    fn offer(&mut self, c: Candidate) {
        if c.beats(&self.first) {
            self.second = self.first;
            self.first = c;
        } else if c.beats(&self.second) {
            self.second = c;
        }
    }
}

#[derive(Clone, Debug)]
struct Grid {
    per_axis: usize,
    side: f64,
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn new(dim: usize, expected: usize) -> Self {
        let target = (expected.max(1) as f64).powf(1.0 / dim as f64).round().max(1.0) as usize;
        let cap = (MAX_GRID_CELLS as f64).powf(1.0 / dim as f64).floor().max(1.0) as usize;
        let per_axis = target.min(cap).max(1);
        let cells = per_axis.pow(dim as u32);
        Grid { per_axis, side: 1.0 / per_axis as f64, buckets: vec![Vec::new(); cells] }
    }

    #[inline]
    fn axis_cell(&self, x: f64) -> usize {
        ((x * self.per_axis as f64) as usize).min(self.per_axis - 1)
    }

    fn cell_coords(&self, p: &[f64], out: &mut [usize]) {
        for (o, &x) in out.iter_mut().zip(p) {
            *o = self.axis_cell(x);
        }
    }

    fn flat(&self, cell: &[usize]) -> usize {
        cell.iter().fold(0, |acc, &c| acc * self.per_axis + c)
    }
}

/// Visits every offset in `[-k, k]^d` with Chebyshev norm exactly `k`, once each.
///
/// Offsets are grouped by the first axis `a` that sits on the shell face:
/// axes before `a` stay strictly inside, axes after `a` are free.
fn for_each_shell_offset(dim: usize, k: usize, off: &mut Vec<isize>, mut visit: impl FnMut(&[isize])) {
    off.clear();
    off.resize(dim, 0);
    if k == 0 {
        visit(off);
        return;
    }
    let k = k as isize;
    for face in 0..dim {
        for side in [-k, k] {
            let range = |axis: usize| if axis < face { k - 1 } else { k };
            for (axis, o) in off.iter_mut().enumerate() {
                *o = if axis == face { side } else { -range(axis) };
            }
            'walk: loop {
                visit(off);
                #[allow(clippy::needless_range_loop)]
                for axis in 0..dim {
                    if axis == face {
                        continue;
                    }
                    if off[axis] < range(axis) {
                        off[axis] += 1;
                        continue 'walk;
                    }
                    off[axis] = -range(axis);
                }
                break;
            }
        }
    }
}

/// Incremental point index with insertion-ordered ids.
#[derive(Clone, Debug)]
pub struct OnlineIndex {
    domain: Domain,
    coords: Vec<f64>,
    len: usize,
    grid: Option<Grid>,
    sketch: Option<Sketch>,
    scratch: Vec<usize>,
}

/// Dimension from which the linear scan keeps a quantized copy of the points.
const SKETCH_MIN_DIM: usize = 16;
const SKETCH_MAX_DIM: usize = 1 << 16;

/// One byte per coordinate (`floor(256 x)`), giving a certified lower bound on
/// distances from a small fraction of the memory traffic of the full coordinates.
#[derive(Clone, Debug)]
struct Sketch {
    cells: Vec<u8>,
}

impl Sketch {
    const LEVELS: i32 = 256;

    fn quantize(x: f64) -> u8 {
        ((x * Self::LEVELS as f64) as i32).clamp(0, Self::LEVELS - 1) as u8
    }

    /// Lower bound on `distance_sq`, in units of `256^-2`.
    ///
    /// Points in cells `D` apart are at least `D - 1` cell widths apart along
    /// that axis, and on the torus also at least `256 - D - 1`.
    #[inline]
    fn lower_bound_units(kind: DomainKind, a: &[u8], b: &[u8]) -> u32 {
        #[inline(always)]
        fn sum(a: &[u8], b: &[u8], axis: impl Fn(i32) -> i32) -> u32 {
            // No term exceeds 254^2, so the sum fits in u32 for any dimension
            // below `SKETCH_MAX_DIM`. Wrapping ops keep overflow checks out of
            // the loop so it still vectorizes in checked builds.
            a.iter().zip(b).fold(0u32, |acc, (&x, &y)| {
                let lb = axis((x as i32).wrapping_sub(y as i32).abs()).wrapping_sub(1).max(0) as u32;
                acc.wrapping_add(lb.wrapping_mul(lb))
            })
        }
        match kind {
            DomainKind::UnitCube => sum(a, b, |diff| diff),
            DomainKind::Torus => sum(a, b, |diff| diff.min(Self::LEVELS.wrapping_sub(diff))),
        }
    }
}

impl OnlineIndex {
    /// `expected` sizes the grid; it does not limit how many points may be inserted.
    pub fn new(domain: Domain, backend: Backend, expected: usize) -> Self {
        let grid = match backend {
            Backend::Grid => Some(Grid::new(domain.dim, expected)),
            Backend::LinearScan => None,
        };
        let sketch = (grid.is_none() && (SKETCH_MIN_DIM..SKETCH_MAX_DIM).contains(&domain.dim)).then(|| Sketch {
            cells: Vec::with_capacity(expected.saturating_mul(domain.dim).min(1 << 28)),
        });
        OnlineIndex {
            domain,
            coords: Vec::with_capacity(expected.saturating_mul(domain.dim).min(1 << 28)),
            len: 0,
            grid,
            sketch,
            scratch: vec![0; domain.dim],
        }
    }

    pub fn backend(&self) -> Backend {
        if self.grid.is_some() {
            Backend::Grid
        } else {
            Backend::LinearScan
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn point(&self, id: usize) -> &[f64] {
        let d = self.domain.dim;
        &self.coords[id * d..(id + 1) * d]
    }

    pub fn insert(&mut self, p: &[f64]) -> usize {
        debug_assert_eq!(p.len(), self.domain.dim);
        let id = self.len;
        self.coords.extend_from_slice(p);
        self.len += 1;
        if let Some(sketch) = &mut self.sketch {
            sketch.cells.extend(p.iter().map(|&x| Sketch::quantize(x)));
        }
        if let Some(grid) = &mut self.grid {
            grid.cell_coords(p, &mut self.scratch);
            let flat = grid.flat(&self.scratch);
            grid.buckets[flat].push(id as u32);
        }
        id
    }

    pub fn nearest(&self, q: &[f64]) -> Result<Neighbor> {
        if self.len == 0 {
            return Err(Error::EmptyIndex { have: 0, need: 1 });
        }
        let best = match &self.grid {
            Some(grid) => self.grid_search(grid, q, false),
            None => self.scan_search(q, false),
        };
        Ok(best.first.into_neighbor())
    }

    pub fn two_nearest(&self, q: &[f64]) -> Result<(Neighbor, Neighbor)> {
        if self.len < 2 {
            return Err(Error::EmptyIndex { have: self.len, need: 2 });
        }
        let best = match &self.grid {
            Some(grid) => self.grid_search(grid, q, true),
            None => self.scan_search(q, true),
        };
        Ok((best.first.into_neighbor(), best.second.into_neighbor()))
    }

    /// Number of stored points within distance `radius` (inclusive) of `center`.
    pub fn range_count(&self, center: &[f64], radius: f64) -> usize {
        if radius < 0.0 || self.len == 0 {
            return 0;
        }
        let r2 = radius * radius;
        let Some(grid) = &self.grid else {
            return self.scan_range(center, r2);
        };
        let reach = (radius * grid.per_axis as f64).ceil() as usize + 1;
        if 2 * reach + 1 >= grid.per_axis {
            return self.scan_range(center, r2);
        }
        let dim = self.domain.dim;
        let mut home = vec![0usize; dim];
        grid.cell_coords(center, &mut home);
        let mut cell = vec![0usize; dim];
        let mut count = 0;
        let mut off = Vec::with_capacity(dim);
        for k in 0..=reach {
            for_each_shell_offset(dim, k, &mut off, |off| {
                if let Some(flat) = self.shifted_cell(grid, &home, off, &mut cell) {
                    for &id in &grid.buckets[flat] {
                        if self.domain.distance_sq(center, self.point(id as usize)) <= r2 {
                            count += 1;
                        }
                    }
                }
            });
        }
        count
    }

    fn scan_range(&self, center: &[f64], r2: f64) -> usize {
        (0..self.len)
            .filter(|&id| self.domain.distance_sq(center, self.point(id)) <= r2)
            .count()
    }

    fn scan_search(&self, q: &[f64], want_two: bool) -> BestTwo {
        let mut best = BestTwo::new();
        let d = self.domain.dim;
        let Some(sketch) = &self.sketch else {
            for (id, p) in self.coords.chunks_exact(d).enumerate() {
                let bound = if want_two { best.second.d2 } else { best.first.d2 };
                if let Some(d2) = self.domain.distance_sq_bounded(q, p, bound) {
                    best.offer(Candidate { d2, id });
                }
            }
            return best;
        };
        let qs: Vec<u8> = q.iter().map(|&x| Sketch::quantize(x)).collect();
        let unit = 1.0 / (Sketch::LEVELS as f64 * Sketch::LEVELS as f64);
        for (id, (p, ps)) in self.coords.chunks_exact(d).zip(sketch.cells.chunks_exact(d)).enumerate() {
            let bound = if want_two { best.second.d2 } else { best.first.d2 };
            // the slack covers rounding in the floating-point distance
            let lb = Sketch::lower_bound_units(self.domain.kind, &qs, ps) as f64 * unit;
            if lb * (1.0 - 1e-9) > bound {
                continue;
            }
            if let Some(d2) = self.domain.distance_sq_bounded(q, p, bound) {
                best.offer(Candidate { d2, id });
            }
        }
        best
    }

    /// Maps `home + off` to a flat cell index, wrapping on the torus and
    /// rejecting out-of-range cells in the cube.
    #[inline]
    fn shifted_cell(&self, grid: &Grid, home: &[usize], off: &[isize], cell: &mut [usize]) -> Option<usize> {
        let m = grid.per_axis as isize;
        for ((c, &h), &o) in cell.iter_mut().zip(home).zip(off) {
            let v = h as isize + o;
            *c = match self.domain.kind {
                DomainKind::Torus => v.rem_euclid(m) as usize,
                DomainKind::UnitCube => {
                    if v < 0 || v >= m {
                        return None;
                    }
                    v as usize
                }
            };
        }
        Some(grid.flat(cell))
    }

    fn grid_search(&self, grid: &Grid, q: &[f64], want_two: bool) -> BestTwo {
        let dim = self.domain.dim;
        let m = grid.per_axis;
        let mut home = vec![0usize; dim];
        grid.cell_coords(q, &mut home);
        let mut cell = vec![0usize; dim];
        let mut best = BestTwo::new();
        let torus = self.domain.kind == DomainKind::Torus;
        // shells needed to cover every cell in the cube
        let cube_cover = home.iter().map(|&c| c.max(m - 1 - c)).max().unwrap_or(0);
        let mut off = Vec::with_capacity(dim);
        let mut k = 0usize;
        loop {
            let side = 2 * k + 1;
            if (torus && side > m) || (k > 0 && side.saturating_pow(dim as u32) > 2 * self.len) {
                // shells overlap themselves, or hold more cells than there are points
                return self.scan_search(q, want_two);
            }
            for_each_shell_offset(dim, k, &mut off, |off| {
                if let Some(flat) = self.shifted_cell(grid, &home, off, &mut cell) {
                    for &id in &grid.buckets[flat] {
                        let id = id as usize;
                        let d2 = self.domain.distance_sq(q, self.point(id));
                        best.offer(Candidate { d2, id });
                    }
                }
            });
            let covered = if torus { 2 * k + 1 >= m } else { k >= cube_cover };
            if covered {
                return best;
            }
            // any point outside shells 0..=k is at least this far away
            let mut bound = f64::INFINITY;
            for (&x, &c) in q.iter().zip(&home) {
                let lower_edge = (c as f64 - k as f64) * grid.side;
                let upper_edge = (c + k + 1) as f64 * grid.side;
                if torus || c > k {
                    bound = bound.min(x - lower_edge);
                }
                if torus || c + k + 1 < m {
                    bound = bound.min(upper_edge - x);
                }
            }
            let bound = (bound - SHELL_SLACK).max(0.0);
            let target = if want_two { best.second.d2 } else { best.first.d2 };
            if target < bound * bound {
                return best;
            }
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute-force reference: sort all (dist², id) pairs.
    fn oracle_sorted(dom: &Domain, pts: &[Vec<f64>], q: &[f64]) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dom.distance_sq(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    fn random_point(rng: &mut RngStream, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random()).collect()
    }

    #[test]
    fn insertion_ids_are_sequential() {
        let mut idx = OnlineIndex::new(Domain::cube(1), Backend::Grid, 10);
        assert_eq!(idx.insert(&[0.3]), 0);
        assert_eq!(idx.insert(&[0.6]), 1);
        assert_eq!(idx.point(1), &[0.6]);
        let nn = idx.nearest(&[0.3]).unwrap();
        assert_eq!((nn.id, nn.dist), (0, 0.0));
    }

    #[test]
    fn nearest_examples() {
        for backend in [Backend::Grid, Backend::LinearScan] {
            let mut idx = OnlineIndex::new(Domain::cube(1), backend, 2);
            assert!(matches!(idx.nearest(&[0.5]), Err(Error::EmptyIndex { .. })));
            idx.insert(&[0.1]);
            let only = idx.nearest(&[0.99]).unwrap();
            assert_eq!(only.id, 0);
            idx.insert(&[0.8]);
            let nn = idx.nearest(&[0.75]).unwrap();
            assert_eq!(nn.id, 1);
            assert!((nn.dist - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn two_nearest_examples() {
        for backend in [Backend::Grid, Backend::LinearScan] {
            let mut idx = OnlineIndex::new(Domain::cube(1), backend, 3);
            idx.insert(&[0.1]);
            assert!(idx.two_nearest(&[0.3]).is_err());
            idx.insert(&[0.5]);
            let (a, b) = idx.two_nearest(&[0.9]).unwrap();
            assert_eq!((a.id, b.id), (1, 0));
            idx.insert(&[0.8]);
            let (a, b) = idx.two_nearest(&[0.45]).unwrap();
            assert_eq!((a.id, b.id), (1, 0));
            assert!((a.dist - 0.05).abs() < 1e-12 && (b.dist - 0.35).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_smallest_id() {
        for backend in [Backend::Grid, Backend::LinearScan] {
            let mut idx = OnlineIndex::new(Domain::cube(1), backend, 4);
            idx.insert(&[0.75]);
            idx.insert(&[0.25]);
            idx.insert(&[0.25]);
            let nn = idx.nearest(&[0.5]).unwrap();
            assert_eq!(nn.id, 0);
            let (a, b) = idx.two_nearest(&[0.2]).unwrap();
            assert_eq!((a.id, b.id), (1, 2));
        }
    }

    #[test]
    fn range_count_examples() {
        let dom = Domain::torus(2);
        let mut rng = RngStream::new(1, 0);
        let mut idx = OnlineIndex::new(dom, Backend::Grid, 500);
        for _ in 0..500 {
            idx.insert(&random_point(&mut rng, 2));
        }
        let p = idx.point(17).to_vec();
        assert!(idx.range_count(&p, 0.0) >= 1);
        assert_eq!(idx.range_count(&p, dom.diameter()), 500);
        assert_eq!(idx.range_count(&p, -1.0), 0);
    }

    #[test]
    fn backends_agree_with_brute_force() {
        for kind in [DomainKind::UnitCube, DomainKind::Torus] {
            for dim in 1..=3 {
                let dom = Domain { kind, dim };
                let mut rng = RngStream::new(100 + dim as u64, kind as u64);
                let mut checked = 0;
                while checked < 10_000 {
                    let n = rng.random_range(1..300usize);
                    let expected = rng.random_range(1..2 * n + 2);
                    let pts: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, dim)).collect();
                    let mut grid = OnlineIndex::new(dom, Backend::Grid, expected);
                    let mut scan = OnlineIndex::new(dom, Backend::LinearScan, expected);
                    for p in &pts {
                        grid.insert(p);
                        scan.insert(p);
                    }
                    for _ in 0..20 {
                        let q = random_point(&mut rng, dim);
                        let sorted = oracle_sorted(&dom, &pts, &q);
                        let g = grid.nearest(&q).unwrap();
                        let s = scan.nearest(&q).unwrap();
                        assert_eq!(g, s);
                        assert_eq!(g.id, sorted[0].1);
                        assert_eq!(g.dist, sorted[0].0.sqrt());
                        if n >= 2 {
                            let (g1, g2) = grid.two_nearest(&q).unwrap();
                            assert_eq!((g1, g2), scan.two_nearest(&q).unwrap());
                            assert_eq!((g1.id, g2.id), (sorted[0].1, sorted[1].1));
                            assert!(g1.dist <= g2.dist);
                        }
                        let r = rng.random::<f64>() * 0.3;
                        let brute = sorted.iter().filter(|(d2, _)| *d2 <= r * r).count();
                        assert_eq!(grid.range_count(&q, r), brute);
                        assert_eq!(scan.range_count(&q, r), brute);
                        checked += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn high_dimensional_scan_matches_brute_force() {
        for (dim, kind) in [(100, DomainKind::Torus), (100, DomainKind::UnitCube), (17, DomainKind::Torus), (16, DomainKind::UnitCube)] {
            let dom = Domain::new(kind, dim).unwrap();
            let mut rng = RngStream::new(8, dim as u64);
            // half the points are small perturbations of earlier ones, so near ties occur
            let mut pts: Vec<Vec<f64>> = Vec::new();
            for i in 0..600 {
                let p = if i % 2 == 1 {
                    pts[i / 2].iter().map(|&x: &f64| (x + 0.004 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect()
                } else {
                    random_point(&mut rng, dim)
                };
                pts.push(p);
            }
            let mut scan = OnlineIndex::new(dom, Backend::auto(dim), 600);
            assert_eq!(scan.backend(), Backend::LinearScan);
            for p in &pts {
                scan.insert(p);
            }
            for i in 0..200 {
                let q: Vec<f64> = if i % 2 == 0 {
                    random_point(&mut rng, dim)
                } else {
                    pts[i].iter().map(|&x| (x + 0.002 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect()
                };
                let sorted = oracle_sorted(&dom, &pts, &q);
                let (a, b) = scan.two_nearest(&q).unwrap();
                assert_eq!((a.id, b.id), (sorted[0].1, sorted[1].1));
                assert_eq!(scan.nearest(&q).unwrap().id, sorted[0].1);
            }
        }
    }

    proptest! {
        #[test]
        fn sketch_bound_is_a_lower_bound(
            a in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], 16),
            b in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], 16),
        ) {
            let qa: Vec<u8> = a.iter().map(|&x| Sketch::quantize(x)).collect();
            let qb: Vec<u8> = b.iter().map(|&x| Sketch::quantize(x)).collect();
            for kind in [DomainKind::UnitCube, DomainKind::Torus] {
                let lb = Sketch::lower_bound_units(kind, &qa, &qb) as f64 / 65536.0;
                let d2 = Domain::new(kind, 16).unwrap().distance_sq(&a, &b);
                prop_assert!(lb <= d2 * (1.0 + 1e-12), "{lb} > {d2}");
            }
        }
    }

    #[test]
    fn inserting_never_increases_nearest_distance() {
        let dom = Domain::torus(2);
        let mut rng = RngStream::new(4, 0);
        let queries: Vec<Vec<f64>> = (0..50).map(|_| random_point(&mut rng, 2)).collect();
        let mut idx = OnlineIndex::new(dom, Backend::Grid, 1000);
        idx.insert(&random_point(&mut rng, 2));
        let mut last: Vec<f64> = queries.iter().map(|q| idx.nearest(q).unwrap().dist).collect();
        for _ in 0..1000 {
            idx.insert(&random_point(&mut rng, 2));
            for (q, prev) in queries.iter().zip(last.iter_mut()) {
                let d = idx.nearest(q).unwrap().dist;
                assert!(d <= *prev);
                *prev = d;
            }
        }
    }

    #[test]
    fn shell_offsets_cover_cube_once() {
        for dim in 1..=3 {
            let mut seen = std::collections::HashSet::new();
            let mut off = Vec::new();
            for k in 0..=3 {
                for_each_shell_offset(dim, k, &mut off, |off| {
                    assert_eq!(off.iter().map(|o| o.abs()).max().unwrap(), k as isize);
                    assert!(seen.insert(off.to_vec()));
                });
            }
            assert_eq!(seen.len(), 7usize.pow(dim as u32));
        }
    }
}
