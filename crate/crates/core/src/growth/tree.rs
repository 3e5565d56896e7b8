//! Hierarchical exact attachment sampler.
//!
//! A dyadic hierarchy of cells over `[0,1]^d` stores the total degree of the
//! vertices in each cell. For a new point `x` the hierarchy is cut into
//!
//! * near vertices, whose exact weight `deg(v) F(|x - X_v|)` is computed, and
//! * far cells, well separated from `x`, whose weight is bounded above by
//!   `(total degree) * F(gap)` since `F` is nonincreasing.
//!
//! One entry is drawn from these proposal masses. A near vertex is returned
//! as is; a far cell is resolved to a vertex by degree, then accepted with
//! probability `F(|x - X_v|) / F(gap)`, otherwise the draw is repeated. The
//! accepted vertex has exactly the distribution of the full scan, but a step
//! costs `O(log n)` cells instead of `O(n)` vertices.
//!
//! How the hierarchy is cut only affects speed. A cell is treated as far when
//! `F` varies by at most a factor `e^TIGHT_LOG_RATIO` across it, or when its
//! bound is negligible next to the exact weight of a reference vertex (the
//! nearest predecessor), so rejections stay rare even for `F` that blows up
//! steeply at zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Domain, RngStream};

use super::sampler::invert_log_categorical;
use super::{Attractiveness, GraphState};

/// The finest level has about `2^FINEST_BITS` cells in total.
const FINEST_BITS: usize = 18;

/// A cell is far if `log F(gap) - log F(gap + diagonal)` is at most this.
const TIGHT_LOG_RATIO: f64 = 2.0 * std::f64::consts::LN_2;

/// ... or if its bound is this many nats below the reference weight.
const NEGLIGIBLE_NATS: f64 = 6.0;

#[derive(Clone, Copy, Debug)]
enum Proposal {
    Near { vertex: usize },
    Far { level: usize, cell: usize, log_f_gap: f64 },
}

/// Degree-weighted spatial hierarchy supporting exact attachment draws.
#[derive(Clone, Debug)]
pub struct DegreeTree {
    domain: Domain,
    depth: usize,
    /// `sums[l][c]`: total degree in cell `c` of level `l` (`2^l` cells per axis).
    sums: Vec<Vec<u64>>,
    buckets: Vec<Vec<u32>>,
    /// Finest-level per-axis cell index of each vertex, `dim` entries per vertex.
    cells: Vec<u32>,
    degrees: Vec<u32>,
    coords: Vec<f64>,
    proposals: Vec<Proposal>,
    log_masses: Vec<f64>,
    stack: Vec<(usize, usize)>,
}

impl DegreeTree {
    pub fn new(domain: Domain) -> Self {
        let depth = (FINEST_BITS / domain.dim).max(1);
        let sums = (0..=depth).map(|l| vec![0u64; 1usize << (l * domain.dim)]).collect();
        let finest = 1usize << (depth * domain.dim);
        DegreeTree {
            domain,
            depth,
            sums,
            buckets: vec![Vec::new(); finest],
            cells: Vec::new(),
            degrees: Vec::new(),
            coords: Vec::new(),
            proposals: Vec::new(),
            log_masses: Vec::new(),
            stack: Vec::new(),
        }
    }

    /// A tree holding every vertex of `state` with its current degree.
    pub fn from_state(domain: Domain, state: &GraphState) -> Self {
        let mut tree = DegreeTree::new(domain);
        for (v, &deg) in state.degrees().iter().enumerate() {
            tree.push(state.position(v), deg);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    fn flat_at(&self, level: usize, vertex: usize) -> usize {
        let d = self.domain.dim;
        let shift = self.depth - level;
        self.cells[vertex * d..(vertex + 1) * d]
            .iter()
            .fold(0usize, |acc, &c| (acc << level) | (c as usize >> shift))
    }

    /// Adds vertex `len()` at `p` with the given degree.
    pub fn push(&mut self, p: &[f64], degree: u32) {
        let side = 1usize << self.depth;
        for &x in p {
            self.cells.push(((x * side as f64) as usize).min(side - 1) as u32);
        }
        self.coords.extend_from_slice(p);
        self.degrees.push(degree);
        let v = self.degrees.len() - 1;
        for level in 0..=self.depth {
            let c = self.flat_at(level, v);
            self.sums[level][c] += degree as u64;
        }
        let c = self.flat_at(self.depth, v);
        self.buckets[c].push(v as u32);
    }

    pub fn bump_degree(&mut self, vertex: usize) {
        self.degrees[vertex] += 1;
        for level in 0..=self.depth {
            let c = self.flat_at(level, vertex);
            self.sums[level][c] += 1;
        }
    }

    fn position(&self, v: usize) -> &[f64] {
        let d = self.domain.dim;
        &self.coords[v * d..(v + 1) * d]
    }

    /// Gap between `x` and cell `cell` of `level`.
    fn cell_gap_sq(&self, x: &[f64], level: usize, cell: usize) -> f64 {
        let d = self.domain.dim;
        let side = 1.0 / (1usize << level) as f64;
        let mask = (1usize << level) - 1;
        let mut acc = 0.0;
        for (axis, &xi) in x.iter().enumerate() {
            let idx = (cell >> (level * (d - 1 - axis))) & mask;
            let lo = idx as f64 * side;
            let g = self.domain.axis_gap(xi, lo, lo + side);
            acc += g * g;
        }
        acc
    }

    /// Exact draw of the attachment endpoint for a new point at `x`.
    ///
    /// `reference` is any stored vertex; the nearest one makes the draw fastest.
    pub fn sample(&mut self, f: &Attractiveness, x: &[f64], reference: usize, rng: &mut RngStream) -> Result<usize> {
        if self.degrees.is_empty() {
            return Err(Error::DegenerateWeights);
        }
        self.decompose(f, x, reference)?;
        loop {
            let u = 1.0 - rng.unit_open_closed();
            let pick = invert_log_categorical(&self.log_masses, u)?;
            match self.proposals[pick] {
                Proposal::Near { vertex } => return Ok(vertex),
                Proposal::Far { level, cell, log_f_gap } => {
                    let v = self.descend(level, cell, rng);
                    let r2 = self.domain.distance_sq(x, self.position(v));
                    let log_accept = f.log_value_sq(r2) - log_f_gap;
                    if log_accept >= 0.0 || rng.unit_open_closed().ln() <= log_accept {
                        return Ok(v);
                    }
                }
            }
        }
    }

    fn decompose(&mut self, f: &Attractiveness, x: &[f64], reference: usize) -> Result<()> {
        let d = self.domain.dim;
        let diag_unit = (d as f64).sqrt();
        let ref_r2 = self.domain.distance_sq(x, self.position(reference));
        if ref_r2 == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let negligible = (self.degrees[reference] as f64).ln() + f.log_value_sq(ref_r2) - NEGLIGIBLE_NATS;
        self.proposals.clear();
        self.log_masses.clear();
        self.stack.clear();
        self.stack.push((0, 0));
        while let Some((level, cell)) = self.stack.pop() {
            let mass = self.sums[level][cell];
            if mass == 0 {
                continue;
            }
            let gap_sq = self.cell_gap_sq(x, level, cell);
            if gap_sq > 0.0 {
                let log_f_gap = f.log_value_sq(gap_sq);
                let log_mass = (mass as f64).ln() + log_f_gap;
                let far = log_mass <= negligible || {
                    let reach = gap_sq.sqrt() + diag_unit / (1usize << level) as f64;
                    log_f_gap - f.log_value_sq(reach * reach) <= TIGHT_LOG_RATIO
                };
                if far {
                    self.proposals.push(Proposal::Far { level, cell, log_f_gap });
                    self.log_masses.push(log_mass);
                    continue;
                }
            }
            if level == self.depth {
                for &v in &self.buckets[cell] {
                    let v = v as usize;
                    let r2 = self.domain.distance_sq(x, &self.coords[v * d..(v + 1) * d]);
                    if r2 == 0.0 {
                        return Err(Error::CoincidentPoints);
                    }
                    self.proposals.push(Proposal::Near { vertex: v });
                    self.log_masses.push((self.degrees[v] as f64).ln() + f.log_value_sq(r2));
                }
            } else {
                // children in reverse so they pop in ascending order
                for child in (0..(1usize << d)).rev() {
                    let child_cell = self.child_of(level, cell, child);
                    self.stack.push((level + 1, child_cell));
                }
            }
        }
        Ok(())
    }

    /// Flat index at `level + 1` of child `child` (one bit per axis, first axis most significant).
    fn child_of(&self, level: usize, cell: usize, child: usize) -> usize {
        let d = self.domain.dim;
        let mask = (1usize << level) - 1;
        let mut out = 0usize;
        for axis in 0..d {
            let idx = (cell >> (level * (d - 1 - axis))) & mask;
            let bit = (child >> (d - 1 - axis)) & 1;
            out = (out << (level + 1)) | (idx << 1 | bit);
        }
        out
    }

    /// Picks a vertex inside `cell` with probability proportional to degree.
    fn descend(&self, mut level: usize, mut cell: usize, rng: &mut RngStream) -> usize {
        let d = self.domain.dim;
        while level < self.depth {
            let total = self.sums[level][cell];
            let mut target = rng.random_range(0..total);
            let mut chosen = None;
            for child in 0..(1usize << d) {
                let c = self.child_of(level, cell, child);
                let m = self.sums[level + 1][c];
                if target < m {
                    chosen = Some(c);
                    break;
                }
                target -= m;
            }
            cell = chosen.expect("child degree sums add up to the parent's");
            level += 1;
        }
        let total = self.sums[level][cell];
        let mut target = rng.random_range(0..total);
        for &v in &self.buckets[cell] {
            let deg = self.degrees[v as usize] as u64;
            if target < deg {
                return v as usize;
            }
            target -= deg;
        }
        unreachable!("bucket degrees add up to the cell sum")
    }
}
