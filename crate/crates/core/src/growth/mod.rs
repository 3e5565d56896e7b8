//! Growth of on-line nearest-neighbour (ONG) and geometric preferential
//! attachment (GPA) graphs.
//!
//! Both models start from two vertices joined by one edge and add one vertex
//! and one edge per arriving point. In the ONG the new vertex joins its
//! nearest predecessor; in the GPA it joins `v` with probability proportional
//! to `deg(v) * F(|x - X_v|)`.

mod sampler;
mod tree;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Density, Domain, Point, RngStream};
use crate::spatial_index::{Backend, OnlineIndex};

pub use sampler::{attachment_log_weights, invert_log_categorical, sample_attachment};
pub use tree::DegreeTree;

/// Distance-decay weight `F` of the attachment rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attractiveness {
    /// `F ≡ 1`: pure preferential attachment.
    Constant,
    /// `F(r) = r^{-s}`.
    PowerLaw { s: f64 },
    /// `F(r) = exp{(log⁺(1/r))^γ}`, equal to 1 for `r >= 1`.
    Gamma { gamma: f64 },
}

impl Attractiveness {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Attractiveness::Constant => Ok(()),
            Attractiveness::PowerLaw { s } if s > 0.0 && s.is_finite() => Ok(()),
            Attractiveness::PowerLaw { s } => Err(Error::Config(format!("power-law exponent must be > 0, got {s}"))),
            Attractiveness::Gamma { gamma } if gamma > 1.0 && gamma.is_finite() => Ok(()),
            Attractiveness::Gamma { gamma } => Err(Error::Config(format!("gamma must be > 1, got {gamma}"))),
        }
    }

    /// `log F(r)` given `r² > 0`.
    #[inline(always)]
    pub fn log_value_sq(&self, r2: f64) -> f64 {
        match *self {
            Attractiveness::Constant => 0.0,
            Attractiveness::PowerLaw { s } => -0.5 * s * r2.ln(),
            Attractiveness::Gamma { gamma } => {
                let inv = -0.5 * r2.ln();
                if inv > 0.0 {
                    inv.powf(gamma)
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Attractiveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attractiveness::Constant => write!(f, "constant"),
            Attractiveness::PowerLaw { s } => write!(f, "power:{s}"),
            Attractiveness::Gamma { gamma } => write!(f, "gamma:{gamma}"),
        }
    }
}

/// Parses `constant`, `power:<s>` and `gamma:<γ>`.
impl FromStr for Attractiveness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let value = |name: &str| -> Result<f64> {
            arg.ok_or_else(|| Error::Config(format!("{name} needs a parameter, e.g. {name}:2")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad {name} parameter: {e}")))
        };
        let f = match kind {
            "constant" | "const" => Attractiveness::Constant,
            "power" | "power_law" => Attractiveness::PowerLaw { s: value("power")? },
            "gamma" => Attractiveness::Gamma { gamma: value("gamma")? },
            other => return Err(Error::Config(format!("unknown attractiveness `{other}`"))),
        };
        f.validate()?;
        Ok(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Ong,
    Gpa { f: Attractiveness },
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Ong => Ok(()),
            Model::Gpa { f } => f.validate(),
        }
    }

    pub fn is_ong(&self) -> bool {
        matches!(self, Model::Ong)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Ong => write!(f, "ong"),
            Model::Gpa { f: a } => write!(f, "gpa[{a}]"),
        }
    }
}

const NO_PARENT: u32 = u32::MAX;

/// A grown graph: positions, degrees, chosen endpoints and nearest predecessors.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    dim: usize,
    coords: Vec<f64>,
    degree: Vec<u32>,
    parent: Vec<u32>,
    nn_parent: Vec<u32>,
    mismatch: Vec<bool>,
    ong: bool,
}

impl GraphState {
    /// Vertices at `p0` and `p1` joined by a single edge.
    pub fn init(p0: &[f64], p1: &[f64]) -> Self {
        assert_eq!(p0.len(), p1.len(), "initial points differ in dimension");
        let mut coords = p0.to_vec();
        coords.extend_from_slice(p1);
        GraphState {
            dim: p0.len(),
            coords,
            degree: vec![1, 1],
            parent: vec![NO_PARENT, 0],
            nn_parent: vec![NO_PARENT, 0],
            mismatch: vec![false, false],
            ong: false,
        }
    }

    /// A state with the given positions and degrees and no edge bookkeeping,
    /// for exercising the attachment rule on hand-built configurations.
    pub fn frozen(domain: Domain, coords: Vec<f64>, degree: Vec<u32>) -> Self {
        assert_eq!(coords.len(), degree.len() * domain.dim);
        let n = degree.len();
        GraphState {
            dim: domain.dim,
            coords,
            degree,
            parent: vec![NO_PARENT; n],
            nn_parent: vec![NO_PARENT; n],
            mismatch: vec![false; n],
            ong: false,
        }
    }

    /// A star on `leaves + 1` vertices, centre 0. Positions are all zero.
    pub fn star(dim: usize, leaves: usize) -> Self {
        let mut degree = vec![1u32; leaves + 1];
        degree[0] = leaves as u32;
        let mut parent = vec![0u32; leaves + 1];
        parent[0] = NO_PARENT;
        GraphState {
            dim,
            coords: vec![0.0; dim * (leaves + 1)],
            degree,
            parent: parent.clone(),
            nn_parent: parent,
            mismatch: vec![false; leaves + 1],
            ong: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.degree.len()
    }

    /// Number of arrivals `n`: the graph has `n + 1` vertices and `n` edges.
    pub fn n(&self) -> usize {
        self.degree.len().saturating_sub(1)
    }

    pub fn position(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degree
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        let p = self.parent[v];
        (p != NO_PARENT).then_some(p as usize)
    }

    pub fn nn_parent(&self, v: usize) -> Option<usize> {
        let p = self.nn_parent[v];
        (p != NO_PARENT).then_some(p as usize)
    }

    pub fn parents(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        (0..self.vertex_count()).map(|v| self.parent(v))
    }

    pub fn mismatches(&self) -> &[bool] {
        &self.mismatch
    }

    /// True when grown as an ONG, where chosen and nearest endpoints coincide.
    pub fn is_ong(&self) -> bool {
        self.ong
    }

    pub fn max_degree(&self) -> u32 {
        self.degree.iter().copied().max().unwrap_or(0)
    }

    fn push(&mut self, x: &[f64], parent: usize, nn_parent: usize) {
        self.coords.extend_from_slice(x);
        self.degree.push(1);
        self.degree[parent] += 1;
        self.parent.push(parent as u32);
        self.nn_parent.push(nn_parent as u32);
        self.mismatch.push(parent != nn_parent);
    }

    /// Checks the edge-count and parent-ordering invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n() as u64;
        let sum: u64 = self.degree.iter().map(|&d| d as u64).sum();
        if sum != 2 * n {
            return Err(Error::Invariant(format!("degree sum {sum} != 2n = {}", 2 * n)));
        }
        if n >= 1 && self.degree.contains(&0) {
            return Err(Error::Invariant("isolated vertex".into()));
        }
        for v in 1..self.vertex_count() {
            match (self.parent(v), self.nn_parent(v)) {
                (Some(p), Some(q)) if p < v && q < v => {}
                _ => return Err(Error::Invariant(format!("vertex {v} has an invalid parent"))),
            }
        }
        Ok(())
    }

    /// CSV with header `id,x_0,...,degree,parent,nn_parent,mismatch`.
    /// Vertex 0 has parent and nn_parent `-1`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "id")?;
        for i in 0..self.dim {
            write!(out, ",x_{i}")?;
        }
        writeln!(out, ",degree,parent,nn_parent,mismatch")?;
        let signed = |p: Option<usize>| p.map_or(-1, |p| p as i64);
        for v in 0..self.vertex_count() {
            write!(out, "{v}")?;
            for c in self.position(v) {
                write!(out, ",{c}")?;
            }
            writeln!(
                out,
                ",{},{},{},{}",
                self.degree[v],
                signed(self.parent(v)),
                signed(self.nn_parent(v)),
                self.mismatch[v] as u8
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        buf.flush().map_err(|e| Error::io(path, e))
    }
}

/// The two-vertex starting graph.
pub fn init_graph(p0: &Point, p1: &Point) -> GraphState {
    GraphState::init(p0.coords(), p1.coords())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Full `O(n)` scan over all vertices per step.
    Scan,
    /// Hierarchical rejection sampler; `d <= 3` only.
    Tree,
}

impl SamplerKind {
    pub fn auto(dim: usize) -> Self {
        if dim <= 3 {
            SamplerKind::Tree
        } else {
            SamplerKind::Scan
        }
    }
}

/// Backend choices for a run. `None` selects by dimension.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub backend: Option<Backend>,
    pub sampler: Option<SamplerKind>,
}

enum Attach {
    Nearest,
    Scan { f: Attractiveness, weights: Vec<f64> },
    Tree { f: Attractiveness, tree: Box<DegreeTree> },
}

/// Incremental builder owning the graph, its index and the attachment sampler.
pub struct Grower {
    domain: Domain,
    state: GraphState,
    index: OnlineIndex,
    attach: Attach,
}

impl Grower {
    /// Starts from the initial two-vertex graph on `p0`, `p1`.
    pub fn new(model: Model, domain: Domain, p0: &[f64], p1: &[f64], expected: usize, opts: GrowthOptions) -> Result<Self> {
        model.validate()?;
        if p0.len() != domain.dim || p1.len() != domain.dim {
            return Err(Error::Config("initial points do not match the domain dimension".into()));
        }
        if domain.distance_sq(p0, p1) == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let backend = opts.backend.unwrap_or_else(|| Backend::auto(domain.dim));
        let mut index = OnlineIndex::new(domain, backend, expected);
        index.insert(p0);
        index.insert(p1);
        let attach = match model {
            Model::Ong => Attach::Nearest,
            Model::Gpa { f } => match opts.sampler.unwrap_or_else(|| SamplerKind::auto(domain.dim)) {
                SamplerKind::Scan => Attach::Scan { f, weights: Vec::with_capacity(expected + 1) },
                SamplerKind::Tree => {
                    if domain.dim > 3 {
                        return Err(Error::Config("the tree sampler supports d <= 3".into()));
                    }
                    let mut tree = DegreeTree::new(domain);
                    tree.push(p0, 1);
                    tree.push(p1, 1);
                    Attach::Tree { f, tree: Box::new(tree) }
                }
            },
        };
        let mut state = GraphState::init(p0, p1);
        state.ong = model.is_ong();
        Ok(Grower { domain, state, index, attach })
    }

    pub fn state(&self) -> &GraphState {
        &self.state
    }

    pub fn into_state(self) -> GraphState {
        self.state
    }

    pub fn index(&self) -> &OnlineIndex {
        &self.index
    }

    /// Adds a vertex at `x` and one edge.
    pub fn step(&mut self, x: &[f64], rng: &mut RngStream) -> Result<usize> {
        let nn = self.index.nearest(x)?;
        if nn.dist == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let parent = match &mut self.attach {
            Attach::Nearest => nn.id,
            Attach::Scan { f, weights } => {
                sampler::fill_log_weights(&self.state, f, x, &self.domain, weights)?;
                sample_attachment(weights, rng)?
            }
            Attach::Tree { f, tree } => tree.sample(f, x, nn.id, rng)?,
        };
        self.state.push(x, parent, nn.id);
        self.index.insert(x);
        if let Attach::Tree { tree, .. } = &mut self.attach {
            tree.push(x, 1);
            tree.bump_degree(parent);
        }
        Ok(parent)
    }
}

/// Grows a graph with `n + 1` vertices, calling `at_checkpoint` whenever the
/// arrival count reaches one of `checkpoints` (ascending).
///
/// Randomness is consumed in arrival order, so the state at a checkpoint is
/// identical to a fresh run stopped there.
#[allow(clippy::too_many_arguments)]
pub fn run_growth_with_checkpoints(
    model: Model,
    n: usize,
    density: &Density,
    domain: Domain,
    rng: &mut RngStream,
    opts: GrowthOptions,
    checkpoints: &[usize],
    mut at_checkpoint: impl FnMut(&GraphState),
) -> Result<GraphState> {
    if n < 1 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    density.validate(domain.dim)?;
    let points = density.sampler();
    let d = domain.dim;
    let mut x = vec![0.0; d];
    let mut p0 = vec![0.0; d];
    points.sample_into(rng, &mut p0);
    points.sample_into(rng, &mut x);
    let mut grower = Grower::new(model, domain, &p0, &x, n + 1, opts)?;
    let mut next_checkpoint = checkpoints.iter().copied().peekable();
    let mut visit = |state: &GraphState, next: &mut std::iter::Peekable<_>| {
        while let Some(&c) = next.peek() {
            if c == state.n() {
                at_checkpoint(state);
            }
            if c <= state.n() {
                next.next();
            } else {
                break;
            }
        }
    };
    visit(grower.state(), &mut next_checkpoint);
    for _ in 1..n {
        points.sample_into(rng, &mut x);
        grower.step(&x, rng)?;
        visit(grower.state(), &mut next_checkpoint);
    }
    Ok(grower.into_state())
}

pub fn run_growth(
    model: Model,
    n: usize,
    density: &Density,
    domain: Domain,
    rng: &mut RngStream,
    opts: GrowthOptions,
) -> Result<GraphState> {
    run_growth_with_checkpoints(model, n, density, domain, rng, opts, &[], |_| {})
}
