//! Time-varying topologies: a preferential-attachment generator, the
//! blinking process (vertices fail and recover) and the blurring process
//! (directed edge weights perform reflected Gaussian walks).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{make_stochastic, Matrix, StochasticMatrix};
use crate::source::{seeded_rng, Process};

const GRAPH_STREAM: u64 = 1;
const PROCESS_STREAM: u64 = 2;

/// Preferential-attachment graph: a clique on `k + 1` vertices, then each
/// new vertex links to `k = avg_degree / 2` distinct existing vertices
/// chosen with probability proportional to degree. Returns a symmetric 0/1
/// matrix with zero diagonal.
pub fn scale_free_graph(m: usize, avg_degree: usize, seed: u64) -> Result<Matrix> {
    if avg_degree < 2 || !avg_degree.is_multiple_of(2) || m <= avg_degree {
        return Err(Error::invalid(format!(
            "scale-free graph needs m > avg_degree >= 2 with avg_degree even (m={m}, avg_degree={avg_degree})"
        )));
    }
    let k = avg_degree / 2;
    let mut rng = seeded_rng(seed, GRAPH_STREAM);
    let mut adj = Matrix::zeros(m, m);
    // every edge endpoint once, so uniform picks are degree-weighted
    let mut ends: Vec<usize> = Vec::with_capacity(2 * k * m);
    let link = |adj: &mut Matrix, ends: &mut Vec<usize>, a: usize, b: usize| {
        adj.row_mut(a)[b] = 1.0;
        adj.row_mut(b)[a] = 1.0;
        ends.push(a);
        ends.push(b);
    };
    for a in 0..=k {
        for b in a + 1..=k {
            link(&mut adj, &mut ends, a, b);
        }
    }
    let mut targets = Vec::with_capacity(k);
    for v in k + 1..m {
        targets.clear();
        while targets.len() < k {
            let u = ends[rng.random_range(0..ends.len())];
            if !targets.contains(&u) {
                targets.push(u);
            }
        }
        for &u in &targets {
            link(&mut adj, &mut ends, v, u);
        }
    }
    Ok(adj)
}

/// Parameters of the blinking process as read from a source spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkingParams {
    pub m: usize,
    pub avg_degree: usize,
    pub p: f64,
    pub t_rec: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BlinkingParams {
    pub fn build(&self, fallback_seed: u64) -> Result<BlinkingProcess> {
        let seed = self.seed.unwrap_or(fallback_seed);
        let base = scale_free_graph(self.m, self.avg_degree, seed)?;
        BlinkingProcess::new(base, self.p, self.t_rec, seed)
    }
}

/// Vertices of a fixed undirected base graph fail independently with
/// probability `p` per step and stay down for `t_rec` steps. A down
/// vertex loses all its edges.
#[derive(Debug, Clone)]
pub struct BlinkingProcess {
    base: Matrix,
    down_timer: Vec<u32>,
    p: f64,
    t_rec: u32,
    rng: ChaCha8Rng,
}

impl BlinkingProcess {
    /// `base` must be a symmetric 0/1 matrix.
    pub fn new(base: Matrix, p: f64, t_rec: u32, seed: u64) -> Result<Self> {
        let m = base.require_square()?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
        }
        if t_rec == 0 {
            return Err(Error::invalid("t_rec must be >= 1"));
        }
        for i in 0..m {
            for j in 0..m {
                let x = base[(i, j)];
                if (x != 0.0 && x != 1.0) || x != base[(j, i)] {
                    return Err(Error::invalid("base adjacency must be symmetric 0/1"));
                }
            }
        }
        Ok(BlinkingProcess {
            base,
            down_timer: vec![0; m],
            p,
            t_rec,
            rng: seeded_rng(seed, PROCESS_STREAM),
        })
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    /// Steps until each vertex is back up; `0` means up.
    pub fn down_timers(&self) -> &[u32] {
        &self.down_timer
    }

    /// Base graph with self-loops, normalized: the coupling when every
    /// vertex is up.
    pub fn all_up_coupling(&self) -> StochasticMatrix {
        let m = self.base.rows();
        let mut a = self.base.clone();
        for i in 0..m {
            a.row_mut(i)[i] = 1.0;
        }
        make_stochastic(&a).expect("diagonal keeps every row positive")
    }
}

impl Process for BlinkingProcess {
    fn name(&self) -> &'static str {
        "blinking"
    }

    fn dim(&self) -> usize {
        self.base.rows()
    }

    fn step(&mut self) -> StochasticMatrix {
        for timer in &mut self.down_timer {
            if *timer > 0 {
                *timer -= 1;
            }
            let u: f64 = self.rng.random();
            if *timer == 0 && u < self.p {
                *timer = self.t_rec;
            }
        }
        let m = self.base.rows();
        let mut a = self.base.clone();
        for i in 0..m {
            let row = a.row_mut(i);
            if self.down_timer[i] > 0 {
                row.iter_mut().for_each(|x| *x = 0.0);
            } else {
                for (j, x) in row.iter_mut().enumerate() {
                    if self.down_timer[j] > 0 {
                        *x = 0.0;
                    }
                }
            }
            row[i] = 1.0;
        }
        make_stochastic(&a).expect("diagonal keeps every row positive")
    }
}

/// Parameters of the blurring process as read from a source spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurringParams {
    pub m: usize,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BlurringParams {
    pub fn build(&self, fallback_seed: u64) -> Result<BlurringProcess> {
        BlurringProcess::new(self.m, self.r, self.seed.unwrap_or(fallback_seed))
    }
}

/// One directed edge per vertex pair `i < j`; `forward` means `i -> j`,
/// i.e. weight in `A[j][i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PairEdge {
    i: usize,
    j: usize,
    forward: bool,
    weight: f64,
}

/// Every pair of vertices carries one directed edge with a weight drawn
/// uniformly from `[1, 2]`. Each step adds `N(0, r^2)` to every weight;
/// a weight that turns negative moves, with its absolute value, to the
/// reversed orientation.
#[derive(Debug, Clone)]
pub struct BlurringProcess {
    m: usize,
    r: f64,
    pairs: Vec<PairEdge>,
    rng: ChaCha8Rng,
    started: bool,
}

impl BlurringProcess {
    pub fn new(m: usize, r: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m must be >= 1"));
        }
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::invalid(format!("r must be finite and >= 0, got {r}")));
        }
        let mut rng = seeded_rng(seed, PROCESS_STREAM);
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                let forward = rng.random_bool(0.5);
                let weight = rng.random_range(1.0..=2.0);
                pairs.push(PairEdge {
                    i,
                    j,
                    forward,
                    weight,
                });
            }
        }
        Ok(BlurringProcess {
            m,
            r,
            pairs,
            rng,
            started: false,
        })
    }

    /// Current weighted adjacency, `A[i][j]` being the weight of `j -> i`.
    /// Diagonal is zero.
    pub fn weights(&self) -> Matrix {
        let m = self.m;
        let mut a = Matrix::zeros(m, m);
        for e in &self.pairs {
            let (from, to) = if e.forward { (e.i, e.j) } else { (e.j, e.i) };
            a.row_mut(to)[from] = e.weight;
        }
        a
    }

    fn perturb(&mut self) {
        for e in &mut self.pairs {
            let z: f64 = self.rng.sample(StandardNormal);
            let w = e.weight + self.r * z;
            if w < 0.0 {
                e.forward = !e.forward;
                e.weight = -w;
            } else {
                e.weight = w;
            }
        }
    }
}

impl Process for BlurringProcess {
    fn name(&self) -> &'static str {
        "blurring"
    }

    fn dim(&self) -> usize {
        self.m
    }

    /// The first call emits the initial graph; later calls perturb first.
    fn step(&mut self) -> StochasticMatrix {
        if self.started {
            self.perturb();
        }
        self.started = true;
        let mut a = self.weights();
        for i in 0..self.m {
            let row = a.row_mut(i);
            if row.iter().all(|&x| x == 0.0) {
                row[i] = 1.0;
            }
        }
        make_stochastic(&a).expect("empty rows were given a self-loop")
    }
}
