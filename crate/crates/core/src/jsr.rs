//! Joint spectral radius of a finite matrix set: Gripenberg-style
//! branch-and-bound bounds and an exhaustive lower-bound oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{project, spectral_norm, Matrix, NormKind, ProjectionBasis, StochasticMatrix};

/// Largest number of words `brute_force_jsr` will enumerate.
pub const BRUTE_FORCE_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsrBounds {
    pub lower: f64,
    pub upper: f64,
    pub depth_reached: usize,
    pub node_count: u64,
    /// Word certifying `lower`: `lower = rho(A_{w[k-1]} ... A_{w[0]})^(1/k)`.
    pub witness: Vec<usize>,
    pub converged: bool,
    /// Norm that produced `upper`.
    pub norm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripenbergOptions {
    pub tol: f64,
    pub max_len: usize,
    /// Expansions allowed per norm before giving up.
    pub node_budget: u64,
    /// Also search with an ellipsoidal norm fitted to short products.
    pub ellipsoid: bool,
}

impl Default for GripenbergOptions {
    fn default() -> Self {
        GripenbergOptions {
            tol: 1e-4,
            max_len: 24,
            node_budget: 200_000,
            ellipsoid: true,
        }
    }
}

fn check_set(set: &[Matrix]) -> Result<usize> {
    let n = set.first().ok_or(Error::EmptySet)?.require_square()?;
    for a in set {
        let k = a.require_square()?;
        if k != n {
            return Err(Error::DimensionMismatch { expected: n, got: k });
        }
    }
    Ok(n)
}

/// Projects every member of a stochastic set: `P G P+`.
pub fn project_set(set: &[StochasticMatrix], basis: &ProjectionBasis) -> Result<Vec<Matrix>> {
    set.iter().map(|g| project(g, basis)).collect()
}

/// Bounds with the default options except `tol` and `max_len`.
pub fn gripenberg(set: &[Matrix], tol: f64, max_len: usize) -> Result<JsrBounds> {
    gripenberg_with(
        set,
        &GripenbergOptions {
            tol,
            max_len,
            ..Default::default()
        },
    )
}

/// Branch and bound over products `A_{w[k-1]} ... A_{w[0]}`.
///
/// `lower` is the best `rho(product)^(1/k)` seen. A branch is closed once
/// `min over its prefixes of ||product||^(1/k)` drops to `lower + tol`;
/// `upper` is the largest such bound over the open and closed leaves. The
/// search runs with the infinity norm and, optionally, with an ellipsoidal
/// norm `||T A T^-1||_2`; both bounds are valid, so the tighter pair is kept.
pub fn gripenberg_with(set: &[Matrix], opts: &GripenbergOptions) -> Result<JsrBounds> {
    let n = check_set(set)?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!("tol must be > 0, got {}", opts.tol)));
    }
    if opts.max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    if let [a] = set {
        let rho = a.spectral_radius()?;
        return Ok(JsrBounds {
            lower: rho,
            upper: rho,
            depth_reached: 1,
            node_count: 1,
            witness: vec![0],
            converged: true,
            norm: "spectral_radius".into(),
        });
    }
    let mut best = search(set, opts, &InducedNorm::Plain(NormKind::Inf))?;
    if opts.ellipsoid && (2..=8).contains(&n) && best.upper - best.lower > opts.tol {
        let t = fit_ellipsoid(set);
        let other = search(set, opts, &InducedNorm::Ellipsoid(t))?;
        best = merge(best, other, opts.tol);
    }
    Ok(best)
}

fn merge(a: JsrBounds, b: JsrBounds, tol: f64) -> JsrBounds {
    let (lower, witness) = if b.lower > a.lower {
        (b.lower, b.witness)
    } else {
        (a.lower, a.witness)
    };
    let (upper, norm) = if b.upper < a.upper {
        (b.upper, b.norm)
    } else {
        (a.upper, a.norm)
    };
    let upper = upper.max(lower);
    JsrBounds {
        lower,
        upper,
        depth_reached: a.depth_reached.max(b.depth_reached),
        node_count: a.node_count + b.node_count,
        witness,
        converged: upper - lower <= tol,
        norm,
    }
}

enum InducedNorm {
    Plain(NormKind),
    /// `(T, T^-1)`.
    Ellipsoid((Matrix, Matrix)),
}

impl InducedNorm {
    fn eval(&self, a: &Matrix) -> f64 {
        match self {
            InducedNorm::Plain(kind) => a.norm(*kind),
            InducedNorm::Ellipsoid((t, ti)) => spectral_norm(&t.mul_unchecked(&a.mul_unchecked(ti))),
        }
    }

    fn label(&self) -> String {
        match self {
            InducedNorm::Plain(kind) => format!("{kind:?}").to_lowercase(),
            InducedNorm::Ellipsoid(_) => "ellipsoid".into(),
        }
    }
}

struct Node {
    bound: f64,
    word: Vec<usize>,
    product: Matrix,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap: larger bound first, then lexicographically smaller word
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.word.cmp(&self.word))
    }
}

fn root(x: f64, k: usize) -> f64 {
    if k == 1 {
        x
    } else {
        x.powf(1.0 / k as f64)
    }
}

fn search(set: &[Matrix], opts: &GripenbergOptions, norm: &InducedNorm) -> Result<JsrBounds> {
    // shave the cut level so that `upper - lower <= tol` survives rounding
    let tol = opts.tol * (1.0 - 1e-9);
    let mut lower = 0.0;
    let mut witness = vec![0];
    let mut heap = BinaryHeap::new();
    for (i, a) in set.iter().enumerate() {
        let r = a.spectral_radius()?;
        if r > lower {
            lower = r;
            witness = vec![i];
        }
        heap.push(Node {
            bound: norm.eval(a),
            word: vec![i],
            product: a.clone(),
        });
    }
    let mut terminal: f64 = 0.0;
    let mut node_count = 0u64;
    let mut depth = 1;
    while let Some(node) = heap.pop() {
        if node.bound <= lower + tol {
            continue;
        }
        let k = node.word.len();
        if k >= opts.max_len {
            terminal = terminal.max(node.bound);
            continue;
        }
        if node_count >= opts.node_budget {
            heap.push(node);
            break;
        }
        node_count += 1;
        depth = depth.max(k + 1);
        for (i, a) in set.iter().enumerate() {
            let product = a.mul_unchecked(&node.product);
            let r = root(product.spectral_radius()?, k + 1);
            let mut word = node.word.clone();
            word.push(i);
            if r > lower {
                lower = r;
                witness = word.clone();
            }
            let bound = node.bound.min(root(norm.eval(&product), k + 1));
            if bound > lower + tol {
                heap.push(Node {
                    bound,
                    word,
                    product,
                });
            }
        }
    }
    let open = heap
        .iter()
        .map(|n| n.bound)
        .filter(|&b| b > lower + tol)
        .fold(0.0, f64::max);
    let upper = (lower + tol).max(open).max(terminal);
    Ok(JsrBounds {
        lower,
        upper,
        depth_reached: depth,
        node_count,
        witness,
        converged: upper - lower <= opts.tol,
        norm: norm.label(),
    })
}

/// Upper-triangular `T` (with its inverse) approximately minimizing
/// `max over words w of length k of ||T A_w T^-1||_2^(1/k)`, for the best of
/// a few short word lengths.
fn fit_ellipsoid(set: &[Matrix]) -> (Matrix, Matrix) {
    let n = set[0].rows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in [1usize, 2, 4, 8] {
        if (set.len() as u128).pow(k as u32) > 512 {
            break;
        }
        let words = all_products(set, k);
        let cost = EllipsoidCost { n, k, words };
        let start = best.as_ref().map_or_else(|| identity_params(n), |(_, p)| p.clone());
        if let Some((value, params)) = minimize(&cost, start) {
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, params));
            }
        }
    }
    let params = best.map_or_else(|| identity_params(n), |(_, p)| p);
    let t = upper_from_params(n, &params);
    match upper_inverse(&t) {
        Some(ti) => (t, ti),
        None => (Matrix::identity(n), Matrix::identity(n)),
    }
}

fn minimize(cost: &EllipsoidCost, start: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let mut point = start;
    let mut value = cost.value(&point);
    for _ in 0..4 {
        let mut simplex = vec![point.clone()];
        for i in 0..point.len() {
            let mut p = point.clone();
            p[i] += if p[i].abs() > 1e-3 { 0.1 * p[i] } else { 0.05 };
            simplex.push(p);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-15).ok()?;
        let res = Executor::new(cost.clone(), solver)
            .configure(|s| s.max_iters(4000))
            .run()
            .ok()?;
        let p = res.state().get_best_param()?.clone();
        let v = cost.value(&p);
        if v < value {
            value = v;
            point = p;
        } else {
            break;
        }
    }
    Some((value, point))
}

fn all_products(set: &[Matrix], k: usize) -> Vec<Matrix> {
    let mut level = vec![Matrix::identity(set[0].rows())];
    for _ in 0..k {
        level = level
            .iter()
            .flat_map(|p| set.iter().map(move |a| a.mul_unchecked(p)))
            .collect();
    }
    level
}

fn identity_params(n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|i| (i..n).map(move |j| f64::from(u8::from(i == j))))
        .collect()
}

fn upper_from_params(n: usize, params: &[f64]) -> Matrix {
    let mut t = Matrix::zeros(n, n);
    let mut it = params.iter();
    for i in 0..n {
        let row = t.row_mut(i);
        for x in row.iter_mut().skip(i) {
            *x = *it.next().expect("n(n+1)/2 parameters");
        }
    }
    t
}

/// Inverse of an upper-triangular matrix by back substitution.
fn upper_inverse(t: &Matrix) -> Option<Matrix> {
    let n = t.rows();
    let scale = t.max_abs();
    if (0..n).any(|i| !(t[(i, i)].abs() > 1e-10 * scale)) {
        return None;
    }
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in (0..=col).rev() {
            let mut s = f64::from(u8::from(i == col));
            for k in i + 1..=col {
                s -= t[(i, k)] * inv[(k, col)];
            }
            inv.row_mut(i)[col] = s / t[(i, i)];
        }
    }
    Some(inv)
}

#[derive(Clone)]
struct EllipsoidCost {
    n: usize,
    k: usize,
    words: Vec<Matrix>,
}

impl EllipsoidCost {
    fn value(&self, params: &[f64]) -> f64 {
        let t = upper_from_params(self.n, params);
        let Some(ti) = upper_inverse(&t) else {
            return f64::MAX;
        };
        let worst = self
            .words
            .iter()
            .map(|a| spectral_norm(&t.mul_unchecked(&a.mul_unchecked(&ti))))
            .fold(0.0, f64::max);
        root(worst, self.k)
    }
}

impl CostFunction for EllipsoidCost {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

/// `max over all words of length 1..=max_len of rho(product)^(1/len)`: a
/// certified lower bound on the joint spectral radius.
pub fn brute_force_jsr(set: &[Matrix], max_len: usize) -> Result<f64> {
    check_set(set)?;
    let words = (set.len() as u128).checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if words > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded {
            words,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let mut best: f64 = 0.0;
    // depth-first over words, products built by left multiplication
    let mut stack: Vec<(Matrix, usize)> = set.iter().map(|a| (a.clone(), 1)).collect();
    while let Some((p, k)) = stack.pop() {
        best = best.max(root(p.spectral_radius()?, k));
        if k < max_len {
            for a in set {
                stack.push((a.mul_unchecked(&p), k + 1));
            }
        }
    }
    Ok(best)
}
