//! Finite-horizon estimators: Hajnal diameter and projection joint spectral
//! radius of a sequence, the transverse Lyapunov exponent, the full QR
//! Lyapunov spectrum and the Lyapunov exponent of a scalar map.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cml::ScalarMap;
use crate::error::{Error, Result};
use crate::hajnal::row_diameter;
use crate::linalg::{project, Matrix, NormKind, ProjectionBasis, StochasticMatrix};
use crate::source::{seeded_rng, CouplingSource};

/// Serialized stand-in for an exponent of `-inf`.
pub const NEG_INF_SENTINEL: f64 = -1e9;

/// Orbits of scalar maps beyond this magnitude count as diverged.
pub const ORBIT_LIMIT: f64 = 1e12;

const PROBE_STREAM: u64 = 3;

/// Window products are updated in parallel from this dimension on.
const PAR_MIN_DIM: usize = 24;

/// A per-step log growth rate that may be `-inf` (all mass annihilated).
///
/// There is deliberately no arithmetic on this type; use [`Exponent::finite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    NegInf,
}

impl Exponent {
    pub fn finite(self) -> Option<f64> {
        match self {
            Exponent::Finite(x) => Some(x),
            Exponent::NegInf => None,
        }
    }

    pub fn is_neg_inf(self) -> bool {
        self == Exponent::NegInf
    }

    /// The value with `-inf` mapped to [`NEG_INF_SENTINEL`].
    pub fn to_sentinel(self) -> f64 {
        self.finite().unwrap_or(NEG_INF_SENTINEL)
    }

    pub fn from_sentinel(x: f64) -> Self {
        if x <= NEG_INF_SENTINEL {
            Exponent::NegInf
        } else {
            Exponent::Finite(x)
        }
    }

    fn max(self, other: Exponent) -> Exponent {
        match (self, other) {
            (Exponent::Finite(a), Exponent::Finite(b)) => Exponent::Finite(a.max(b)),
            (Exponent::NegInf, x) | (x, Exponent::NegInf) => x,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(x) => write!(f, "{x}"),
            Exponent::NegInf => write!(f, "-inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_sentinel())
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Exponent::from_sentinel)
    }
}

/// Start times standing in for the supremum over `t0`: `count` samples
/// spaced `spacing` apart, the spacing defaulting to `max(1, horizon / 8)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T0Sampling {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<u64>,
}

impl Default for T0Sampling {
    fn default() -> Self {
        T0Sampling {
            count: 16,
            spacing: None,
        }
    }
}

impl T0Sampling {
    pub fn samples(&self, horizon: u64) -> Vec<u64> {
        let s = self.spacing.unwrap_or((horizon / 8).max(1));
        (0..self.count as u64).map(|k| k * s).collect()
    }
}

/// Estimate of a decay rate together with its per-`t` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiamEstimate {
    pub value: f64,
    pub horizon: u64,
    pub t0_samples: Vec<u64>,
    /// `curve[t - 1] = max over t0 of diam(window(t0, t))^(1/t)`.
    pub curve: Vec<f64>,
    pub converged: bool,
    pub norm: NormKind,
}

/// The last quarter of `curve` varies by less than 10% of its maximum.
pub fn last_quartile_converged(curve: &[f64]) -> bool {
    if curve.is_empty() {
        return false;
    }
    let tail = &curve[curve.len() * 3 / 4..];
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    hi <= 0.0 || (hi - lo) <= 0.1 * hi
}

fn check_estimator_args(horizon: u64, t0_samples: &[u64]) -> Result<Vec<u64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if t0_samples.is_empty() {
        return Err(Error::invalid("t0_samples must not be empty"));
    }
    let mut t0s = t0_samples.to_vec();
    t0s.sort_unstable();
    t0s.dedup();
    Ok(t0s)
}

/// Tracks the product `B = G(t0 + t - 1) ... G(t0)` through the anchored
/// difference `D = c (B - e0 b_last)`, whose rows have the same pairwise
/// differences as the rows of `B` up to the scale `c = exp(-log_scale)`.
struct AnchoredWindow {
    d: Matrix,
    log_scale: f64,
    dead: bool,
}

impl AnchoredWindow {
    fn new(m: usize) -> Self {
        let d = Matrix::from_fn(m, m, |i, j| {
            f64::from(u8::from(i == j)) - f64::from(u8::from(j == m - 1))
        })
        .expect("m >= 1");
        AnchoredWindow {
            d,
            log_scale: 0.0,
            dead: m < 2,
        }
    }

    fn step(&mut self, g: &Matrix) {
        if self.dead {
            return;
        }
        let mut d = g.mul_unchecked(&self.d);
        let m = d.rows();
        let last = d.row(m - 1).to_vec();
        for i in 0..m {
            for (x, l) in d.row_mut(i).iter_mut().zip(&last) {
                *x -= l;
            }
        }
        let scale = d.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            self.dead = true;
            return;
        }
        d.scale_in_place(1.0 / scale);
        self.log_scale += scale.ln();
        self.d = d;
    }

    fn log_diam(&self, kind: NormKind) -> Option<f64> {
        if self.dead {
            return None;
        }
        let r = row_diameter(&self.d, kind);
        (r > 0.0).then(|| self.log_scale + r.ln())
    }
}

/// Scaled product of projected matrices.
struct ProjectedWindow {
    p: Matrix,
    log_scale: f64,
    dead: bool,
}

impl ProjectedWindow {
    fn step(&mut self, g_hat: &Matrix) {
        if self.dead {
            return;
        }
        let mut p = g_hat.mul_unchecked(&self.p);
        let scale = p.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            self.dead = true;
            return;
        }
        p.scale_in_place(1.0 / scale);
        self.log_scale += scale.ln();
        self.p = p;
    }

    fn log_norm(&self, basis: &ProjectionBasis, kind: NormKind) -> Option<f64> {
        if self.dead {
            return None;
        }
        let n = basis.to_canonical(&self.p).norm(kind);
        (n > 0.0).then(|| self.log_scale + n.ln())
    }
}

/// Runs every window `[t0, t0 + horizon)` in one forward pass over the
/// source, so driven sources are read sequentially. `record(w, t, state)`
/// returns the log quantity of window `w` after `t` steps.
fn sweep<W: Send>(
    source: &mut dyn CouplingSource,
    horizon: u64,
    t0s: &[u64],
    mut make: impl FnMut() -> W,
    prepare: impl Fn(StochasticMatrix) -> Result<Matrix>,
    step: impl Fn(&mut W, &Matrix) + Sync,
    log_value: impl Fn(&W) -> Option<f64> + Sync,
) -> Result<Vec<f64>> {
    let dim = source.dim();
    let mut windows: Vec<W> = t0s.iter().map(|_| make()).collect();
    let mut curves = vec![vec![0.0; horizon as usize]; t0s.len()];
    let first = t0s[0];
    let end = t0s[t0s.len() - 1] + horizon;
    for t in first..end {
        let active: Vec<usize> = (0..t0s.len())
            .filter(|&w| t0s[w] <= t && t < t0s[w] + horizon)
            .collect();
        if active.is_empty() {
            continue;
        }
        let g = prepare(source.at(t)?)?;
        let mut refs: Vec<(&mut W, &mut Vec<f64>, u64)> = windows
            .iter_mut()
            .zip(curves.iter_mut())
            .zip(t0s)
            .filter(|(_, &t0)| t0 <= t && t < t0 + horizon)
            .map(|((w, c), &t0)| (w, c, t - t0 + 1))
            .collect();
        let update = |(w, c, len): &mut (&mut W, &mut Vec<f64>, u64)| {
            step(w, &g);
            c[*len as usize - 1] = log_value(w).map_or(0.0, |l| (l / *len as f64).exp());
        };
        if dim >= PAR_MIN_DIM && refs.len() > 1 {
            refs.par_iter_mut().for_each(update);
        } else {
            refs.iter_mut().for_each(update);
        }
    }
    let curve: Vec<f64> = (0..horizon as usize)
        .map(|k| curves.iter().map(|c| c[k]).fold(0.0, f64::max))
        .collect();
    Ok(curve)
}

fn finish(curve: Vec<f64>, horizon: u64, t0s: Vec<u64>, norm: NormKind) -> DiamEstimate {
    DiamEstimate {
        value: *curve.last().expect("horizon >= 1"),
        horizon,
        t0_samples: t0s,
        converged: last_quartile_converged(&curve),
        curve,
        norm,
    }
}

/// `max over t0 of diam(G(t0 + t - 1) ... G(t0))^(1/t)` for `t = 1..=horizon`.
pub fn estimate_hajnal_diameter(
    source: &mut dyn CouplingSource,
    horizon: u64,
    t0_samples: &[u64],
    kind: NormKind,
) -> Result<DiamEstimate> {
    let t0s = check_estimator_args(horizon, t0_samples)?;
    let m = source.dim();
    let curve = sweep(
        source,
        horizon,
        &t0s,
        || AnchoredWindow::new(m),
        |g| Ok(g.into_inner()),
        |w, g| w.step(g),
        |w| w.log_diam(kind),
    )?;
    Ok(finish(curve, horizon, t0s, kind))
}

/// `max over t0 of ||G_hat(t0 + t - 1) ... G_hat(t0)||^(1/t)`, the norm being
/// taken in orthonormal quotient coordinates so that the result does not
/// depend on the basis.
pub fn estimate_projection_jsr(
    source: &mut dyn CouplingSource,
    basis: &ProjectionBasis,
    horizon: u64,
    t0_samples: &[u64],
    kind: NormKind,
) -> Result<DiamEstimate> {
    let t0s = check_estimator_args(horizon, t0_samples)?;
    if basis.dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: basis.dim(),
        });
    }
    let n = source.dim() - 1;
    let curve = sweep(
        source,
        horizon,
        &t0s,
        || ProjectedWindow {
            p: Matrix::identity(n),
            log_scale: 0.0,
            dead: false,
        },
        |g| project(&g, basis),
        |w, g| w.step(g),
        |w| w.log_norm(basis, kind),
    )?;
    Ok(finish(curve, horizon, t0s, kind))
}

/// `log diam(G(t0 + t - 1) ... G(t0))` for `t = 1..=horizon`; `None` once the
/// product has collapsed to equal rows.
pub fn log_diam_series(
    source: &mut dyn CouplingSource,
    t0: u64,
    horizon: u64,
    kind: NormKind,
) -> Result<Vec<Option<f64>>> {
    let mut w = AnchoredWindow::new(source.dim());
    (t0..t0 + horizon)
        .map(|t| {
            w.step(source.at(t)?.as_matrix());
            Ok(w.log_diam(kind))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: Exponent,
    pub horizon: u64,
    pub renorm_every: u64,
    /// `(t, running estimate)` at every renormalization.
    pub trace: Vec<(u64, Exponent)>,
}

impl LyapunovEstimate {
    /// The last quarter of the trace varies by less than 10% of its final
    /// magnitude; a collapsed estimate counts as converged.
    pub fn converged(&self) -> bool {
        let Some(last) = self.value.finite() else {
            return true;
        };
        let tail = &self.trace[self.trace.len() * 3 / 4..];
        let vals: Vec<f64> = tail.iter().filter_map(|(_, e)| e.finite()).collect();
        if vals.len() != tail.len() || vals.is_empty() {
            return false;
        }
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo <= 0.1 * last.abs().max(1e-12)
    }
}

/// Largest transverse Lyapunov exponent: `n_vectors` seeded random probes
/// are pushed through `G_hat(t) = P G(t) P+` and renormalized every
/// `renorm_every` steps; the value is the largest average log growth.
pub fn estimate_sigma1(
    source: &mut dyn CouplingSource,
    basis: &ProjectionBasis,
    horizon: u64,
    renorm_every: u64,
    n_vectors: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if renorm_every == 0 || horizon < renorm_every {
        return Err(Error::invalid(format!(
            "need horizon >= renorm_every >= 1 (horizon {horizon}, renorm_every {renorm_every})"
        )));
    }
    if n_vectors == 0 {
        return Err(Error::invalid("n_vectors must be >= 1"));
    }
    if basis.dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: basis.dim(),
        });
    }
    let n = source.dim() - 1;
    let mut rng = seeded_rng(seed, PROBE_STREAM);
    // (vector, accumulated log norm); None once collapsed
    let mut probes: Vec<Option<(Vec<f64>, f64)>> = (0..n_vectors)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = l2(&v);
            v.iter_mut().for_each(|x| *x /= norm);
            Some((v, 0.0))
        })
        .collect();
    let mut trace = Vec::new();
    for t in 0..horizon {
        let g = source.at(t)?;
        let renorm = (t + 1) % renorm_every == 0 || t + 1 == horizon;
        for probe in probes.iter_mut() {
            let Some((v, acc)) = probe else { continue };
            *v = basis.apply_projected(&g, v);
            if renorm {
                let norm = l2(v);
                if norm > 0.0 && norm.is_finite() {
                    v.iter_mut().for_each(|x| *x /= norm);
                    *acc += norm.ln();
                } else {
                    *probe = None;
                }
            }
        }
        if renorm {
            let best = best_rate(&probes, t + 1);
            trace.push((t + 1, best));
        }
    }
    Ok(LyapunovEstimate {
        value: best_rate(&probes, horizon),
        horizon,
        renorm_every,
        trace,
    })
}

fn best_rate(probes: &[Option<(Vec<f64>, f64)>], t: u64) -> Exponent {
    probes
        .iter()
        .flatten()
        .map(|(_, acc)| Exponent::Finite(acc / t as f64))
        .fold(Exponent::NegInf, Exponent::max)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// All Lyapunov exponents of `A(horizon - 1) ... A(0)`, descending, by
/// repeated modified Gram-Schmidt QR of the propagated frame.
pub fn lyapunov_spectrum_qr(
    dim: usize,
    horizon: u64,
    mut next: impl FnMut(u64) -> Result<Matrix>,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if dim == 0 {
        return Err(Error::EmptyMatrix);
    }
    // columns of the frame, stored as rows of `q`
    let mut q: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut sums = vec![0.0; dim];
    for t in 0..horizon {
        let a = next(t)?;
        if a.rows() != dim || a.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: a.rows(),
            });
        }
        let scale = a.max_abs();
        let mut z: Vec<Vec<f64>> = q.iter().map(|col| a.matvec(col)).collect();
        for k in 0..dim {
            let before = l2(&z[k]);
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for j in 0..k {
                    let (done, rest) = z.split_at_mut(k);
                    let r: f64 = done[j].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                    for (x, y) in rest[0].iter_mut().zip(&done[j]) {
                        *x -= r * y;
                    }
                }
            }
            let r = l2(&z[k]);
            if !(r > 1e-13 * before.max(f64::MIN_POSITIVE)) || !(r > 1e-300 * scale.max(1.0)) {
                return Err(Error::SingularMatrix(t));
            }
            z[k].iter_mut().for_each(|x| *x /= r);
            sums[k] += r.ln();
        }
        q = z;
    }
    let mut exps: Vec<f64> = sums.into_iter().map(|s| s / horizon as f64).collect();
    exps.sort_by(|a, b| b.total_cmp(a));
    Ok(exps)
}

/// Average of `log |f'(s(k))|` over `horizon` steps after discarding
/// `burn_in` iterates.
pub fn estimate_scalar_lyapunov(
    map: &dyn ScalarMap,
    s0: f64,
    burn_in: u64,
    horizon: u64,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let mut s = s0;
    for k in 0..burn_in {
        s = map.f(s);
        if !(s.abs() <= ORBIT_LIMIT) {
            return Err(Error::OrbitDiverged(k + 1));
        }
    }
    let mut acc = 0.0;
    for k in 0..horizon {
        acc += map.df(s).abs().max(1e-300).ln();
        s = map.f(s);
        if !(s.abs() <= ORBIT_LIMIT) {
            return Err(Error::OrbitDiverged(burn_in + k + 1));
        }
    }
    Ok(acc / horizon as f64)
}
