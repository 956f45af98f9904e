//! Coupled map lattices `x(t+1) = G(t) F(x(t))`: node maps, simulation,
//! the synchronization statistics `K` and state diameter, the variational
//! propagator and the `W = sigma1 + mu` criterion.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hajnal::state_diameter;
use crate::linalg::StochasticMatrix;
use crate::source::{params, seeded_rng, CouplingSource};
use crate::spectral::Exponent;

/// States with a component beyond this magnitude count as diverged.
pub const STATE_LIMIT: f64 = 1e12;

/// Final state diameter below which a run counts as synchronized.
pub const SYNC_THRESHOLD: f64 = 1e-8;

/// `|W|` below this is reported as indeterminate.
pub const INDETERMINATE_BAND: f64 = 0.05;

/// A scalar node map with its derivative.
pub trait ScalarMap: Send + Sync {
    fn name(&self) -> &str;

    fn f(&self, s: f64) -> f64;

    fn df(&self, s: f64) -> f64;

    /// Parameters as JSON, including the `variant` tag.
    fn spec(&self) -> Value;
}

/// `f(s) = alpha s (1 - s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Logistic {
    pub alpha: f64,
}

impl ScalarMap for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn f(&self, s: f64) -> f64 {
        self.alpha * s * (1.0 - s)
    }

    fn df(&self, s: f64) -> f64 {
        self.alpha * (1.0 - 2.0 * s)
    }

    fn spec(&self) -> Value {
        serde_json::json!({"variant": "logistic", "alpha": self.alpha})
    }
}

/// `f(s) = a s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    pub a: f64,
}

impl ScalarMap for Linear {
    fn name(&self) -> &str {
        "linear"
    }

    fn f(&self, s: f64) -> f64 {
        self.a * s
    }

    fn df(&self, _s: f64) -> f64 {
        self.a
    }

    fn spec(&self) -> Value {
        serde_json::json!({"variant": "linear", "a": self.a})
    }
}

type MapBuilder = dyn Fn(&Value) -> Result<Arc<dyn ScalarMap>> + Send + Sync;

/// Name-keyed constructors for node maps, e.g.
/// `{"variant": "logistic", "alpha": 3.9}`.
#[derive(Clone)]
pub struct MapRegistry {
    builders: BTreeMap<String, Arc<MapBuilder>>,
}

impl Default for MapRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl MapRegistry {
    pub fn empty() -> Self {
        MapRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("logistic", |v| {
            let m: Logistic = params(v)?;
            Ok(Arc::new(m))
        });
        r.register("linear", |v| {
            let m: Linear = params(v)?;
            Ok(Arc::new(m))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(&Value) -> Result<Arc<dyn ScalarMap>> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &Value) -> Result<Arc<dyn ScalarMap>> {
        let name = spec
            .get("variant")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("map spec needs a string field `variant`".into()))?;
        let builder = self.builders.get(name).ok_or_else(|| Error::UnknownVariant {
            kind: "map",
            name: name.to_string(),
        })?;
        builder(spec)
    }
}

/// Largest relative error between `df` and a central difference of `f` at
/// `n` seeded random points of `[lo, hi]`.
pub fn derivative_check(map: &dyn ScalarMap, n: usize, lo: f64, hi: f64, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed, 0);
    (0..n)
        .map(|_| {
            let s = rng.random_range(lo..hi);
            let h = 1e-5 * s.abs().max(1.0);
            let fd = (map.f(s + h) - map.f(s - h)) / (2.0 * h);
            let d = map.df(s);
            (fd - d).abs() / d.abs().max(1e-8)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmlState {
    pub x: Vec<f64>,
    pub t: u64,
}

/// `(1/(m-1)) sum_i (x_i - mean)^2`, computed relative to `x_0` so that a
/// state with equal components gives exactly zero.
pub fn instantaneous_variance(x: &[f64]) -> f64 {
    let m = x.len();
    if m < 2 {
        return 0.0;
    }
    let d: Vec<f64> = x.iter().map(|v| v - x[0]).collect();
    let mean = d.iter().sum::<f64>() / m as f64;
    d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
}

/// Time average of [`instantaneous_variance`] over a window of states.
#[allow(non_snake_case)]
pub fn sync_metric_K(states: &[Vec<f64>]) -> Result<f64> {
    let first = states
        .first()
        .ok_or_else(|| Error::invalid("window of states is empty"))?;
    let m = first.len();
    if m < 2 {
        return Err(Error::DegenerateDimension(m));
    }
    if let Some(bad) = states.iter().find(|x| x.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.len(),
        });
    }
    Ok(states.iter().map(|x| instantaneous_variance(x)).sum::<f64>() / states.len() as f64)
}

/// One step of the linearization along a synchronized orbit:
/// `delta' = f'(s) G delta`.
pub fn variational_step(g: &StochasticMatrix, df_at_s: f64, delta: &[f64]) -> Vec<f64> {
    g.matvec(delta).into_iter().map(|v| df_at_s * v).collect()
}

/// One CML step. Uses `G y = y_0 e0 + G (y - y_0 e0)` so that equal
/// components stay exactly equal.
pub fn cml_step(g: &StochasticMatrix, map: &dyn ScalarMap, x: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = x.iter().map(|&s| map.f(s)).collect();
    let anchor = y[0];
    let d: Vec<f64> = y.iter().map(|v| v - anchor).collect();
    g.matvec(&d).into_iter().map(|v| anchor + v).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub t: u64,
    /// Running time average of the variance over `0..=t`.
    #[serde(rename = "K")]
    pub k: f64,
    pub diam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub records: Vec<SyncRecord>,
    /// States at the recorded times.
    pub trajectory: Vec<CmlState>,
    /// Instantaneous variance at every step `0..=steps`.
    pub variance: Vec<f64>,
    pub final_state: CmlState,
}

impl Simulation {
    pub fn final_diam(&self) -> f64 {
        state_diameter(&self.final_state.x)
    }

    pub fn observed_sync(&self) -> bool {
        self.final_diam() < SYNC_THRESHOLD
    }

    /// Mean variance over steps `from..=to`.
    pub fn mean_variance(&self, from: u64, to: u64) -> f64 {
        let to = to.min(self.variance.len() as u64 - 1);
        let w = &self.variance[from.min(to) as usize..=to as usize];
        w.iter().sum::<f64>() / w.len() as f64
    }

    /// `K` time-averaged over the second half of the run.
    pub fn post_transient_k(&self) -> f64 {
        let last = self.variance.len() as u64 - 1;
        self.mean_variance(last / 2, last)
    }
}

/// Iterates `x(t+1) = G(t) F(x(t))` for `steps` steps, recording `K` and the
/// state diameter at `t = 0, record_every, 2 record_every, ...` and at the
/// final step.
pub fn simulate(
    source: &mut dyn CouplingSource,
    map: &dyn ScalarMap,
    x0: &[f64],
    steps: u64,
    record_every: u64,
) -> Result<Simulation> {
    if steps == 0 || record_every == 0 {
        return Err(Error::invalid("steps and record_every must be >= 1"));
    }
    if x0.len() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: x0.len(),
        });
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i, 0));
    }
    let mut x = x0.to_vec();
    let mut variance = Vec::with_capacity(steps as usize + 1);
    let mut records = Vec::new();
    let mut trajectory = Vec::new();
    let mut var_sum = 0.0;
    for t in 0..=steps {
        if t > 0 {
            x = cml_step(&source.at(t - 1)?, map, &x);
            if !x.iter().all(|v| v.abs() <= STATE_LIMIT) {
                return Err(Error::StateDiverged(t));
            }
        }
        let v = instantaneous_variance(&x);
        variance.push(v);
        var_sum += v;
        if t % record_every == 0 || t == steps {
            records.push(SyncRecord {
                t,
                k: var_sum / (t + 1) as f64,
                diam: state_diameter(&x),
            });
            trajectory.push(CmlState { x: x.clone(), t });
        }
    }
    Ok(Simulation {
        records,
        trajectory,
        variance,
        final_state: CmlState { x, t: steps },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    #[serde(rename = "W")]
    pub w: Exponent,
    pub predicted_sync: bool,
    /// `|W|` inside the band where the sufficient condition says nothing
    /// reliable.
    pub indeterminate: bool,
}

/// `W = sigma1 + mu`; synchronization is predicted when `W < 0`.
pub fn criterion(sigma1: Exponent, mu: f64) -> Criterion {
    match sigma1 {
        Exponent::NegInf => Criterion {
            w: Exponent::NegInf,
            predicted_sync: true,
            indeterminate: false,
        },
        Exponent::Finite(s) => {
            let w = s + mu;
            Criterion {
                w: Exponent::Finite(w),
                predicted_sync: w < 0.0,
                indeterminate: w.abs() < INDETERMINATE_BAND,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuSource {
    Supplied,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    #[serde(rename = "K_series")]
    pub k_series: Vec<(u64, f64)>,
    pub diam_series: Vec<(u64, f64)>,
    pub sigma1: Exponent,
    pub mu: f64,
    pub mu_source: MuSource,
    #[serde(rename = "W")]
    pub w: Exponent,
    pub predicted_sync: bool,
    pub indeterminate: bool,
    pub observed_sync: bool,
    /// `K` averaged over the second half of the run.
    pub post_transient_k: f64,
}

impl SyncReport {
    pub fn new(sim: &Simulation, sigma1: Exponent, mu: f64, mu_source: MuSource) -> Self {
        let c = criterion(sigma1, mu);
        SyncReport {
            k_series: sim.records.iter().map(|r| (r.t, r.k)).collect(),
            diam_series: sim.records.iter().map(|r| (r.t, r.diam)).collect(),
            sigma1,
            mu,
            mu_source,
            w: c.w,
            predicted_sync: c.predicted_sync,
            indeterminate: c.indeterminate,
            observed_sync: sim.observed_sync(),
            post_transient_k: sim.post_transient_k(),
        }
    }

    /// CSV with `# key=value` header lines followed by `t,K,diam` rows.
    pub fn to_csv(&self, meta: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# sigma1={:e}", self.sigma1.to_sentinel());
        let _ = writeln!(out, "# mu={:e}", self.mu);
        let _ = writeln!(out, "# W={:e}", self.w.to_sentinel());
        out.push_str("t,K,diam\n");
        for ((t, k), (_, d)) in self.k_series.iter().zip(&self.diam_series) {
            let _ = writeln!(out, "{t},{k:e},{d:e}");
        }
        out
    }
}
