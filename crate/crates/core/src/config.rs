//! Experiment configuration and the runners behind the command-line tool.
//!
//! A config names a source and a node map by their registry variants and
//! carries estimator and simulation parameters. The top-level `seed`
//! determines every random choice.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cml::{criterion, simulate, MapRegistry, MuSource, ScalarMap, Simulation, SyncReport};
use crate::error::{Error, Result};
use crate::graph::window_has_spanning_tree;
use crate::hajnal::is_scrambling;
use crate::linalg::{BasisKind, NormKind, ProjectionBasis, StochasticMatrix};
use crate::source::{seeded_rng, window_product, CouplingSource, SourceRegistry};
use crate::spectral::{
    estimate_hajnal_diameter, estimate_scalar_lyapunov, estimate_sigma1, DiamEstimate, Exponent,
    LyapunovEstimate, T0Sampling,
};

const X0_STREAM: u64 = 5;
const MU_STREAM: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub horizon: u64,
    pub t0: T0Sampling,
    pub renorm_every: u64,
    pub n_vectors: usize,
    pub basis: BasisKind,
    pub norm: NormKind,
    /// Lyapunov exponent of the node map; estimated along an orbit when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub mu_burn_in: u64,
    pub mu_horizon: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            horizon: 2000,
            t0: T0Sampling::default(),
            renorm_every: 8,
            n_vectors: 8,
            basis: BasisKind::Difference,
            norm: NormKind::Inf,
            mu: None,
            mu_burn_in: 1000,
            mu_horizon: 100_000,
        }
    }
}

/// Initial state of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Policy {
    /// Independent uniform components on `(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// `s0 + uniform(-eps, eps)` per component.
    NearDiagonal { s0: f64, eps: f64 },
    Diagonal { s0: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for X0Policy {
    fn default() -> Self {
        X0Policy::Uniform { lo: 0.0, hi: 1.0 }
    }
}

impl X0Policy {
    pub fn sample(&self, m: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = seeded_rng(seed, X0_STREAM);
        match self {
            X0Policy::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::Config(format!("x0: need lo < hi, got {lo} and {hi}")));
                }
                Ok((0..m).map(|_| rng.random_range(*lo..*hi)).collect())
            }
            X0Policy::NearDiagonal { s0, eps } => {
                if !(*eps > 0.0) {
                    return Err(Error::Config(format!("x0: eps must be > 0, got {eps}")));
                }
                Ok((0..m).map(|_| s0 + rng.random_range(-eps..*eps)).collect())
            }
            X0Policy::Diagonal { s0 } => Ok(vec![*s0; m]),
            X0Policy::Explicit { values } => {
                if values.len() != m {
                    return Err(Error::Config(format!(
                        "x0: {} values given for m={m}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub steps: u64,
    pub record_every: u64,
    pub x0: X0Policy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            steps: 1000,
            record_every: 1,
            x0: X0Policy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Source spec, e.g. `{"variant": "blinking", "m": 100, ...}`.
    pub source: Value,
    #[serde(default = "default_map")]
    pub map: Value,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_map() -> Value {
    json!({"variant": "logistic", "alpha": 3.9})
}

impl ExperimentConfig {
    pub fn new(source: Value) -> Self {
        ExperimentConfig {
            source,
            map: default_map(),
            estimator: EstimatorConfig::default(),
            simulation: SimulationConfig::default(),
            seed: 0,
            output: None,
        }
    }

    /// Parses JSON; errors carry the line and column of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        // going through Value sorts every object's keys
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    /// Replaces the seed everywhere, including a seed inside the source spec.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(obj) = self.source.as_object_mut() {
            if obj.contains_key("seed") {
                obj.insert("seed".into(), json!(seed));
            }
        }
        self
    }

    /// Sets a numeric parameter by name. Source and map parameters are
    /// looked up first, then `seed`, `steps`, `horizon` and `mu`.
    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        let number = if value.fract() == 0.0 && value.abs() < 9.0e15 && !is_float_param(name) {
            json!(value as i64)
        } else {
            json!(value)
        };
        let mut found = false;
        for spec in [&mut self.source, &mut self.map] {
            if let Some(obj) = spec.as_object_mut() {
                if name != "variant" && obj.contains_key(name) {
                    obj.insert(name.to_string(), number);
                    found = true;
                    break;
                }
            }
        }
        if found {
            return Ok(self);
        }
        let as_u64 = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as u64)
            } else {
                Err(Error::Config(format!("{name} must be a non-negative integer, got {value}")))
            }
        };
        match name {
            "seed" => {
                let s = as_u64()?;
                Ok(self.with_seed(s))
            }
            "steps" => {
                self.simulation.steps = as_u64()?;
                Ok(self)
            }
            "horizon" => {
                self.estimator.horizon = as_u64()?;
                Ok(self)
            }
            "mu" => {
                self.estimator.mu = Some(value);
                Ok(self)
            }
            _ => Err(Error::UnknownParameter(name.to_string())),
        }
    }
}

fn is_float_param(name: &str) -> bool {
    matches!(name, "p" | "r" | "alpha" | "a" | "mu")
}

/// A config resolved against the registries.
pub struct Experiment {
    pub config: ExperimentConfig,
    source: Box<dyn CouplingSource>,
    map: Arc<dyn ScalarMap>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        Self::with_registries(config, &SourceRegistry::with_builtins(), &MapRegistry::with_builtins())
    }

    pub fn with_registries(
        config: ExperimentConfig,
        sources: &SourceRegistry,
        maps: &MapRegistry,
    ) -> Result<Self> {
        let source = sources
            .build(&config.source, config.seed)
            .map_err(|e| Error::Config(format!("source: {e}")))?;
        let map = maps
            .build(&config.map)
            .map_err(|e| Error::Config(format!("map: {e}")))?;
        let e = &config.estimator;
        if e.horizon == 0 || e.renorm_every == 0 || e.horizon < e.renorm_every {
            return Err(Error::Config(format!(
                "estimator: need horizon >= renorm_every >= 1 (horizon {}, renorm_every {})",
                e.horizon, e.renorm_every
            )));
        }
        if e.n_vectors == 0 || e.t0.count == 0 {
            return Err(Error::Config("estimator: n_vectors and t0.count must be >= 1".into()));
        }
        if config.simulation.steps == 0 || config.simulation.record_every == 0 {
            return Err(Error::Config(
                "simulation: steps and record_every must be >= 1".into(),
            ));
        }
        Ok(Experiment {
            config,
            source,
            map,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// A fresh copy of the configured source.
    pub fn source(&self) -> Box<dyn CouplingSource> {
        self.source.box_clone()
    }

    pub fn map(&self) -> &dyn ScalarMap {
        self.map.as_ref()
    }

    pub fn basis(&self) -> Result<ProjectionBasis> {
        ProjectionBasis::new(self.dim(), self.config.estimator.basis)
    }

    /// Supplied `mu`, or the average of `log |f'|` along a seeded orbit.
    pub fn mu(&self) -> Result<(f64, MuSource)> {
        let e = &self.config.estimator;
        match e.mu {
            Some(mu) => Ok((mu, MuSource::Supplied)),
            None => {
                let s0 = seeded_rng(self.config.seed, MU_STREAM).random_range(0.0..1.0);
                let mu = estimate_scalar_lyapunov(self.map(), s0, e.mu_burn_in, e.mu_horizon)?;
                Ok((mu, MuSource::Estimated))
            }
        }
    }

    pub fn sigma1(&self) -> Result<LyapunovEstimate> {
        let e = &self.config.estimator;
        estimate_sigma1(
            self.source().as_mut(),
            &self.basis()?,
            e.horizon,
            e.renorm_every,
            e.n_vectors,
            self.config.seed,
        )
    }

    pub fn diam_estimate(&self) -> Result<DiamEstimate> {
        let e = &self.config.estimator;
        estimate_hajnal_diameter(
            self.source().as_mut(),
            e.horizon,
            &e.t0.samples(e.horizon),
            e.norm,
        )
    }

    pub fn initial_state(&self) -> Result<Vec<f64>> {
        self.config.simulation.x0.sample(self.dim(), self.config.seed)
    }

    pub fn simulate(&self) -> Result<Simulation> {
        let s = &self.config.simulation;
        simulate(
            self.source().as_mut(),
            self.map(),
            &self.initial_state()?,
            s.steps,
            s.record_every,
        )
    }

    /// Simulation plus `sigma1`, `mu` and the resulting verdicts.
    pub fn run_sync(&self) -> Result<SyncRun> {
        let sigma1 = self.sigma1()?;
        let (mu, mu_source) = self.mu()?;
        let simulation = self.simulate()?;
        let report = SyncReport::new(&simulation, sigma1.value, mu, mu_source);
        Ok(SyncRun {
            report,
            simulation,
            sigma1,
        })
    }

    /// Smallest window length `T <= t_max` for which every sampled window
    /// `[t0, t0 + T)` has a spanning-tree union.
    pub fn check_windows(&self, t_max: u64) -> Result<WindowCheck> {
        if t_max == 0 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        let e = &self.config.estimator;
        let t0s = e.t0.samples(e.horizon);
        let mut src = self.source();
        let mut smallest = None;
        for t_len in 1..=t_max {
            let mut all = true;
            for &t0 in &t0s {
                if !window_has_spanning_tree(src.as_mut(), t0, t_len)? {
                    all = false;
                    break;
                }
            }
            if all {
                smallest = Some(t_len);
                break;
            }
        }
        let t_len = smallest.unwrap_or(t_max);
        let mut windows = Vec::with_capacity(t0s.len());
        for &t0 in &t0s {
            let product = window_product(src.as_mut(), t0, t_len)?.product;
            windows.push(WindowStatus {
                t0,
                len: t_len,
                spanning_tree: window_has_spanning_tree(src.as_mut(), t0, t_len)?,
                scrambling: is_scrambling(&StochasticMatrix::with_tolerance(
                    product,
                    1e-9 * t_len as f64,
                )?),
            });
        }
        Ok(WindowCheck {
            smallest_t: smallest,
            t_max,
            windows,
        })
    }
}

pub struct SyncRun {
    pub report: SyncReport,
    pub simulation: Simulation,
    pub sigma1: LyapunovEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStatus {
    pub t0: u64,
    pub len: u64,
    pub spanning_tree: bool,
    /// Whether the window product is scrambling.
    pub scrambling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub smallest_t: Option<u64>,
    pub t_max: u64,
    pub windows: Vec<WindowStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Post-transient time-averaged `K`.
    #[serde(rename = "K")]
    pub k: f64,
    pub sigma1: Exponent,
    pub mu: f64,
    #[serde(rename = "W")]
    pub w: Exponent,
    pub predicted_sync: bool,
    pub indeterminate: bool,
    pub observed_sync: bool,
}

impl SweepRow {
    pub fn from_run(value: f64, run: &SyncRun) -> Self {
        let r = &run.report;
        let c = criterion(r.sigma1, r.mu);
        SweepRow {
            value,
            k: r.post_transient_k,
            sigma1: r.sigma1,
            mu: r.mu,
            w: c.w,
            predicted_sync: c.predicted_sync,
            indeterminate: c.indeterminate,
            observed_sync: r.observed_sync,
        }
    }
}

/// Runs [`Experiment::run_sync`] for each value of `param`, in parallel;
/// rows come back in input order.
pub fn sweep(config: &ExperimentConfig, param: &str, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| config.clone().with_param(param, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(c, &v)| Ok(SweepRow::from_run(v, &Experiment::new(c)?.run_sync()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blinking() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(json!({
            "variant": "blinking", "m": 20, "avg_degree": 4, "p": 0.01, "t_rec": 3
        }));
        c.estimator.horizon = 200;
        c.simulation.steps = 200;
        c.seed = 4;
        c
    }

    #[test]
    fn json_round_trip() {
        let mut c = blinking();
        c.estimator.mu = Some(0.5);
        c.simulation.x0 = X0Policy::NearDiagonal { s0: 0.3, eps: 1e-3 };
        c.output = Some("out".into());
        let text = c.to_json();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let minimal = ExperimentConfig::from_json(r#"{"source": {"variant": "static"}}"#).unwrap();
        assert_eq!(minimal.map, default_map());
        assert_eq!(minimal.estimator, EstimatorConfig::default());
    }

    #[test]
    fn json_errors_point_at_the_problem() {
        let err = ExperimentConfig::from_json("{\n \"source\": {},\n \"sead\": 3\n}").unwrap_err();
        let Error::Config(msg) = err else { panic!() };
        assert!(msg.contains("sead") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn params_by_name() {
        let c = blinking().with_param("p", 0.5).unwrap();
        assert_eq!(c.source["p"], json!(0.5));
        let c = c.with_param("t_rec", 5.0).unwrap();
        assert_eq!(c.source["t_rec"], json!(5));
        let c = c.with_param("alpha", 3.7).unwrap();
        assert_eq!(c.map["alpha"], json!(3.7));
        let c = c.with_param("steps", 10.0).unwrap();
        assert_eq!(c.simulation.steps, 10);
        assert_eq!(
            blinking().with_param("q", 1.0).unwrap_err(),
            Error::UnknownParameter("q".into())
        );
        assert!(blinking().with_param("steps", 1.5).is_err());
    }

    #[test]
    fn seed_override_reaches_the_source() {
        let mut c = blinking();
        c.source["seed"] = json!(1);
        let c = c.with_seed(9);
        assert_eq!((c.seed, &c.source["seed"]), (9, &json!(9)));
    }

    #[test]
    fn same_seed_same_run() {
        let a = Experiment::new(blinking()).unwrap().run_sync().unwrap();
        let b = Experiment::new(blinking()).unwrap().run_sync().unwrap();
        assert_eq!(a.report, b.report);
        let c = Experiment::new(blinking().with_seed(5)).unwrap().run_sync().unwrap();
        assert_ne!(a.report, c.report);
    }

    #[test]
    fn sweep_matches_single_runs() {
        let c = blinking();
        let rows = sweep(&c, "p", &[0.5, 0.001]).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), [0.5, 0.001]);
        let single = Experiment::new(c.with_param("p", 0.001).unwrap()).unwrap().run_sync().unwrap();
        assert_eq!(rows[1], SweepRow::from_run(0.001, &single));
        assert!(sweep(&blinking(), "p", &[]).is_err());
        assert!(matches!(sweep(&blinking(), "zeta", &[1.0]), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn window_check() {
        let mut c = ExperimentConfig::new(json!({
            "variant": "periodic",
            "matrices": [
                {"rows": 3, "cols": 3, "data": [1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]},
                {"rows": 3, "cols": 3, "data": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.5, 0.5]}
            ]
        }));
        c.estimator.horizon = 16;
        let check = Experiment::new(c).unwrap().check_windows(4).unwrap();
        assert_eq!(check.smallest_t, Some(2));
        assert!(check.windows.iter().all(|w| w.spanning_tree && w.len == 2));

        let id = ExperimentConfig::new(json!({
            "variant": "static",
            "matrix": {"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.0, 1.0]}
        }));
        let check = Experiment::new(id).unwrap().check_windows(5).unwrap();
        assert_eq!(check.smallest_t, None);
        assert!(check.windows.iter().all(|w| !w.spanning_tree && !w.scrambling));
    }
}
