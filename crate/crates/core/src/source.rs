//! Seeded producers of stochastic matrix sequences `G(0), G(1), ...` and
//! their window products.
//!
//! Every variant implements [`CouplingSource`]. Variants are registered by
//! name in a [`SourceRegistry`] and built from JSON specs such as
//! `{"variant": "finite_set", "matrices": [...], "weights": [...], "seed": 7}`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, StochasticMatrix};
use crate::topology::{BlinkingParams, BlurringParams};

/// Window products renormalize their rows after this many multiplications.
pub const RENORMALIZE_EVERY: u64 = 64;

/// Deterministic generator for stream `stream` of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A deterministic sequence of stochastic matrices of a fixed dimension.
///
/// `at` takes `&mut self` because driven sources advance internal state;
/// calling it twice with the same `t` returns the same matrix.
pub trait CouplingSource: Send {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn at(&mut self, t: u64) -> Result<StochasticMatrix>;

    /// An independent copy in the same state, for workers that need their
    /// own source.
    fn box_clone(&self) -> Box<dyn CouplingSource>;
}

impl Clone for Box<dyn CouplingSource> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone)]
pub struct Static {
    g: StochasticMatrix,
}

impl Static {
    pub fn new(g: StochasticMatrix) -> Self {
        Static { g }
    }
}

impl CouplingSource for Static {
    fn name(&self) -> &str {
        "static"
    }

    fn dim(&self) -> usize {
        self.g.dim()
    }

    fn at(&mut self, _t: u64) -> Result<StochasticMatrix> {
        Ok(self.g.clone())
    }

    fn box_clone(&self) -> Box<dyn CouplingSource> {
        Box::new(self.clone())
    }
}

/// `G(t) = list[t mod len]`.
#[derive(Debug, Clone)]
pub struct Periodic {
    list: Arc<[StochasticMatrix]>,
}

impl Periodic {
    pub fn new(list: Vec<StochasticMatrix>) -> Result<Self> {
        check_same_dim(&list)?;
        Ok(Periodic { list: list.into() })
    }
}

impl CouplingSource for Periodic {
    fn name(&self) -> &str {
        "periodic"
    }

    fn dim(&self) -> usize {
        self.list[0].dim()
    }

    fn at(&mut self, t: u64) -> Result<StochasticMatrix> {
        Ok(self.list[(t % self.list.len() as u64) as usize].clone())
    }

    fn box_clone(&self) -> Box<dyn CouplingSource> {
        Box::new(self.clone())
    }
}

fn check_same_dim(list: &[StochasticMatrix]) -> Result<usize> {
    let m = list.first().ok_or(Error::EmptyList)?.dim();
    for g in list {
        if g.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: g.dim(),
            });
        }
    }
    Ok(m)
}

/// I.i.d. draws from a finite set. The index at time `t` comes from the
/// ChaCha keystream of `seed` at block position `t`, so `at` is O(1) in `t`.
#[derive(Debug, Clone)]
pub struct FiniteSetIid {
    set: Arc<[StochasticMatrix]>,
    cumulative: Vec<f64>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl FiniteSetIid {
    /// `weights` are normalized; `None` means uniform.
    pub fn new(set: Vec<StochasticMatrix>, weights: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        check_same_dim(&set)?;
        let weights = weights.unwrap_or_else(|| vec![1.0; set.len()]);
        if weights.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must not all be zero"));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(FiniteSetIid {
            set: set.into(),
            cumulative,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index drawn at time `t`.
    pub fn index_at(&mut self, t: u64) -> usize {
        // one 64-byte ChaCha block (16 words) per time step
        self.rng.set_word_pos(u128::from(t) * 16);
        let u: f64 = self.rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.set.len() - 1)
    }
}

impl CouplingSource for FiniteSetIid {
    fn name(&self) -> &str {
        "finite_set"
    }

    fn dim(&self) -> usize {
        self.set[0].dim()
    }

    fn at(&mut self, t: u64) -> Result<StochasticMatrix> {
        let k = self.index_at(t);
        Ok(self.set[k].clone())
    }

    fn box_clone(&self) -> Box<dyn CouplingSource> {
        Box::new(self.clone())
    }
}

/// A sequential random process emitting one coupling matrix per step.
pub trait Process: Clone + Send + 'static {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Emits the matrix for the current time and advances by one step.
    fn step(&mut self) -> StochasticMatrix;
}

/// Adapts a sequential [`Process`] to random access.
///
/// Recent matrices are cached; the process state is checkpointed every
/// `checkpoint_every` steps so earlier times are recomputed by replay. With
/// rewinding disabled, only the cache is available and older requests fail
/// with [`Error::ProcessExhausted`].
#[derive(Clone)]
pub struct Driven<P: Process> {
    current: P,
    next_t: u64,
    cache: VecDeque<StochasticMatrix>,
    cache_start: u64,
    cache_capacity: usize,
    checkpoints: Vec<P>,
    checkpoint_every: u64,
    rewind: bool,
}

impl<P: Process> Driven<P> {
    pub fn new(process: P) -> Self {
        Driven {
            checkpoints: vec![process.clone()],
            current: process,
            next_t: 0,
            cache: VecDeque::new(),
            cache_start: 0,
            cache_capacity: 256,
            checkpoint_every: 256,
            rewind: true,
        }
    }

    /// Disables replay: only the cached window of recent matrices can be
    /// revisited.
    pub fn without_rewind(mut self) -> Self {
        self.rewind = false;
        self.checkpoints.clear();
        self
    }

    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache_capacity = capacity.max(1);
        self
    }

    pub fn process(&self) -> &P {
        &self.current
    }

    fn advance(&mut self) {
        if self.rewind && self.next_t.is_multiple_of(self.checkpoint_every) {
            let k = (self.next_t / self.checkpoint_every) as usize;
            if k == self.checkpoints.len() {
                self.checkpoints.push(self.current.clone());
            }
        }
        let g = self.current.step();
        self.next_t += 1;
        self.cache.push_back(g);
        while self.cache.len() > self.cache_capacity {
            self.cache.pop_front();
            self.cache_start += 1;
        }
    }

    fn rewind_to(&mut self, t: u64) -> Result<()> {
        if !self.rewind {
            return Err(Error::ProcessExhausted {
                requested: t,
                oldest: self.cache_start,
            });
        }
        let k = (t / self.checkpoint_every) as usize;
        self.current = self.checkpoints[k].clone();
        self.next_t = k as u64 * self.checkpoint_every;
        self.cache.clear();
        self.cache_start = self.next_t;
        Ok(())
    }
}

impl<P: Process> CouplingSource for Driven<P> {
    fn name(&self) -> &str {
        self.current.name()
    }

    fn dim(&self) -> usize {
        self.current.dim()
    }

    fn at(&mut self, t: u64) -> Result<StochasticMatrix> {
        if t < self.cache_start {
            self.rewind_to(t)?;
        }
        while self.next_t <= t {
            self.advance();
        }
        Ok(self.cache[(t - self.cache_start) as usize].clone())
    }

    fn box_clone(&self) -> Box<dyn CouplingSource> {
        Box::new(self.clone())
    }
}

/// The product `G(t0 + t - 1) ... G(t0 + 1) G(t0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowProduct {
    pub t0: u64,
    pub t: u64,
    pub product: Matrix,
}

/// Left product over `[t0, t0 + t)`; the identity for `t = 0`. Rows are
/// renormalized to unit sum every [`RENORMALIZE_EVERY`] multiplications.
pub fn window_product(source: &mut dyn CouplingSource, t0: u64, t: u64) -> Result<WindowProduct> {
    let mut product = Matrix::identity(source.dim());
    for k in 0..t {
        let g = source.at(t0 + k)?;
        product = g.mul_unchecked(&product);
        if (k + 1) % RENORMALIZE_EVERY == 0 {
            renormalize_rows(&mut product);
        }
    }
    Ok(WindowProduct { t0, t, product })
}

pub(crate) fn renormalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
}

type Builder = dyn Fn(&Value, u64) -> Result<Box<dyn CouplingSource>> + Send + Sync;

/// Name-keyed constructors for sequence sources.
///
/// A builder receives the JSON spec and a fallback seed used when the spec
/// does not carry its own `seed`.
#[derive(Clone)]
pub struct SourceRegistry {
    builders: BTreeMap<String, Arc<Builder>>,
}

impl Default for SourceRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SourceRegistry {
    pub fn empty() -> Self {
        SourceRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// `static`, `periodic`, `finite_set`, `blinking` and `blurring`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("static", |v, _| {
            let p: StaticSpec = params(v)?;
            Ok(Box::new(Static::new(p.matrix)))
        });
        r.register("periodic", |v, _| {
            let p: ListSpec = params(v)?;
            Ok(Box::new(Periodic::new(p.matrices)?))
        });
        r.register("finite_set", |v, seed| {
            let p: FiniteSetSpec = params(v)?;
            Ok(Box::new(FiniteSetIid::new(p.matrices, p.weights, p.seed.unwrap_or(seed))?))
        });
        r.register("blinking", |v, seed| {
            let p: BlinkingParams = params(v)?;
            Ok(Box::new(Driven::new(p.build(seed)?)))
        });
        r.register("blurring", |v, seed| {
            let p: BlurringParams = params(v)?;
            Ok(Box::new(Driven::new(p.build(seed)?)))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(&Value, u64) -> Result<Box<dyn CouplingSource>> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    /// Builds the source named by the spec's `variant` field.
    pub fn build(&self, spec: &Value, seed: u64) -> Result<Box<dyn CouplingSource>> {
        let name = spec
            .get("variant")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("source spec needs a string field `variant`".into()))?;
        let builder = self.builders.get(name).ok_or_else(|| Error::UnknownVariant {
            kind: "source",
            name: name.to_string(),
        })?;
        builder(spec, seed)
    }
}

/// Deserializes a variant's parameters, ignoring the `variant` tag.
pub(crate) fn params<T: DeserializeOwned>(v: &Value) -> Result<T> {
    let mut v = v.clone();
    if let Value::Object(map) = &mut v {
        map.remove("variant");
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StaticSpec {
    matrix: StochasticMatrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ListSpec {
    matrices: Vec<StochasticMatrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FiniteSetSpec {
    matrices: Vec<StochasticMatrix>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    seed: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::make_stochastic;
    use serde_json::json;

    fn s(rows: &[&[f64]]) -> StochasticMatrix {
        make_stochastic(&Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn a() -> StochasticMatrix {
        s(&[&[0.9, 0.1], &[0.0, 1.0]])
    }

    fn b() -> StochasticMatrix {
        s(&[&[1.0, 0.0], &[0.3, 0.7]])
    }

    #[test]
    fn static_and_periodic_indexing() {
        let mut st = Static::new(a());
        assert_eq!(st.at(12345).unwrap(), a());
        let mut per = Periodic::new(vec![a(), b()]).unwrap();
        assert_eq!(per.at(3).unwrap(), b());
        assert_eq!(per.at(4).unwrap(), a());
        assert_eq!(Periodic::new(vec![]).unwrap_err(), Error::EmptyList);
    }

    #[test]
    fn finite_set_is_random_access() {
        let mut src = FiniteSetIid::new(vec![a(), b()], None, 9).unwrap();
        let forward: Vec<usize> = (0..200).map(|t| src.index_at(t)).collect();
        let backward: Vec<usize> = (0..200).rev().map(|t| src.index_at(t)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        assert!(forward.contains(&0) && forward.contains(&1));
        assert_eq!(src.at(77).unwrap(), src.at(77).unwrap());

        let mut other = FiniteSetIid::new(vec![a(), b()], None, 10).unwrap();
        assert!((0..200).any(|t| other.index_at(t) != forward[t as usize]));
    }

    #[test]
    fn finite_set_weights() {
        let mut only_b = FiniteSetIid::new(vec![a(), b()], Some(vec![0.0, 2.0]), 1).unwrap();
        assert!((0..100).all(|t| only_b.index_at(t) == 1));
        let mut src = FiniteSetIid::new(vec![a(), b()], Some(vec![3.0, 1.0]), 4).unwrap();
        let n = 20_000;
        let zeros = (0..n).filter(|&t| src.index_at(t) == 0).count() as f64 / n as f64;
        assert!((zeros - 0.75).abs() < 0.02, "{zeros}");
        assert!(FiniteSetIid::new(vec![a()], Some(vec![1.0, 1.0]), 0).is_err());
        assert!(FiniteSetIid::new(vec![a()], Some(vec![0.0]), 0).is_err());
    }

    #[test]
    fn window_product_order() {
        let mut per = Periodic::new(vec![a(), b()]).unwrap();
        let w = window_product(&mut per, 0, 2).unwrap();
        assert_eq!(w.product, b().matmul(&a()).unwrap());
        assert_ne!(w.product, a().matmul(&b()).unwrap());
        let id = window_product(&mut per, 5, 0).unwrap();
        assert_eq!(id.product, Matrix::identity(2));
        let mut st = Static::new(a());
        let sq = window_product(&mut st, 3, 2).unwrap();
        assert_eq!(sq.product, a().matmul(&a()).unwrap());
    }

    #[derive(Clone)]
    struct Counter {
        t: u64,
    }

    impl Process for Counter {
        fn name(&self) -> &'static str {
            "counter"
        }

        fn dim(&self) -> usize {
            2
        }

        fn step(&mut self) -> StochasticMatrix {
            let x = 1.0 / (self.t as f64 + 2.0);
            self.t += 1;
            s(&[&[1.0 - x, x], &[0.0, 1.0]])
        }
    }

    #[test]
    fn driven_rewinds_by_replay() {
        let mut d = Driven::new(Counter { t: 0 }).with_cache_capacity(8);
        let late = d.at(1000).unwrap();
        let early = d.at(3).unwrap();
        assert_eq!(early, Counter { t: 3 }.step());
        assert_eq!(d.at(1000).unwrap(), late);
        assert_eq!(late, Counter { t: 1000 }.step());
    }

    #[test]
    fn driven_without_rewind_is_exhausted() {
        let mut d = Driven::new(Counter { t: 0 }).with_cache_capacity(4).without_rewind();
        d.at(10).unwrap();
        assert!(d.at(7).is_ok());
        assert_eq!(
            d.at(2),
            Err(Error::ProcessExhausted {
                requested: 2,
                oldest: 7
            })
        );
    }

    #[test]
    fn registry_builds_by_name() {
        let reg = SourceRegistry::with_builtins();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["blinking", "blurring", "finite_set", "periodic", "static"]);

        let spec = json!({
            "variant": "periodic",
            "matrices": [
                {"rows": 2, "cols": 2, "data": [0.9, 0.1, 0.0, 1.0]},
                {"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.3, 0.7]}
            ]
        });
        let mut src = reg.build(&spec, 0).unwrap();
        assert_eq!(src.name(), "periodic");
        assert_eq!(src.at(1).unwrap(), b());

        let unknown = reg.build(&json!({"variant": "wobbly"}), 0);
        assert!(matches!(unknown, Err(Error::UnknownVariant { .. })));
        assert!(matches!(reg.build(&json!({}), 0), Err(Error::Config(_))));
        let bad = json!({"variant": "static", "matrix": {"rows": 1, "cols": 1, "data": [0.5]}});
        assert!(matches!(reg.build(&bad, 0), Err(Error::Config(_))));
        let extra = json!({"variant": "static", "matrix": {"rows": 1, "cols": 1, "data": [1.0]}, "x": 1});
        assert!(matches!(reg.build(&extra, 0), Err(Error::Config(_))));
    }

    #[test]
    fn registry_accepts_custom_variants() {
        let mut reg = SourceRegistry::empty();
        reg.register("identity", |v, _| {
            let m = v["m"].as_u64().unwrap_or(2) as usize;
            Ok(Box::new(Static::new(StochasticMatrix::identity(m))))
        });
        let mut src = reg.build(&json!({"variant": "identity", "m": 4}), 0).unwrap();
        assert_eq!(src.at(0).unwrap(), StochasticMatrix::identity(4));
    }

    #[test]
    fn finite_set_seed_falls_back() {
        let reg = SourceRegistry::with_builtins();
        let spec = json!({
            "variant": "finite_set",
            "matrices": [
                {"rows": 2, "cols": 2, "data": [0.9, 0.1, 0.0, 1.0]},
                {"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.3, 0.7]}
            ]
        });
        let mut x = reg.build(&spec, 5).unwrap();
        let mut y = FiniteSetIid::new(vec![a(), b()], None, 5).unwrap();
        for t in 0..50 {
            assert_eq!(x.at(t).unwrap(), y.at(t).unwrap());
        }
    }
}
