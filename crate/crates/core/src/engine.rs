//! Counterfactual engine: utility draws, per-draw evaluation and aggregation into
//! bounds and event probabilities.
//!
//! Random draws use common random numbers. Draw `d` under seed `s` always consumes
//! the same uniform variates, whatever the parameter value, and each parameter value
//! maps those uniforms through its own inverse CDFs. Results are reduced over a fixed
//! number of contiguous partitions in index order, so a run is bit-reproducible for
//! a given partition count regardless of how many threads execute it.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CpdsError, Result};
use crate::game::{build_linear_entry_game, ActionSpace, Game, LinearEntryGameParams};
use crate::outcome::{evaluate_draw, DrawEvaluation, DrawOutcome, EventSet, OutcomeSpec};
use crate::solution::{Concept, Tribool};

/// Default number of reduction partitions.
pub const DEFAULT_PARTITIONS: usize = 64;

/// A number or the name of a parameter coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Theta(String),
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Value(v)
    }
}

/// Parameter values bound to names.
#[derive(Debug, Clone, Copy)]
pub struct ThetaValues<'a> {
    names: &'a [String],
    values: &'a [f64],
}

impl<'a> ThetaValues<'a> {
    pub fn new(names: &'a [String], values: &'a [f64]) -> Result<Self> {
        if names.len() != values.len() {
            return Err(CpdsError::config(format!(
                "theta has {} values, spec declares {} names",
                values.len(),
                names.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CpdsError::config(format!("theta value {v} is not finite")));
        }
        Ok(Self { names, values })
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    fn get(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
            .ok_or_else(|| CpdsError::config(format!("unknown theta coordinate {name:?}")))
    }
}

impl Param {
    pub fn resolve(&self, theta: &ThetaValues<'_>) -> Result<f64> {
        match self {
            Param::Value(v) => Ok(*v),
            Param::Theta(name) => theta.get(name),
        }
    }

    fn names(&self) -> Option<&str> {
        match self {
            Param::Theta(n) => Some(n),
            Param::Value(_) => None,
        }
    }
}

/// Marginal distribution of one covariate or shock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: Param, sd: Param },
    Point(Param),
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
enum BoundMarginal {
    Normal { mean: f64, sd: f64 },
    Point(f64),
    Empirical(Vec<f64>),
}

impl Marginal {
    fn bind(&self, theta: &ThetaValues<'_>) -> Result<BoundMarginal> {
        Ok(match self {
            Marginal::Normal { mean, sd } => {
                let (mean, sd) = (mean.resolve(theta)?, sd.resolve(theta)?);
                if !(sd >= 0.0) || !sd.is_finite() {
                    return Err(CpdsError::config(format!("normal scale {sd} must be >= 0")));
                }
                if sd == 0.0 {
                    BoundMarginal::Point(mean)
                } else {
                    BoundMarginal::Normal { mean, sd }
                }
            }
            Marginal::Point(v) => BoundMarginal::Point(v.resolve(theta)?),
            Marginal::Empirical(samples) => {
                if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
                    return Err(CpdsError::config("empirical marginal needs finite samples"));
                }
                let mut s = samples.clone();
                s.sort_by(f64::total_cmp);
                BoundMarginal::Empirical(s)
            }
        })
    }

    fn theta_names(&self) -> Vec<&str> {
        match self {
            Marginal::Normal { mean, sd } => [mean, sd].iter().filter_map(|p| p.names()).collect(),
            Marginal::Point(p) => p.names().into_iter().collect(),
            Marginal::Empirical(_) => vec![],
        }
    }
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

impl BoundMarginal {
    fn quantile(&self, u: f64, z: &Normal) -> f64 {
        match self {
            BoundMarginal::Normal { mean, sd } => mean + sd * z.inverse_cdf(u),
            BoundMarginal::Point(v) => *v,
            BoundMarginal::Empirical(s) => {
                let k = ((u * s.len() as f64) as usize).min(s.len() - 1);
                s[k]
            }
        }
    }

    fn is_degenerate(&self) -> bool {
        matches!(self, BoundMarginal::Point(_))
            || matches!(self, BoundMarginal::Empirical(s) if s.len() == 1)
    }

    fn mean_var(&self) -> (f64, f64) {
        match self {
            BoundMarginal::Normal { mean, sd } => (*mean, sd * sd),
            BoundMarginal::Point(v) => (*v, 0.0),
            BoundMarginal::Empirical(s) => {
                let n = s.len() as f64;
                let m = s.iter().sum::<f64>() / n;
                (m, s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
            }
        }
    }
}

/// Entry-game utility map whose coefficients may reference parameter coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEntryMap {
    pub alpha: Vec<Param>,
    pub beta: Vec<Vec<Param>>,
    pub delta: Vec<Vec<Param>>,
}

/// A utility tensor whose entries may reference parameter coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorTemplate {
    pub sizes: Vec<usize>,
    pub utility: Vec<Vec<Param>>,
}

impl TensorTemplate {
    pub fn bind(&self, theta: &ThetaValues<'_>) -> Result<Game> {
        let rows = self
            .utility
            .iter()
            .map(|r| {
                r.iter()
                    .map(|p| p.resolve(theta))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Game::new(ActionSpace::new(self.sizes.clone())?, rows)
    }

    pub fn from_game(game: &Game) -> Self {
        Self {
            sizes: game.actions().sizes().to_vec(),
            utility: (0..game.num_players())
                .map(|i| game.utilities(i).iter().map(|&u| Param::Value(u)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMap {
    LinearEntry(LinearEntryMap),
    Tensor(TensorTemplate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub game: TensorTemplate,
    pub weight: Param,
}

/// User-supplied joint sampler of `(x, epsilon)` for dependence structures the
/// built-in independent marginals cannot express.
pub trait JointSampler: Send + Sync {
    /// Uniform variates consumed per draw.
    fn num_uniforms(&self) -> usize;
    /// Maps uniforms in (0, 1) to per-player covariates and shocks.
    fn sample(&self, theta: &[f64], uniforms: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)>;
}

#[derive(Clone)]
pub struct SamplerHook(pub Arc<dyn JointSampler>);

impl std::fmt::Debug for SamplerHook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SamplerHook(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityDistribution {
    /// Finite list of utility tensors and their probabilities.
    DiscreteSupport(Vec<SupportPoint>),
    /// Independent covariates and shocks fed through the entry-game map.
    Parametric {
        x: Vec<Vec<Marginal>>,
        epsilon: Vec<Marginal>,
    },
    /// The utility map has no randomness.
    PointMass,
    #[serde(skip)]
    Custom(SamplerHook),
}

/// Everything needed to define a counterfactual: players, actions, utilities, their
/// distribution, the solution concept and the outcome of interest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualSpec {
    pub players: usize,
    pub actions: Vec<usize>,
    /// Names of the parameter coordinates, in the order values are supplied.
    #[serde(default)]
    pub theta: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_map: Option<UtilityMap>,
    pub distribution: UtilityDistribution,
    pub concept: Concept,
    pub outcome: OutcomeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSet>,
}

/// The model with all parameter slots filled in.
enum BoundModel {
    Support {
        games: Vec<Game>,
        weights: Vec<f64>,
        cumulative: Vec<f64>,
    },
    Entry {
        actions: ActionSpace,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
        x: Vec<Vec<BoundMarginal>>,
        epsilon: Vec<BoundMarginal>,
    },
    Sampled {
        actions: ActionSpace,
        alpha: Vec<f64>,
        beta: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
        sampler: Arc<dyn JointSampler>,
        theta: Vec<f64>,
    },
}

impl CounterfactualSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        ActionSpace::new(self.actions.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let actions = self.action_space()?;
        if self.players != actions.num_players() {
            return Err(CpdsError::config(format!(
                "{} players but {} action sizes",
                self.players,
                self.actions.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.theta {
            if !seen.insert(n) {
                return Err(CpdsError::config(format!("duplicate theta name {n:?}")));
            }
        }
        let known = |n: &str| -> Result<()> {
            if self.theta.iter().any(|t| t == n) {
                Ok(())
            } else {
                Err(CpdsError::config(format!("unknown theta coordinate {n:?}")))
            }
        };
        match (&self.distribution, &self.utility_map) {
            (UtilityDistribution::DiscreteSupport(points), None) => {
                if points.is_empty() {
                    return Err(CpdsError::config("discrete support is empty"));
                }
                for p in points {
                    if p.game.sizes != self.actions {
                        return Err(CpdsError::config(
                            "support game action sizes differ from the spec",
                        ));
                    }
                    for param in p.game.utility.iter().flatten().chain([&p.weight]) {
                        if let Some(n) = param.names() {
                            known(n)?;
                        }
                    }
                }
            }
            (UtilityDistribution::DiscreteSupport(_), Some(_)) => {
                return Err(CpdsError::config(
                    "a discrete support lists its own games; drop utility_map",
                ))
            }
            (UtilityDistribution::PointMass, Some(UtilityMap::Tensor(t))) => {
                if t.sizes != self.actions {
                    return Err(CpdsError::config("tensor sizes differ from the spec"));
                }
                for param in t.utility.iter().flatten() {
                    if let Some(n) = param.names() {
                        known(n)?;
                    }
                }
            }
            (UtilityDistribution::Parametric { x, epsilon }, Some(UtilityMap::LinearEntry(m))) => {
                self.check_entry_map(m, &known)?;
                if x.len() != self.players || epsilon.len() != self.players {
                    return Err(CpdsError::config("x and epsilon need one entry per player"));
                }
                for (i, xi) in x.iter().enumerate() {
                    if xi.len() != m.beta[i].len() {
                        return Err(CpdsError::config(format!(
                            "player {i}: {} covariates for {} slopes",
                            xi.len(),
                            m.beta[i].len()
                        )));
                    }
                }
                for marg in x.iter().flatten().chain(epsilon) {
                    for n in marg.theta_names() {
                        known(n)?;
                    }
                }
            }
            (UtilityDistribution::Custom(_), Some(UtilityMap::LinearEntry(m))) => {
                self.check_entry_map(m, &known)?;
            }
            _ => {
                return Err(CpdsError::config(
                    "distribution and utility_map do not fit together: use discrete_support \
                     alone, point_mass with a tensor, or parametric/custom with linear_entry",
                ))
            }
        }
        if let Some(ev) = &self.events {
            ev.validate()?;
            if let EventSet::SolutionRegions(u) = ev {
                u.check_width(actions.num_profiles())?;
            }
        }
        Ok(())
    }

    fn check_entry_map(
        &self,
        m: &LinearEntryMap,
        known: &dyn Fn(&str) -> Result<()>,
    ) -> Result<()> {
        if !self.actions.iter().all(|&s| s == 2) {
            return Err(CpdsError::Unsupported(
                "linear entry utilities need binary actions".into(),
            ));
        }
        let k = self.players;
        if m.alpha.len() != k || m.beta.len() != k || m.delta.len() != k {
            return Err(CpdsError::config(
                "alpha, beta, delta need one row per player",
            ));
        }
        if m.delta.iter().any(|r| r.len() != k) {
            return Err(CpdsError::config(format!("delta must be {k}x{k}")));
        }
        for p in m
            .alpha
            .iter()
            .chain(m.beta.iter().flatten())
            .chain(m.delta.iter().flatten())
        {
            if let Some(n) = p.names() {
                known(n)?;
            }
        }
        Ok(())
    }

    fn bind(&self, theta: &[f64]) -> Result<BoundModel> {
        let tv = ThetaValues::new(&self.theta, theta)?;
        let actions = self.action_space()?;
        let entry_coeffs = |m: &LinearEntryMap| -> Result<_> {
            let alpha = m
                .alpha
                .iter()
                .map(|p| p.resolve(&tv))
                .collect::<Result<Vec<_>>>()?;
            let beta = m
                .beta
                .iter()
                .map(|r| r.iter().map(|p| p.resolve(&tv)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let delta = m
                .delta
                .iter()
                .map(|r| r.iter().map(|p| p.resolve(&tv)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            for (i, r) in delta.iter().enumerate() {
                if r[i] != 0.0 {
                    return Err(CpdsError::config(format!("delta[{i}][{i}] must be zero")));
                }
            }
            Ok((alpha, beta, delta))
        };
        match (&self.distribution, &self.utility_map) {
            (UtilityDistribution::DiscreteSupport(points), _) => {
                let mut games = Vec::with_capacity(points.len());
                let mut weights = Vec::with_capacity(points.len());
                for p in points {
                    games.push(p.game.bind(&tv)?);
                    let w = p.weight.resolve(&tv)?;
                    if !(w >= 0.0) {
                        return Err(CpdsError::config(format!("support weight {w} is negative")));
                    }
                    weights.push(w);
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(CpdsError::config(format!(
                        "support weights sum to {total}, not 1"
                    )));
                }
                let mut acc = 0.0;
                let cumulative = weights
                    .iter()
                    .map(|w| {
                        acc += w;
                        acc
                    })
                    .collect();
                Ok(BoundModel::Support {
                    games,
                    weights,
                    cumulative,
                })
            }
            (UtilityDistribution::PointMass, Some(UtilityMap::Tensor(t))) => {
                Ok(BoundModel::Support {
                    games: vec![t.bind(&tv)?],
                    weights: vec![1.0],
                    cumulative: vec![1.0],
                })
            }
            (UtilityDistribution::Parametric { x, epsilon }, Some(UtilityMap::LinearEntry(m))) => {
                let (alpha, beta, delta) = entry_coeffs(m)?;
                let x = x
                    .iter()
                    .map(|r| r.iter().map(|mg| mg.bind(&tv)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let epsilon = epsilon
                    .iter()
                    .map(|mg| mg.bind(&tv))
                    .collect::<Result<Vec<_>>>()?;
                Ok(BoundModel::Entry {
                    actions,
                    alpha,
                    beta,
                    delta,
                    x,
                    epsilon,
                })
            }
            (UtilityDistribution::Custom(hook), Some(UtilityMap::LinearEntry(m))) => {
                let (alpha, beta, delta) = entry_coeffs(m)?;
                Ok(BoundModel::Sampled {
                    actions,
                    alpha,
                    beta,
                    delta,
                    sampler: hook.0.clone(),
                    theta: theta.to_vec(),
                })
            }
            _ => Err(CpdsError::config(
                "invalid distribution/utility_map pairing",
            )),
        }
    }
}

impl BoundModel {
    fn num_uniforms(&self) -> usize {
        match self {
            BoundModel::Support { .. } => 1,
            BoundModel::Entry { x, epsilon, .. } => {
                x.iter().map(Vec::len).sum::<usize>() + epsilon.len()
            }
            BoundModel::Sampled { sampler, .. } => sampler.num_uniforms(),
        }
    }

    /// Deterministic support, if the model has one.
    fn exact_support(&self) -> Option<Vec<(Game, f64)>> {
        match self {
            BoundModel::Support { games, weights, .. } => {
                Some(games.iter().cloned().zip(weights.iter().copied()).collect())
            }
            BoundModel::Entry {
                actions,
                alpha,
                beta,
                delta,
                x,
                epsilon,
            } => {
                if !x
                    .iter()
                    .flatten()
                    .chain(epsilon)
                    .all(BoundMarginal::is_degenerate)
                {
                    return None;
                }
                let z = standard_normal();
                let params = LinearEntryGameParams {
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                    delta: delta.clone(),
                    x: x.iter()
                        .map(|r| r.iter().map(|m| m.quantile(0.5, &z)).collect())
                        .collect(),
                    epsilon: epsilon.iter().map(|m| m.quantile(0.5, &z)).collect(),
                };
                build_linear_entry_game(actions, &params)
                    .ok()
                    .map(|g| vec![(g, 1.0)])
            }
            BoundModel::Sampled { .. } => None,
        }
    }

    /// Support index for a uniform, by inverse CDF.
    fn support_index(cumulative: &[f64], u: f64) -> usize {
        cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(cumulative.len() - 1)
    }

    fn game_from_uniforms(&self, u: &[f64], z: &Normal) -> Result<Game> {
        let entry = |actions: &ActionSpace,
                     alpha: &[f64],
                     beta: &[Vec<f64>],
                     delta: &[Vec<f64>],
                     x: Vec<Vec<f64>>,
                     epsilon: Vec<f64>| {
            build_linear_entry_game(
                actions,
                &LinearEntryGameParams {
                    alpha: alpha.to_vec(),
                    beta: beta.to_vec(),
                    delta: delta.to_vec(),
                    x,
                    epsilon,
                },
            )
        };
        match self {
            BoundModel::Support {
                games, cumulative, ..
            } => Ok(games[Self::support_index(cumulative, u[0])].clone()),
            BoundModel::Entry {
                actions,
                alpha,
                beta,
                delta,
                x,
                epsilon,
            } => {
                let mut k = 0;
                let xs = x
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|m| {
                                let v = m.quantile(u[k], z);
                                k += 1;
                                v
                            })
                            .collect()
                    })
                    .collect();
                let eps = epsilon
                    .iter()
                    .map(|m| {
                        let v = m.quantile(u[k], z);
                        k += 1;
                        v
                    })
                    .collect();
                entry(actions, alpha, beta, delta, xs, eps)
            }
            BoundModel::Sampled {
                actions,
                alpha,
                beta,
                delta,
                sampler,
                theta,
            } => {
                let (xs, eps) = sampler.sample(theta, u)?;
                entry(actions, alpha, beta, delta, xs, eps)
            }
        }
    }
}

/// Uniform variates strictly inside (0, 1) from one ChaCha stream.
pub struct UniformStream(ChaCha8Rng);

impl UniformStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    pub fn next_uniform(&mut self) -> f64 {
        // 53 random bits, centred in their cell.
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self, z: &Normal) -> f64 {
        z.inverse_cdf(self.next_uniform())
    }
}

/// Fills `out` with the uniforms of draw `index` under `seed`: one stream per draw,
/// so values do not depend on the parameter or on any other draw.
pub fn draw_uniforms(seed: u64, index: u64, out: &mut [f64]) {
    let mut s = UniformStream::new(seed, index);
    for u in out.iter_mut() {
        *u = s.next_uniform();
    }
}

/// The `n` utility draws for `theta`, in draw order.
pub fn draw_utilities<'a>(
    spec: &'a CounterfactualSpec,
    theta: &[f64],
    n: u64,
    seed: u64,
) -> Result<impl Iterator<Item = Result<Game>> + 'a> {
    if n == 0 {
        return Err(CpdsError::config("need at least one draw"));
    }
    let model = spec.bind(theta)?;
    let z = standard_normal();
    let mut buf = vec![0.0; model.num_uniforms()];
    Ok((0..n).map(move |d| {
        draw_uniforms(seed, d, &mut buf);
        model.game_from_uniforms(&buf, &z)
    }))
}

/// Support games and probabilities for exact integration.
pub fn exact_support(spec: &CounterfactualSpec, theta: &[f64]) -> Result<Vec<(Game, f64)>> {
    spec.bind(theta)?.exact_support().ok_or_else(|| {
        CpdsError::config("exact mode needs a discrete support or degenerate distributions")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    #[default]
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// An empty solution set aborts the run.
    #[default]
    Strict,
    /// Empty draws are excluded and counted.
    RecordEmpty,
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub mode: Mode,
    pub empty: EmptyPolicy,
    pub partitions: usize,
    pub lookup: Option<Arc<GridTable>>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            mode: Mode::MonteCarlo,
            empty: EmptyPolicy::Strict,
            partitions: DEFAULT_PARTITIONS,
            lookup: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FieldErrors {
    pub e_sup: f64,
    pub e_inf: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_could: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_must: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_cannot: Option<f64>,
}

/// Integrated bounds and event probabilities for one parameter value.
///
/// When every draw is excluded the expectation fields are NaN (`null` in JSON).
/// Indeterminate must-tests are counted and contribute nothing to `p_must`, so
/// `p_must` is then a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialCpds {
    pub e_sup: f64,
    pub e_inf: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_could: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_must: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_cannot: Option<f64>,
    pub mc_stderr: FieldErrors,
    pub n_draws: u64,
    pub excluded_draws: u64,
    /// Excluded probability mass (exact mode) or fraction of draws (Monte Carlo).
    pub exclusion_rate: f64,
    pub indeterminate_draws: u64,
    pub knife_edge_draws: u64,
    pub mode: Mode,
    pub partitions: usize,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.c);
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Running mean and squared deviations (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Self) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    draws: u64,
    weight: CompensatedSum,
    sup: CompensatedSum,
    inf: CompensatedSum,
    could: CompensatedSum,
    must: CompensatedSum,
    cannot: CompensatedSum,
    sup_moments: Moments,
    inf_moments: Moments,
    excluded: u64,
    excluded_weight: CompensatedSum,
    indeterminate: u64,
    knife_edge: u64,
}

impl Accumulator {
    fn add(&mut self, eval: Option<&DrawEvaluation>, w: f64) {
        self.draws += 1;
        let Some(e) = eval else {
            self.excluded += 1;
            self.excluded_weight.add(w);
            return;
        };
        let o = &e.outcome;
        self.weight.add(w);
        self.sup.add(w * o.hi);
        self.inf.add(w * o.lo);
        self.sup_moments.add(o.hi);
        self.inf_moments.add(o.lo);
        if let Some(c) = o.could {
            if c {
                self.could.add(w);
            } else {
                self.cannot.add(w);
            }
        }
        match o.must {
            Some(Tribool::True) => self.must.add(w),
            Some(Tribool::Indeterminate) => self.indeterminate += 1,
            _ => {}
        }
        if e.diagnostics.knife_edge {
            self.knife_edge += 1;
        }
    }

    fn merge(&mut self, o: &Self) {
        self.draws += o.draws;
        self.weight.merge(&o.weight);
        self.sup.merge(&o.sup);
        self.inf.merge(&o.inf);
        self.could.merge(&o.could);
        self.must.merge(&o.must);
        self.cannot.merge(&o.cannot);
        self.sup_moments.merge(&o.sup_moments);
        self.inf_moments.merge(&o.inf_moments);
        self.excluded += o.excluded;
        self.excluded_weight.merge(&o.excluded_weight);
        self.indeterminate += o.indeterminate;
        self.knife_edge += o.knife_edge;
    }

    fn finish(&self, mode: Mode, partitions: usize, events: bool) -> PartialCpds {
        let total_w = self.weight.value();
        let mean = |s: &CompensatedSum| {
            if total_w > 0.0 {
                s.value() / total_w
            } else {
                f64::NAN
            }
        };
        let included = self.draws - self.excluded;
        let binom = |p: f64| {
            if mode == Mode::Exact || included == 0 {
                0.0
            } else {
                (p * (1.0 - p) / included as f64).max(0.0).sqrt()
            }
        };
        let (p_could, p_must, p_cannot) = if events {
            (
                Some(mean(&self.could)),
                Some(mean(&self.must)),
                Some(mean(&self.cannot)),
            )
        } else {
            (None, None, None)
        };
        let (se_sup, se_inf) = match mode {
            Mode::Exact => (0.0, 0.0),
            Mode::MonteCarlo => (self.sup_moments.stderr(), self.inf_moments.stderr()),
        };
        let exclusion_rate = match mode {
            Mode::Exact => {
                let ex = self.excluded_weight.value();
                ex / (ex + total_w)
            }
            Mode::MonteCarlo => self.excluded as f64 / self.draws.max(1) as f64,
        };
        PartialCpds {
            e_sup: mean(&self.sup),
            e_inf: mean(&self.inf),
            p_could,
            p_must,
            p_cannot,
            mc_stderr: FieldErrors {
                e_sup: se_sup,
                e_inf: se_inf,
                p_could: p_could.map(binom),
                p_must: p_must.map(binom),
                p_cannot: p_cannot.map(binom),
            },
            n_draws: self.draws,
            excluded_draws: self.excluded,
            exclusion_rate,
            indeterminate_draws: self.indeterminate,
            knife_edge_draws: self.knife_edge,
            mode,
            partitions,
        }
    }
}

/// Evaluates one draw; `Ok(None)` marks an empty solution set.
fn evaluate(
    spec: &CounterfactualSpec,
    game: &Game,
    lookup: Option<&GridTable>,
) -> Result<Option<DrawEvaluation>> {
    if let Some(table) = lookup {
        return table.lookup(game);
    }
    match evaluate_draw(game, spec.concept, &spec.outcome, spec.events.as_ref()) {
        Ok(e) => Ok(Some(e)),
        Err(CpdsError::Empty { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn empty_draw_error(spec: &CounterfactualSpec, draw: u64) -> CpdsError {
    CpdsError::Empty {
        context: format!("no {} solution for this utility draw", spec.concept),
        draw: Some(draw),
    }
}

/// Bounds and event probabilities at one parameter value.
pub fn partial_cpds(
    spec: &CounterfactualSpec,
    theta: &[f64],
    n: u64,
    seed: u64,
    opts: &EngineOptions,
) -> Result<PartialCpds> {
    let model = spec.bind(theta)?;
    let lookup = opts.lookup.as_deref();
    let events = spec.events.is_some();
    match opts.mode {
        Mode::Exact => {
            let support = model.exact_support().ok_or_else(|| {
                CpdsError::config("exact mode needs a discrete support or degenerate distributions")
            })?;
            let mut acc = Accumulator::default();
            for (k, (game, w)) in support.iter().enumerate() {
                let e = evaluate(spec, game, lookup)?;
                if e.is_none() && opts.empty == EmptyPolicy::Strict {
                    return Err(empty_draw_error(spec, k as u64));
                }
                acc.add(e.as_ref(), *w);
            }
            Ok(acc.finish(Mode::Exact, 1, events))
        }
        Mode::MonteCarlo => {
            if n == 0 {
                return Err(CpdsError::config("need at least one draw"));
            }
            let partitions = opts.partitions.max(1);
            // A discrete support has finitely many outcomes: evaluate each once.
            let cached: Option<Vec<Option<DrawEvaluation>>> = match &model {
                BoundModel::Support { games, .. } => Some(
                    games
                        .iter()
                        .map(|g| evaluate(spec, g, lookup))
                        .collect::<Result<_>>()?,
                ),
                _ => None,
            };
            let z = standard_normal();
            let run = |p: usize| -> Result<Accumulator> {
                let start = n * p as u64 / partitions as u64;
                let end = n * (p as u64 + 1) / partitions as u64;
                let mut acc = Accumulator::default();
                let mut u = vec![0.0; model.num_uniforms()];
                for d in start..end {
                    draw_uniforms(seed, d, &mut u);
                    let e = match (&cached, &model) {
                        (Some(c), BoundModel::Support { cumulative, .. }) => {
                            c[BoundModel::support_index(cumulative, u[0])]
                        }
                        _ => evaluate(spec, &model.game_from_uniforms(&u, &z)?, lookup)?,
                    };
                    if e.is_none() && opts.empty == EmptyPolicy::Strict {
                        return Err(empty_draw_error(spec, d));
                    }
                    acc.add(e.as_ref(), 1.0);
                }
                Ok(acc)
            };
            let parts: Vec<Result<Accumulator>> =
                (0..partitions).into_par_iter().map(run).collect();
            let mut total = Accumulator::default();
            for part in parts {
                total.merge(&part?);
            }
            Ok(total.finish(Mode::MonteCarlo, partitions, events))
        }
    }
}

/// One [`PartialCpds`] per parameter value, in input order, sharing random numbers.
pub fn sweep(
    spec: &CounterfactualSpec,
    thetas: &[Vec<f64>],
    n: u64,
    seed: u64,
    opts: &EngineOptions,
) -> Result<Vec<PartialCpds>> {
    if thetas.is_empty() {
        return Err(CpdsError::config(
            "sweep needs at least one parameter value",
        ));
    }
    thetas
        .iter()
        .map(|t| partial_cpds(spec, t, n, seed, opts))
        .collect()
}

/// Regular lattice over the free utility coordinates (payoffs of players at
/// profiles where they do not play action 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: Vec<f64>,
}

impl GridSpec {
    /// Lattice with a common step covering the 6-sigma box of the distribution.
    pub fn covering(spec: &CounterfactualSpec, theta: &[f64], step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(CpdsError::config("grid step must be positive"));
        }
        let (lo, hi) = six_sigma_box(spec, theta)?;
        let lo: Vec<f64> = lo.iter().map(|v| (v / step).floor() * step).collect();
        let hi: Vec<f64> = hi.iter().map(|v| (v / step).ceil() * step).collect();
        let d = lo.len();
        Ok(Self {
            lo,
            hi,
            step: vec![step; d],
        })
    }

    fn counts(&self) -> Vec<usize> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(&self.step)
            .map(|((lo, hi), s)| ((hi - lo) / s + 1e-9).floor() as usize + 1)
            .collect()
    }
}

/// Payoff coordinates that are not pinned to zero, as `(player, profile)`.
pub fn free_coordinates(actions: &ActionSpace) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..actions.num_players() {
        for k in 0..actions.num_profiles() {
            if actions.action_of(i, k) != 0 {
                out.push((i, k));
            }
        }
    }
    out
}

/// Per-coordinate `mean ± 6 sd` box (or support range) of the free coordinates.
pub fn six_sigma_box(spec: &CounterfactualSpec, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let actions = spec.action_space()?;
    let coords = free_coordinates(&actions);
    match spec.bind(theta)? {
        BoundModel::Support { games, .. } => {
            let mut lo = vec![f64::INFINITY; coords.len()];
            let mut hi = vec![f64::NEG_INFINITY; coords.len()];
            for g in &games {
                for (c, &(i, k)) in coords.iter().enumerate() {
                    lo[c] = lo[c].min(g.u(i, k));
                    hi[c] = hi[c].max(g.u(i, k));
                }
            }
            Ok((lo, hi))
        }
        BoundModel::Entry {
            alpha,
            beta,
            delta,
            x,
            epsilon,
            ..
        } => {
            let mut lo = Vec::with_capacity(coords.len());
            let mut hi = Vec::with_capacity(coords.len());
            for &(i, k) in &coords {
                let (me, ve) = epsilon[i].mean_var();
                let mut mean = alpha[i] + me;
                let mut var = ve;
                for (m, b) in x[i].iter().zip(&beta[i]) {
                    let (mx, vx) = m.mean_var();
                    mean += b * mx;
                    var += b * b * vx;
                }
                for j in 0..actions.num_players() {
                    if j != i && actions.action_of(j, k) == 1 {
                        mean += delta[i][j];
                    }
                }
                let sd = var.sqrt();
                lo.push(mean - 6.0 * sd);
                hi.push(mean + 6.0 * sd);
            }
            Ok((lo, hi))
        }
        BoundModel::Sampled { .. } => Err(CpdsError::config(
            "cannot derive a bracketing box for a custom sampler",
        )),
    }
}

/// Nearest-node lookup table of per-draw outcomes.
///
/// Nodes are filled on first use and cached; [`GridTable::precompute`] fills all of
/// them up front. A query is mapped to its L∞-nearest node, which on a regular
/// lattice is the per-coordinate nearest value with exact midpoints going to the
/// lower index. Queries outside the lattice are clamped coordinate-wise.
pub struct GridTable {
    actions: ActionSpace,
    coords: Vec<(usize, usize)>,
    grid: GridSpec,
    counts: Vec<usize>,
    concept: Concept,
    outcome: OutcomeSpec,
    events: Option<EventSet>,
    cache: RwLock<HashMap<Vec<u32>, Option<DrawEvaluation>>>,
}

impl std::fmt::Debug for GridTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridTable")
            .field("grid", &self.grid)
            .field("nodes", &self.num_nodes())
            .finish()
    }
}

/// Largest table [`precompute_grid`] fills eagerly.
pub const MAX_EAGER_NODES: u64 = 1_000_000;

impl GridTable {
    pub fn new(spec: &CounterfactualSpec, grid: GridSpec) -> Result<Self> {
        let actions = spec.action_space()?;
        let coords = free_coordinates(&actions);
        if grid.lo.len() != coords.len()
            || grid.hi.len() != coords.len()
            || grid.step.len() != coords.len()
        {
            return Err(CpdsError::dim(format!(
                "grid has {} dimensions, the game has {} free utility coordinates",
                grid.lo.len(),
                coords.len()
            )));
        }
        for d in 0..coords.len() {
            if !(grid.step[d] > 0.0) || !(grid.lo[d] <= grid.hi[d]) {
                return Err(CpdsError::config(format!("grid dimension {d} is invalid")));
            }
        }
        let counts = grid.counts();
        Ok(Self {
            actions,
            coords,
            grid,
            counts,
            concept: spec.concept,
            outcome: spec.outcome.clone(),
            events: spec.events.clone(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn num_nodes(&self) -> u64 {
        self.counts
            .iter()
            .fold(1u64, |acc, &c| acc.saturating_mul(c as u64))
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.read().expect("grid cache poisoned").len()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn node_of(&self, game: &Game) -> Result<Vec<u32>> {
        if game.actions() != &self.actions {
            return Err(CpdsError::dim("game shape differs from the grid's"));
        }
        let n = self.actions.num_profiles();
        for i in 0..self.actions.num_players() {
            for k in 0..n {
                if self.actions.action_of(i, k) == 0 && game.u(i, k) != 0.0 {
                    return Err(CpdsError::config(
                        "grid lookup needs zero payoffs at action 0",
                    ));
                }
            }
        }
        Ok(self
            .coords
            .iter()
            .enumerate()
            .map(|(d, &(i, k))| {
                let t = (game.u(i, k) - self.grid.lo[d]) / self.grid.step[d];
                let idx = (t - 0.5).ceil().clamp(0.0, (self.counts[d] - 1) as f64);
                idx as u32
            })
            .collect())
    }

    fn node_game(&self, node: &[u32]) -> Result<Game> {
        let n = self.actions.num_profiles();
        let mut utility = vec![0.0; self.actions.num_players() * n];
        for (d, &(i, k)) in self.coords.iter().enumerate() {
            utility[i * n + k] = self.grid.lo[d] + node[d] as f64 * self.grid.step[d];
        }
        Game::from_flat(self.actions.clone(), utility)
    }

    fn evaluate_node(&self, node: &[u32]) -> Result<Option<DrawEvaluation>> {
        let game = self.node_game(node)?;
        match evaluate_draw(&game, self.concept, &self.outcome, self.events.as_ref()) {
            Ok(e) => Ok(Some(e)),
            Err(CpdsError::Empty { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Value at the node nearest to `game`; `None` if that node has no solution.
    pub fn lookup(&self, game: &Game) -> Result<Option<DrawEvaluation>> {
        let node = self.node_of(game)?;
        if let Some(v) = self.cache.read().expect("grid cache poisoned").get(&node) {
            return Ok(*v);
        }
        let v = self.evaluate_node(&node)?;
        self.cache
            .write()
            .expect("grid cache poisoned")
            .insert(node, v);
        Ok(v)
    }

    /// Convenience wrapper returning only the outcome.
    pub fn lookup_outcome(&self, game: &Game) -> Result<Option<DrawOutcome>> {
        Ok(self.lookup(game)?.map(|e| e.outcome))
    }

    /// Fills every node.
    pub fn precompute(&self) -> Result<()> {
        let total = self.num_nodes();
        if total > MAX_EAGER_NODES {
            return Err(CpdsError::config(format!(
                "grid has {total} nodes; precompute at most {MAX_EAGER_NODES}"
            )));
        }
        let nodes: Vec<Vec<u32>> = (0..total)
            .map(|mut flat| {
                let mut node = vec![0u32; self.counts.len()];
                for d in (0..self.counts.len()).rev() {
                    node[d] = (flat % self.counts[d] as u64) as u32;
                    flat /= self.counts[d] as u64;
                }
                node
            })
            .collect();
        let values: Vec<Result<Option<DrawEvaluation>>> =
            nodes.par_iter().map(|n| self.evaluate_node(n)).collect();
        let mut cache = self.cache.write().expect("grid cache poisoned");
        for (node, v) in nodes.into_iter().zip(values) {
            cache.insert(node, v?);
        }
        Ok(())
    }

    /// Warnings for coordinates whose lattice does not cover the 6-sigma box.
    pub fn bracket_warnings(&self, spec: &CounterfactualSpec, theta: &[f64]) -> Vec<String> {
        let Ok((lo, hi)) = six_sigma_box(spec, theta) else {
            return vec!["could not derive the distribution's 6-sigma box".into()];
        };
        let mut out = Vec::new();
        for (d, &(i, k)) in self.coords.iter().enumerate() {
            if self.grid.lo[d] > lo[d] || self.grid.hi[d] < hi[d] {
                out.push(format!(
                    "grid for u[{i}][{k}] spans [{}, {}] but the 6-sigma box is [{:.4}, {:.4}]",
                    self.grid.lo[d], self.grid.hi[d], lo[d], hi[d]
                ));
            }
        }
        out
    }
}

/// Builds the lookup table and fills every node.
pub fn precompute_grid(spec: &CounterfactualSpec, grid: GridSpec) -> Result<GridTable> {
    let table = GridTable::new(spec, grid)?;
    table.precompute()?;
    Ok(table)
}
