//! Identified-set envelopes over a parameter grid, posterior draws of identified
//! sets, and their interval summaries.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{standard_normal, PartialCpds, UniformStream};
use crate::error::{CpdsError, Result};

/// Finite parameter grid; node ids are positions in `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    nodes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    names: Vec<String>,
}

impl ThetaGrid {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = nodes.first() else {
            return Err(CpdsError::config("theta grid is empty"));
        };
        let d = first.len();
        if d == 0 {
            return Err(CpdsError::config("theta grid nodes have no coordinates"));
        }
        for (k, n) in nodes.iter().enumerate() {
            if n.len() != d {
                return Err(CpdsError::dim(format!(
                    "node {k} has {} coordinates, expected {d}",
                    n.len()
                )));
            }
            if n.iter().any(|v| !v.is_finite()) {
                return Err(CpdsError::config(format!("node {k} is not finite")));
            }
        }
        Ok(Self {
            nodes,
            names: Vec::new(),
        })
    }

    /// Evenly spaced one-dimensional grid `lo, lo + step, ...` up to `hi`.
    pub fn regular_1d(lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(
            regular_values(lo, hi, step)?
                .into_iter()
                .map(|v| vec![v])
                .collect(),
        )
    }

    /// Parses `node_id, theta_1, ..., theta_d` rows. A first row whose id is not an
    /// integer is read as a header naming the coordinates.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut nodes = Vec::new();
        let mut names = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(row + 1, |p| p.line() as usize);
            let bad = |message: String| CpdsError::Ingestion { line, message };
            if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
                continue;
            }
            let Ok(id) = rec[0].parse::<usize>() else {
                if nodes.is_empty() && names.is_empty() {
                    names = rec.iter().skip(1).map(str::to_owned).collect();
                    continue;
                }
                return Err(bad(format!("node id {:?} is not an integer", &rec[0])));
            };
            if id != nodes.len() {
                return Err(bad(format!(
                    "node ids must be contiguous from 0; found {id}, expected {}",
                    nodes.len()
                )));
            }
            let coords = rec
                .iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| bad(format!("bad coordinate {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = nodes.first().map(Vec::len) {
                if coords.len() != first {
                    return Err(bad(format!(
                        "{} coordinates, expected {first}",
                        coords.len()
                    )));
                }
            }
            nodes.push(coords);
        }
        let mut grid = Self::new(nodes)?;
        if !names.is_empty() {
            if names.len() != grid.dim() {
                return Err(CpdsError::config(
                    "grid header does not match the coordinates",
                ));
            }
            grid.names = names;
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.nodes[id]
    }

    /// Coordinate names from the CSV header, if there was one.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Per-coordinate bounding box of the nodes.
    pub fn hull(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for n in &self.nodes {
            for k in 0..d {
                lo[k] = lo[k].min(n[k]);
                hi[k] = hi[k].max(n[k]);
            }
        }
        (lo, hi)
    }

    /// Nodes inside the closed box.
    pub fn in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        const SLACK: f64 = 1e-12;
        (0..self.len())
            .filter(|&k| {
                self.nodes[k]
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (l, h))| *v >= l - SLACK && *v <= h + SLACK)
            })
            .collect()
    }
}

/// `lo, lo + step, ...` up to `hi`, each value computed as `lo + k * step`.
pub fn regular_values(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(CpdsError::config(format!("invalid range {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

/// A draw of the identified set: nonempty sorted grid node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentifiedSetDraw {
    node_ids: Vec<usize>,
}

impl IdentifiedSetDraw {
    pub fn new(mut node_ids: Vec<usize>) -> Result<Self> {
        node_ids.sort_unstable();
        node_ids.dedup();
        if node_ids.is_empty() {
            return Err(CpdsError::Empty {
                context: "identified set draw has no nodes".into(),
                draw: None,
            });
        }
        Ok(Self { node_ids })
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        let o: HashSet<_> = other.node_ids.iter().collect();
        self.node_ids.iter().all(|k| o.contains(k))
    }

    /// Per-coordinate bounding box of the member nodes.
    pub fn hull(&self, grid: &ThetaGrid) -> (Vec<f64>, Vec<f64>) {
        let d = grid.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &k in &self.node_ids {
            for (c, v) in grid.node(k).iter().enumerate() {
                lo[c] = lo[c].min(*v);
                hi[c] = hi[c].max(*v);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityInterval {
    pub lo: f64,
    pub hi: f64,
}

impl QuantityInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(CpdsError::config(format!(
                "interval [{lo}, {hi}] is invalid"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Self) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// Fields of [`PartialCpds`] a quantity can read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    EInf,
    ESup,
    PMust,
    PCould,
    PCannot,
}

impl Field {
    fn read(self, p: &PartialCpds) -> Option<f64> {
        let v = match self {
            Field::EInf => Some(p.e_inf),
            Field::ESup => Some(p.e_sup),
            Field::PMust => p.p_must,
            Field::PCould => p.p_could,
            Field::PCannot => p.p_cannot,
        };
        v.filter(|x| !x.is_nan())
    }
}

/// Which interval to build from a node's quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `[e_inf, e_sup]`.
    Expectation,
    /// `[p_must, p_could]`.
    Event,
    /// Min and max of one field.
    Field(Field),
}

impl Quantity {
    fn fields(self) -> (Field, Field) {
        match self {
            Quantity::Expectation => (Field::EInf, Field::ESup),
            Quantity::Event => (Field::PMust, Field::PCould),
            Quantity::Field(f) => (f, f),
        }
    }
}

impl FromStr for Quantity {
    type Err = CpdsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "expectation" => Quantity::Expectation,
            "event" => Quantity::Event,
            "e_inf" => Quantity::Field(Field::EInf),
            "e_sup" => Quantity::Field(Field::ESup),
            "p_must" => Quantity::Field(Field::PMust),
            "p_could" => Quantity::Field(Field::PCould),
            "p_cannot" => Quantity::Field(Field::PCannot),
            _ => return Err(CpdsError::config(format!("unknown quantity {s:?}"))),
        })
    }
}

/// Envelope of the quantity over the nodes of one identified set.
pub fn population_bounds(
    profile: &[PartialCpds],
    theta_set: &IdentifiedSetDraw,
    quantity: Quantity,
) -> Result<QuantityInterval> {
    let (lo_field, hi_field) = quantity.fields();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &k in theta_set.node_ids() {
        let node = profile.get(k).ok_or_else(|| {
            CpdsError::dim(format!(
                "node {k} is outside a profile of {}",
                profile.len()
            ))
        })?;
        let undefined = |f: Field| CpdsError::config(format!("{f:?} is undefined at node {k}"));
        lo = lo.min(lo_field.read(node).ok_or_else(|| undefined(lo_field))?);
        hi = hi.max(hi_field.read(node).ok_or_else(|| undefined(hi_field))?);
    }
    QuantityInterval::new(lo, hi)
}

/// One interval per posterior draw.
pub fn posterior_cpds(
    profile: &[PartialCpds],
    draws: &[IdentifiedSetDraw],
    quantity: Quantity,
) -> Result<Vec<QuantityInterval>> {
    if draws.is_empty() {
        return Err(CpdsError::config("no posterior draws"));
    }
    draws
        .par_iter()
        .enumerate()
        .map(|(j, d)| {
            population_bounds(profile, d, quantity).map_err(|e| match e {
                CpdsError::Empty { context, .. } => CpdsError::Empty {
                    context,
                    draw: Some(j as u64),
                },
                e => e,
            })
        })
        .collect()
}

/// Mean of the lower endpoints and mean of the upper endpoints.
pub fn estimated_identified_set(intervals: &[QuantityInterval]) -> Result<QuantityInterval> {
    if intervals.is_empty() {
        return Err(CpdsError::config("no intervals to summarize"));
    }
    let n = intervals.len() as f64;
    let lo = intervals.iter().map(|i| i.lo).sum::<f64>() / n;
    let hi = intervals.iter().map(|i| i.hi).sum::<f64>() / n;
    // Means of ordered pairs stay ordered up to rounding.
    QuantityInterval::new(lo, hi.max(lo))
}

/// How draws are ranked before keeping the first `ceil(level * J)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CredibleRule {
    /// Narrowest intervals first.
    #[default]
    WidthRank,
    /// Closest to the estimated identified set (Hausdorff distance) first.
    HausdorffToMean,
}

impl FromStr for CredibleRule {
    type Err = CpdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width_rank" => Ok(Self::WidthRank),
            "hausdorff_to_mean" => Ok(Self::HausdorffToMean),
            _ => Err(CpdsError::config(format!("unknown credible rule {s:?}"))),
        }
    }
}

/// Indices of the draws a credible set keeps, in rank order.
pub fn credible_members(
    intervals: &[QuantityInterval],
    level: f64,
    rule: CredibleRule,
) -> Result<Vec<usize>> {
    if intervals.is_empty() {
        return Err(CpdsError::config("no intervals to summarize"));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(CpdsError::config(format!(
            "level {level} is outside (0, 1]"
        )));
    }
    let keep = ((level * intervals.len() as f64).ceil() as usize).clamp(1, intervals.len());
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    match rule {
        CredibleRule::WidthRank => {
            order.sort_by(|&a, &b| intervals[a].width().total_cmp(&intervals[b].width()))
        }
        CredibleRule::HausdorffToMean => {
            let mean = estimated_identified_set(intervals)?;
            let d = |i: &QuantityInterval| (i.lo - mean.lo).abs().max((i.hi - mean.hi).abs());
            order.sort_by(|&a, &b| d(&intervals[a]).total_cmp(&d(&intervals[b])));
        }
    }
    order.truncate(keep);
    Ok(order)
}

/// Smallest interval containing the kept draws.
pub fn credible_set(
    intervals: &[QuantityInterval],
    level: f64,
    rule: CredibleRule,
) -> Result<QuantityInterval> {
    let kept = credible_members(intervals, level, rule)?;
    let lo = kept
        .iter()
        .map(|&k| intervals[k].lo)
        .fold(f64::INFINITY, f64::min);
    let hi = kept
        .iter()
        .map(|&k| intervals[k].hi)
        .fold(f64::NEG_INFINITY, f64::max);
    QuantityInterval::new(lo, hi)
}

/// Parses posterior draws, one per line: `id: n1,n2,...` lists grid node ids and
/// `id: box lo_1 hi_1 ... lo_d hi_d` selects the nodes inside a box.
pub fn parse_posterior(text: &str, grid: &ThetaGrid) -> Result<Vec<IdentifiedSetDraw>> {
    let mut draws = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let bad = |message: String| CpdsError::Ingestion { line, message };
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (id, rest) = body
            .split_once(':')
            .ok_or_else(|| bad("expected `draw_id: ...`".into()))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(bad("missing draw id".into()));
        }
        if !ids.insert(id.to_owned()) {
            return Err(bad(format!("duplicate draw id {id:?}")));
        }
        let rest = rest.trim();
        let nodes = if let Some(spec) = rest.strip_prefix("box") {
            let v = spec
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| bad(format!("bad box bound {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 2 * grid.dim() {
                return Err(bad(format!(
                    "box needs {} bounds, found {}",
                    2 * grid.dim(),
                    v.len()
                )));
            }
            let lo: Vec<f64> = v.iter().step_by(2).copied().collect();
            let hi: Vec<f64> = v.iter().skip(1).step_by(2).copied().collect();
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Err(bad("box has lo > hi".into()));
            }
            grid.in_box(&lo, &hi)
        } else {
            rest.split(',')
                .map(|t| {
                    let t = t.trim();
                    let k: usize = t.parse().map_err(|_| bad(format!("bad node id {t:?}")))?;
                    if k >= grid.len() {
                        return Err(bad(format!("unknown node id {k}")));
                    }
                    Ok(k)
                })
                .collect::<Result<Vec<_>>>()?
        };
        if nodes.is_empty() {
            return Err(bad(format!("draw {id:?} contains no grid node")));
        }
        draws.push(IdentifiedSetDraw::new(nodes)?);
    }
    if draws.is_empty() {
        return Err(CpdsError::Ingestion {
            line: 0,
            message: "posterior file has no draws".into(),
        });
    }
    Ok(draws)
}

pub fn ingest_posterior(path: &Path, grid: &ThetaGrid) -> Result<Vec<IdentifiedSetDraw>> {
    parse_posterior(&std::fs::read_to_string(path)?, grid)
}

/// Noise added to each box endpoint of a synthetic posterior draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRule {
    /// Normal with standard deviation `c / sqrt(N)`.
    InvSqrt { c: f64 },
    /// Normal with fixed standard deviation, whatever `N`.
    Fixed { sd: f64 },
}

impl NoiseRule {
    pub fn scale(&self, n: u64) -> f64 {
        match *self {
            NoiseRule::InvSqrt { c } => c / (n as f64).sqrt(),
            NoiseRule::Fixed { sd } => sd,
        }
    }
}

/// Attempts per draw before a synthetic posterior gives up.
pub const SYNTHETIC_RETRIES: usize = 1000;

/// `draws` perturbed copies of the box `[truth_lo, truth_hi]`, clipped to the grid hull
/// and intersected with the grid. Draw `j` uses random stream `j`, so the output is a
/// deterministic function of the seed.
pub fn synthetic_posterior(
    grid: &ThetaGrid,
    truth_lo: &[f64],
    truth_hi: &[f64],
    n: u64,
    draws: usize,
    noise: NoiseRule,
    seed: u64,
) -> Result<Vec<IdentifiedSetDraw>> {
    let d = grid.dim();
    if truth_lo.len() != d || truth_hi.len() != d {
        return Err(CpdsError::dim(format!(
            "truth box must have {d} coordinates"
        )));
    }
    if n == 0 || draws == 0 {
        return Err(CpdsError::config(
            "synthetic posterior needs N >= 1 and J >= 1",
        ));
    }
    let scale = noise.scale(n);
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(CpdsError::config(format!("noise scale {scale} is invalid")));
    }
    let (hull_lo, hull_hi) = grid.hull();
    let z = standard_normal();
    (0..draws)
        .into_par_iter()
        .map(|j| {
            let mut rng = UniformStream::new(seed, j as u64);
            for _ in 0..SYNTHETIC_RETRIES {
                let mut lo = Vec::with_capacity(d);
                let mut hi = Vec::with_capacity(d);
                for k in 0..d {
                    let a = truth_lo[k] + scale * rng.next_normal(&z);
                    let b = truth_hi[k] + scale * rng.next_normal(&z);
                    lo.push(a.clamp(hull_lo[k], hull_hi[k]));
                    hi.push(b.clamp(hull_lo[k], hull_hi[k]));
                }
                if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                    continue;
                }
                let nodes = grid.in_box(&lo, &hi);
                if !nodes.is_empty() {
                    return IdentifiedSetDraw::new(nodes);
                }
            }
            Err(CpdsError::Empty {
                context: format!("synthetic draw stayed empty after {SYNTHETIC_RETRIES} tries"),
                draw: Some(j as u64),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mode;

    fn node(e_inf: f64, e_sup: f64) -> PartialCpds {
        PartialCpds {
            e_sup,
            e_inf,
            p_could: Some(e_sup / 2.0),
            p_must: Some(e_inf / 2.0),
            p_cannot: Some(1.0 - e_sup / 2.0),
            mc_stderr: Default::default(),
            n_draws: 1,
            excluded_draws: 0,
            exclusion_rate: 0.0,
            indeterminate_draws: 0,
            knife_edge_draws: 0,
            mode: Mode::Exact,
            partitions: 1,
        }
    }

    fn iv(lo: f64, hi: f64) -> QuantityInterval {
        QuantityInterval::new(lo, hi).unwrap()
    }

    #[test]
    fn population_bounds_examples() {
        let profile = vec![node(1.70, 1.79), node(1.20, 1.60)];
        let both = IdentifiedSetDraw::new(vec![1, 0]).unwrap();
        assert_eq!(
            population_bounds(&profile, &both, Quantity::Expectation).unwrap(),
            iv(1.20, 1.79)
        );
        let one = IdentifiedSetDraw::new(vec![0]).unwrap();
        assert_eq!(
            population_bounds(&profile, &one, Quantity::Expectation).unwrap(),
            iv(1.70, 1.79)
        );
        assert_eq!(
            population_bounds(&profile, &both, Quantity::Field(Field::ESup)).unwrap(),
            iv(1.60, 1.79)
        );
        assert_eq!(
            population_bounds(&profile, &both, Quantity::Event).unwrap(),
            iv(0.60, 0.895)
        );
        let flat = vec![node(0.2, 0.4); 3];
        for ids in [vec![0], vec![1, 2], vec![0, 1, 2]] {
            let d = IdentifiedSetDraw::new(ids).unwrap();
            assert_eq!(
                population_bounds(&flat, &d, Quantity::Expectation).unwrap(),
                iv(0.2, 0.4)
            );
        }
        assert!(IdentifiedSetDraw::new(vec![]).is_err());
        let far = IdentifiedSetDraw::new(vec![5]).unwrap();
        assert!(population_bounds(&profile, &far, Quantity::Expectation).is_err());
    }

    #[test]
    fn missing_event_fields_are_reported() {
        let mut n = node(0.0, 1.0);
        n.p_could = None;
        let d = IdentifiedSetDraw::new(vec![0]).unwrap();
        assert!(population_bounds(&[n], &d, Quantity::Event).is_err());
    }

    #[test]
    fn posterior_and_summaries() {
        let profile = vec![node(1.70, 1.79), node(1.20, 1.60)];
        let draws = vec![
            IdentifiedSetDraw::new(vec![0]).unwrap(),
            IdentifiedSetDraw::new(vec![0, 1]).unwrap(),
        ];
        let out = posterior_cpds(&profile, &draws, Quantity::Expectation).unwrap();
        assert_eq!(out, vec![iv(1.70, 1.79), iv(1.20, 1.79)]);
        assert!(posterior_cpds(&profile, &[], Quantity::Expectation).is_err());

        let e = estimated_identified_set(&[iv(0.0, 1.0), iv(0.2, 0.8)]).unwrap();
        assert!((e.lo - 0.1).abs() < 1e-15 && (e.hi - 0.9).abs() < 1e-15);
        assert_eq!(
            estimated_identified_set(&[iv(0.3, 0.4)]).unwrap(),
            iv(0.3, 0.4)
        );
    }

    #[test]
    fn credible_set_examples() {
        let list = [iv(0.0, 1.0), iv(0.0, 2.0), iv(0.0, 3.0), iv(0.0, 100.0)];
        let r = CredibleRule::WidthRank;
        assert_eq!(credible_set(&list, 0.75, r).unwrap(), iv(0.0, 3.0));
        assert_eq!(credible_set(&list, 1.0, r).unwrap(), iv(0.0, 100.0));
        assert_eq!(
            credible_set(&[iv(1.0, 2.0); 5], 0.3, r).unwrap(),
            iv(1.0, 2.0)
        );
        assert!(credible_set(&list, 0.0, r).is_err());
        assert!(credible_set(&list, 1.5, r).is_err());
        // Equal widths keep the earlier draw.
        let tie = [iv(5.0, 6.0), iv(0.0, 1.0)];
        assert_eq!(credible_set(&tie, 0.5, r).unwrap(), iv(5.0, 6.0));
        let h = credible_set(&list, 0.5, CredibleRule::HausdorffToMean).unwrap();
        assert!(h.hi <= 100.0);
    }

    #[test]
    fn grid_csv_parsing() {
        let g =
            ThetaGrid::from_csv_str("id, alpha, beta\n0, 0.0, 1\n1, 0.5, 1\n# c\n\n2, 1.0, 1\n")
                .unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.names(), ["alpha", "beta"]);
        assert_eq!(g.node(1), [0.5, 1.0]);
        let g = ThetaGrid::from_csv_str("0,1.5\n1,2.5\n").unwrap();
        assert_eq!(g.dim(), 1);
        assert!(g.names().is_empty());
        match ThetaGrid::from_csv_str("0,1\n2,3\n") {
            Err(CpdsError::Ingestion { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(ThetaGrid::from_csv_str("0,1\n1,2,3\n").is_err());
        assert!(ThetaGrid::from_csv_str("").is_err());
    }

    #[test]
    fn posterior_file_parsing() {
        let grid = ThetaGrid::new(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let draws = parse_posterior("# draws\n7: 0,1,2\nb: box 0.5 1.5\n\n", &grid).unwrap();
        assert_eq!(draws[0].node_ids(), [0, 1, 2]);
        assert_eq!(draws[1].node_ids(), [1]);
        for (text, line) in [
            ("1: 0\n2: box 3.5 3.9\n", 2),
            ("1: 0,9\n", 1),
            ("1 0\n", 1),
            ("1: 0\n1: 1\n", 2),
            ("1: box 0 1 2 3\n", 1),
            ("1: x\n", 1),
        ] {
            match parse_posterior(text, &grid) {
                Err(CpdsError::Ingestion { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_posterior("# nothing\n", &grid).is_err());
    }

    #[test]
    fn synthetic_posterior_behaviour() {
        let grid = ThetaGrid::regular_1d(0.0, 1.0, 0.01).unwrap();
        let truth = IdentifiedSetDraw::new(grid.in_box(&[0.3], &[0.7])).unwrap();
        let exact = synthetic_posterior(
            &grid,
            &[0.3],
            &[0.7],
            10,
            5,
            NoiseRule::Fixed { sd: 0.0 },
            1,
        )
        .unwrap();
        assert!(exact.iter().all(|d| *d == truth));
        let one = synthetic_posterior(
            &grid,
            &[0.3],
            &[0.7],
            100,
            1,
            NoiseRule::InvSqrt { c: 1.0 },
            2,
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        let a = synthetic_posterior(
            &grid,
            &[0.3],
            &[0.7],
            100,
            50,
            NoiseRule::InvSqrt { c: 1.0 },
            3,
        )
        .unwrap();
        let b = synthetic_posterior(
            &grid,
            &[0.3],
            &[0.7],
            100,
            50,
            NoiseRule::InvSqrt { c: 1.0 },
            3,
        )
        .unwrap();
        assert_eq!(a, b);
        let mean_gap = |n: u64| {
            let draws = synthetic_posterior(
                &grid,
                &[0.3],
                &[0.7],
                n,
                400,
                NoiseRule::InvSqrt { c: 1.0 },
                4,
            )
            .unwrap();
            draws
                .iter()
                .map(|d| {
                    let (lo, hi) = d.hull(&grid);
                    (lo[0] - 0.3).abs().max((hi[0] - 0.7).abs())
                })
                .sum::<f64>()
                / 400.0
        };
        let gaps = [mean_gap(100), mean_gap(10_000), mean_gap(1_000_000)];
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(synthetic_posterior(
            &grid,
            &[0.3, 0.1],
            &[0.7, 0.2],
            1,
            1,
            NoiseRule::Fixed { sd: 0.0 },
            0
        )
        .is_err());
    }

    #[test]
    fn estimated_set_tracks_symmetric_noise() {
        let grid = ThetaGrid::regular_1d(0.0, 3.0, 0.001).unwrap();
        let draws = synthetic_posterior(
            &grid,
            &[1.20],
            &[1.79],
            400,
            10_000,
            NoiseRule::InvSqrt { c: 1.0 },
            9,
        )
        .unwrap();
        let intervals: Vec<QuantityInterval> = draws
            .iter()
            .map(|d| {
                let (lo, hi) = d.hull(&grid);
                iv(lo[0], hi[0])
            })
            .collect();
        let e = estimated_identified_set(&intervals).unwrap();
        // sd 0.05 per endpoint plus grid rounding below 0.001.
        let se = 0.05 / 100.0;
        assert!((e.lo - 1.20).abs() < 3.0 * se + 1e-3, "{e:?}");
        assert!((e.hi - 1.79).abs() < 3.0 * se + 1e-3, "{e:?}");
        let c = credible_set(&intervals, 1.0, CredibleRule::WidthRank).unwrap();
        assert!(c.contains_interval(&e));
    }
}
