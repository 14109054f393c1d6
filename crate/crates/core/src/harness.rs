//! Finite-sample checks of posterior consistency for set-valued posteriors: the
//! Hausdorff-distance criterion, the hitting-probability criterion, and agreement
//! between the two.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::{
    partial_cpds, CounterfactualSpec, EngineOptions, Mode, SupportPoint, TensorTemplate,
    UtilityDistribution,
};
use crate::error::{CpdsError, Result};
use crate::game::{build_linear_entry_game, ActionSpace, LinearEntryGameParams};
use crate::identification::{
    population_bounds, synthetic_posterior, IdentifiedSetDraw, NoiseRule, Quantity,
    QuantityInterval, ThetaGrid,
};
use crate::outcome::OutcomeSpec;
use crate::solution::Concept;

pub type IntervalSet = QuantityInterval;

/// Draws of the posterior set, keyed by sample size.
pub type DrawsByN = BTreeMap<u64, Vec<IntervalSet>>;

pub fn hausdorff_interval(a: &IntervalSet, b: &IntervalSet) -> f64 {
    (a.lo - b.lo).abs().max((a.hi - b.hi).abs())
}

/// Pass thresholds for the limit checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest allowed gap to the limit at the largest sample size.
    pub final_gap: f64,
    /// Allowed increase of the gap from one sample size to the next.
    pub slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            final_gap: 0.05,
            slack: 0.02,
        }
    }
}

impl Thresholds {
    fn passes(&self, gaps: &[f64]) -> bool {
        let Some(last) = gaps.last() else {
            return false;
        };
        *last < self.final_gap && gaps.windows(2).all(|w| w[1] <= w[0] + self.slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub n: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Def7Report {
    pub eps: f64,
    pub per_n: Vec<Exceedance>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub n: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Probe as `[lo, hi]` per coordinate.
    pub probe: Vec<[f64; 2]>,
    pub truth_hit: bool,
    pub per_n: Vec<HitRate>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Def6Report {
    pub probes: Vec<ProbeReport>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub def7: Vec<Def7Report>,
    pub def6: Def6Report,
    pub def7_pass: bool,
    pub def6_pass: bool,
    /// Both criteria pass or both fail.
    pub agree: bool,
}

fn check_ns(n_values: impl ExactSizeIterator) -> Result<()> {
    if n_values.len() < 2 {
        return Err(CpdsError::config(
            "need draws for at least two sample sizes",
        ));
    }
    Ok(())
}

fn def7_from_distances(
    distances: &BTreeMap<u64, Vec<f64>>,
    eps: f64,
    thr: &Thresholds,
) -> Result<Def7Report> {
    if !(eps > 0.0) {
        return Err(CpdsError::config("eps must be positive"));
    }
    check_ns(distances.keys())?;
    let mut per_n = Vec::with_capacity(distances.len());
    for (&n, d) in distances {
        if d.is_empty() {
            return Err(CpdsError::config(format!("no draws at N = {n}")));
        }
        let fraction = d.iter().filter(|&&x| x > eps).count() as f64 / d.len() as f64;
        per_n.push(Exceedance { n, fraction });
    }
    let gaps: Vec<f64> = per_n.iter().map(|e| e.fraction).collect();
    Ok(Def7Report {
        eps,
        pass: thr.passes(&gaps),
        per_n,
    })
}

fn probe_from_hits(
    probe: Vec<[f64; 2]>,
    hits: &BTreeMap<u64, Vec<bool>>,
    truth_hit: bool,
    thr: &Thresholds,
) -> ProbeReport {
    let per_n: Vec<HitRate> = hits
        .iter()
        .map(|(&n, h)| HitRate {
            n,
            probability: h.iter().filter(|&&b| b).count() as f64 / h.len().max(1) as f64,
        })
        .collect();
    let target = if truth_hit { 1.0 } else { 0.0 };
    let gaps: Vec<f64> = per_n
        .iter()
        .map(|r| (r.probability - target).abs())
        .collect();
    ProbeReport {
        probe,
        truth_hit,
        pass: thr.passes(&gaps),
        per_n,
    }
}

/// Fraction of draws farther than `eps` from the truth, per sample size.
pub fn check_def7(
    draws_by_n: &DrawsByN,
    truth: &IntervalSet,
    eps: f64,
    thr: &Thresholds,
) -> Result<Def7Report> {
    let distances = draws_by_n
        .iter()
        .map(|(&n, d)| (n, d.iter().map(|a| hausdorff_interval(a, truth)).collect()))
        .collect();
    def7_from_distances(&distances, eps, thr)
}

fn intersects(a: &IntervalSet, b: &IntervalSet) -> bool {
    a.lo <= b.hi && b.lo <= a.hi
}

/// Posterior probability that each probe meets the set, per sample size. Probes
/// must stay clear of the truth's boundary points.
pub fn check_def6(
    draws_by_n: &DrawsByN,
    truth: &IntervalSet,
    probes: &[IntervalSet],
    thr: &Thresholds,
) -> Result<Def6Report> {
    check_ns(draws_by_n.keys())?;
    if probes.is_empty() {
        return Err(CpdsError::config("need at least one probe"));
    }
    let mut reports = Vec::with_capacity(probes.len());
    for p in probes {
        if p.contains(truth.lo) || p.contains(truth.hi) {
            return Err(CpdsError::Precondition(format!(
                "probe [{}, {}] touches the boundary of [{}, {}]",
                p.lo, p.hi, truth.lo, truth.hi
            )));
        }
        let hits = draws_by_n
            .iter()
            .map(|(&n, d)| (n, d.iter().map(|a| intersects(a, p)).collect()))
            .collect();
        reports.push(probe_from_hits(
            vec![[p.lo, p.hi]],
            &hits,
            intersects(truth, p),
            thr,
        ));
    }
    Ok(Def6Report {
        pass: reports.iter().all(|r| r.pass),
        probes: reports,
    })
}

/// Runs both criteria; passes when they agree.
pub fn check_equivalence(
    draws_by_n: &DrawsByN,
    truth: &IntervalSet,
    eps_grid: &[f64],
    probes: &[IntervalSet],
    thr: &Thresholds,
) -> Result<EquivalenceReport> {
    if eps_grid.is_empty() {
        return Err(CpdsError::config("eps grid is empty"));
    }
    let def7 = eps_grid
        .iter()
        .map(|&e| check_def7(draws_by_n, truth, e, thr))
        .collect::<Result<Vec<_>>>()?;
    let def6 = check_def6(draws_by_n, truth, probes, thr)?;
    Ok(assemble(def7, def6))
}

fn assemble(def7: Vec<Def7Report>, def6: Def6Report) -> EquivalenceReport {
    let def7_pass = def7.iter().all(|r| r.pass);
    let def6_pass = def6.pass;
    EquivalenceReport {
        def7,
        def6,
        def7_pass,
        def6_pass,
        agree: def7_pass == def6_pass,
    }
}

/// Interval posterior for a one-dimensional parameter: synthetic draws on a regular
/// grid, each summarized by the hull of its nodes.
pub fn interval_posterior(
    grid: &ThetaGrid,
    truth: &IntervalSet,
    n_values: &[u64],
    draws: usize,
    noise: NoiseRule,
    seed: u64,
) -> Result<BTreeMap<u64, Vec<IdentifiedSetDraw>>> {
    if grid.dim() != 1 {
        return Err(CpdsError::dim(
            "interval posteriors need a one-dimensional grid",
        ));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            // Distinct streams per sample size.
            let s = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Ok((
                n,
                synthetic_posterior(grid, &[truth.lo], &[truth.hi], n, draws, noise, s)?,
            ))
        })
        .collect()
}

fn hull_interval(grid: &ThetaGrid, d: &IdentifiedSetDraw) -> IntervalSet {
    let (lo, hi) = d.hull(grid);
    IntervalSet {
        lo: lo[0],
        hi: hi[0],
    }
}

/// Profile for the mapped scenario: at weight `w`, the game with dominant entry has
/// probability `w` and the game with multiple equilibria `1 - w`; the quantity is
/// expected entrants under mixed equilibria.
pub fn mapped_profile(grid: &ThetaGrid) -> Result<Vec<crate::engine::PartialCpds>> {
    let actions = ActionSpace::binary(2)?;
    let mult = build_linear_entry_game(
        &actions,
        &LinearEntryGameParams::two_player([0.6, 0.7], -1.0),
    )?;
    let dom = build_linear_entry_game(
        &actions,
        &LinearEntryGameParams::two_player([1.5, 1.2], -1.0),
    )?;
    let opts = EngineOptions {
        mode: Mode::Exact,
        ..Default::default()
    };
    grid.nodes()
        .iter()
        .map(|node| {
            let w = node[0];
            if !(0.0..=1.0).contains(&w) {
                return Err(CpdsError::config(format!("weight {w} is outside [0, 1]")));
            }
            let spec = CounterfactualSpec {
                players: 2,
                actions: vec![2, 2],
                theta: vec![],
                utility_map: None,
                distribution: UtilityDistribution::DiscreteSupport(vec![
                    SupportPoint {
                        game: TensorTemplate::from_game(&mult),
                        weight: (1.0 - w).into(),
                    },
                    SupportPoint {
                        game: TensorTemplate::from_game(&dom),
                        weight: w.into(),
                    },
                ]),
                concept: Concept::Mixed2x2,
                outcome: OutcomeSpec::ExpectedEntrants,
                events: None,
            };
            partial_cpds(&spec, &[], 1, 0, &opts)
        })
        .collect()
}

/// Shared settings of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    /// Posterior draws per sample size.
    pub draws: usize,
    pub n_values: Vec<u64>,
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    /// Overrides the file-level sample sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Synthetic interval posterior around `truth` on a regular grid over `[lo, hi]`.
    Interval {
        truth: [f64; 2],
        grid: [f64; 3],
        noise: NoiseRule,
        probes: Vec<[f64; 2]>,
        /// Push the draws through the mapped counterfactual quantity first.
        #[serde(default)]
        mapped: bool,
    },
    /// Degenerate posterior on `[1/N, 1] x [1/N, 2 pi - 1/N]` pushed through the
    /// polar map, tested against the image of `[0, 1] x [0, 2 pi]` (the unit disk).
    PolarRibbon {
        probe: [f64; 2],
        /// Disk sample points per radius and per angle for the Hausdorff sup.
        resolution: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub n_values: Vec<u64>,
    pub truth: Vec<[f64; 2]>,
    #[serde(flatten)]
    pub result: EquivalenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub seed: u64,
    pub draws: usize,
    pub thresholds: Thresholds,
    pub scenarios: Vec<ScenarioReport>,
}

impl ConsistencyReport {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

pub fn run_harness(config: &HarnessConfig) -> Result<ConsistencyReport> {
    let scenarios = config
        .scenarios
        .iter()
        .map(|s| run_scenario(config, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport {
        seed: config.seed,
        draws: config.draws,
        thresholds: config.thresholds,
        scenarios,
    })
}

fn run_scenario(config: &HarnessConfig, s: &Scenario) -> Result<ScenarioReport> {
    let n_values = s
        .n_values
        .clone()
        .unwrap_or_else(|| config.n_values.clone());
    let thr = &config.thresholds;
    match &s.kind {
        ScenarioKind::Interval {
            truth,
            grid,
            noise,
            probes,
            mapped,
        } => {
            let g = ThetaGrid::regular_1d(grid[0], grid[1], grid[2])?;
            let truth_iv = QuantityInterval::new(truth[0], truth[1])?;
            let truth_draw = IdentifiedSetDraw::new(g.in_box(&[truth[0]], &[truth[1]]))
                .map_err(|_| CpdsError::config("truth box contains no grid node"))?;
            let posterior =
                interval_posterior(&g, &truth_iv, &n_values, config.draws, *noise, config.seed)?;
            let probes = probes
                .iter()
                .map(|p| QuantityInterval::new(p[0], p[1]))
                .collect::<Result<Vec<_>>>()?;
            let (draws_by_n, truth_set, probes) = if *mapped {
                let profile = mapped_profile(&g)?;
                let image =
                    |d: &IdentifiedSetDraw| population_bounds(&profile, d, Quantity::Expectation);
                let draws = posterior
                    .iter()
                    .map(|(&n, ds)| Ok((n, ds.iter().map(image).collect::<Result<Vec<_>>>()?)))
                    .collect::<Result<DrawsByN>>()?;
                // Probes map to their images as well.
                let probes = probes
                    .iter()
                    .map(|p| {
                        let d = IdentifiedSetDraw::new(g.in_box(&[p.lo], &[p.hi]))
                            .map_err(|_| CpdsError::config("probe contains no grid node"))?;
                        image(&d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (draws, image(&truth_draw)?, probes)
            } else {
                let draws = posterior
                    .iter()
                    .map(|(&n, ds)| (n, ds.iter().map(|d| hull_interval(&g, d)).collect()))
                    .collect::<DrawsByN>();
                (draws, hull_interval(&g, &truth_draw), probes)
            };
            let result =
                check_equivalence(&draws_by_n, &truth_set, &config.eps_grid, &probes, thr)?;
            Ok(ScenarioReport {
                name: s.name.clone(),
                n_values,
                truth: vec![[truth_set.lo, truth_set.hi]],
                result,
            })
        }
        ScenarioKind::PolarRibbon { probe, resolution } => {
            let result = polar_ribbon(&n_values, &config.eps_grid, *probe, *resolution, thr)?;
            Ok(ScenarioReport {
                name: s.name.clone(),
                n_values,
                truth: vec![[0.0, 1.0], [0.0, 2.0 * PI]],
                result,
            })
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Polar image of `[r0, 1] x [phi0, 2 pi - phi0]`.
struct Ribbon {
    r0: f64,
    phi0: f64,
}

impl Ribbon {
    fn angle(p: [f64; 2]) -> f64 {
        let a = p[1].atan2(p[0]);
        if a < 0.0 {
            a + 2.0 * PI
        } else {
            a
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let r = p[0].hypot(p[1]);
        let a = Self::angle(p);
        r >= self.r0 && r <= 1.0 && a >= self.phi0 && a <= 2.0 * PI - self.phi0
    }

    fn distance(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]);
        let a = Self::angle(p);
        if a >= self.phi0 && a <= 2.0 * PI - self.phi0 {
            return (self.r0 - r).max(r - 1.0).max(0.0);
        }
        // Nearest point lies on one of the two straight edges.
        let edge = |phi: f64| {
            let (s, c) = phi.sin_cos();
            segment_distance(p, [self.r0 * c, self.r0 * s], [c, s])
        };
        edge(self.phi0).min(edge(2.0 * PI - self.phi0))
    }
}

/// The non-convex image counterexample: Hausdorff consistency holds while an interior
/// point probe is never hit.
pub fn polar_ribbon(
    n_values: &[u64],
    eps_grid: &[f64],
    probe: [f64; 2],
    resolution: usize,
    thr: &Thresholds,
) -> Result<EquivalenceReport> {
    check_ns(n_values.iter())?;
    if resolution < 2 {
        return Err(CpdsError::config("resolution must be at least 2"));
    }
    let r = probe[0].hypot(probe[1]);
    if (r - 1.0).abs() < 1e-12 {
        return Err(CpdsError::Precondition(
            "probe lies on the boundary of the unit disk".into(),
        ));
    }
    // Sample of the unit disk including its centre and boundary. The ribbon lies in
    // the disk, so the Hausdorff distance is the largest distance from the disk.
    let mut disk = vec![[0.0, 0.0]];
    for i in 1..=resolution {
        let rad = i as f64 / resolution as f64;
        for j in 0..=resolution {
            let phi = 2.0 * PI * j as f64 / resolution as f64;
            disk.push([rad * phi.cos(), rad * phi.sin()]);
        }
    }
    let mut distances = BTreeMap::new();
    let mut hits = BTreeMap::new();
    for &n in n_values {
        if n < 1 {
            return Err(CpdsError::config("sample sizes must be positive"));
        }
        let ribbon = Ribbon {
            r0: 1.0 / n as f64,
            phi0: 1.0 / n as f64,
        };
        let d = disk.iter().map(|&p| ribbon.distance(p)).fold(0.0, f64::max);
        // Degenerate posterior: every draw equals the ribbon.
        distances.insert(n, vec![d]);
        hits.insert(n, vec![ribbon.contains(probe)]);
    }
    let def7 = eps_grid
        .iter()
        .map(|&e| def7_from_distances(&distances, e, thr))
        .collect::<Result<Vec<_>>>()?;
    let probe_report = probe_from_hits(
        vec![[probe[0], probe[0]], [probe[1], probe[1]]],
        &hits,
        r < 1.0,
        thr,
    );
    let def6 = Def6Report {
        pass: probe_report.pass,
        probes: vec![probe_report],
    };
    Ok(assemble(def7, def6))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> IntervalSet {
        QuantityInterval::new(lo, hi).unwrap()
    }

    /// Sup-inf distance between dense samples of the two intervals.
    fn dense_hausdorff(a: &IntervalSet, b: &IntervalSet) -> f64 {
        let pts = |i: &IntervalSet| -> Vec<f64> {
            (0..=10_000)
                .map(|k| i.lo + (i.hi - i.lo) * k as f64 / 10_000.0)
                .collect()
        };
        let (pa, pb) = (pts(a), pts(b));
        let directed = |x: &[f64], y: &[f64]| {
            x.iter()
                .map(|p| {
                    y.iter()
                        .map(|q| (p - q).abs())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_interval(&iv(0.2, 0.4), &iv(0.2, 0.4)), 0.0);
        for (a, b, want) in [
            (iv(0.0, 1.0), iv(0.0, 2.0), 1.0),
            (iv(0.0, 1.0), iv(5.0, 6.0), 5.0),
        ] {
            assert_eq!(hausdorff_interval(&a, &b), want);
            assert!((dense_hausdorff(&a, &b) - want).abs() < 1e-3);
        }
    }

    fn draws(sets: &[(u64, Vec<IntervalSet>)]) -> DrawsByN {
        sets.iter().cloned().collect()
    }

    #[test]
    fn exact_posterior_passes_both() {
        let truth = iv(0.3, 0.7);
        let d = draws(&[(10, vec![truth; 5]), (100, vec![truth; 5])]);
        let thr = Thresholds::default();
        let r = check_def7(&d, &truth, 0.05, &thr).unwrap();
        assert!(r.pass && r.per_n.iter().all(|e| e.fraction == 0.0));
        let r = check_def6(&d, &truth, &[iv(0.4, 0.5), iv(0.8, 0.9)], &thr).unwrap();
        assert!(r.pass);
        assert!(r.probes[0].truth_hit && !r.probes[1].truth_hit);
    }

    #[test]
    fn non_shrinking_noise_fails() {
        let truth = iv(0.3, 0.7);
        let off = iv(0.5, 0.7);
        let d = draws(&[(10, vec![off, truth]), (100, vec![off, truth])]);
        let thr = Thresholds::default();
        assert!(!check_def7(&d, &truth, 0.05, &thr).unwrap().pass);
        let r = check_equivalence(&d, &truth, &[0.05], &[iv(0.35, 0.4)], &thr).unwrap();
        assert!(!r.def7_pass && !r.def6_pass && r.agree);
    }

    #[test]
    fn boundary_probes_are_rejected() {
        let truth = iv(0.3, 0.7);
        let d = draws(&[(10, vec![truth]), (100, vec![truth])]);
        let err = check_def6(&d, &truth, &[iv(0.6, 0.8)], &Thresholds::default()).unwrap_err();
        assert!(matches!(err, CpdsError::Precondition(_)));
        assert!(check_def7(
            &draws(&[(10, vec![truth])]),
            &truth,
            0.05,
            &Thresholds::default()
        )
        .is_err());
    }

    #[test]
    fn ribbon_geometry() {
        let r = Ribbon { r0: 0.1, phi0: 0.1 };
        assert!(!r.contains([0.5, 0.0]));
        assert!(r.contains([0.0, 0.5]));
        assert_eq!(r.distance([0.0, 0.5]), 0.0);
        assert!((r.distance([0.0, 0.0]) - 0.1).abs() < 1e-12);
        let d = r.distance([0.5, 0.0]);
        assert!((d - 0.5 * 0.1f64.sin()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn polar_scenario_splits_the_criteria() {
        let r = polar_ribbon(
            &[10, 100, 1000],
            &[0.05],
            [0.5, 0.0],
            200,
            &Thresholds::default(),
        )
        .unwrap();
        assert!(r.def7_pass);
        assert!(!r.def6_pass);
        assert!(!r.agree);
        assert!(r.def6.probes[0].per_n.iter().all(|h| h.probability == 0.0));
    }

    #[test]
    fn mapped_profile_is_monotone() {
        let g = ThetaGrid::regular_1d(0.0, 1.0, 0.25).unwrap();
        let p = mapped_profile(&g).unwrap();
        assert!((p[0].e_sup - 1.3).abs() < 1e-12 && (p[0].e_inf - 1.0).abs() < 1e-12);
        assert!((p[4].e_sup - 2.0).abs() < 1e-12);
        assert!(p
            .windows(2)
            .all(|w| w[1].e_inf > w[0].e_inf && w[1].e_sup > w[0].e_sup));
    }
}
