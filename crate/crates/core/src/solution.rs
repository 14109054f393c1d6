//! Solution concepts and optimization of affine functionals over solution sets.
//!
//! A [`SolutionSet`] is either a finite list of joint distributions (pure and 2x2
//! mixed Nash equilibria), whose convex hull is the set of interest, or a polyhedron
//! in profile-probability space (correlated equilibria).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CpdsError, Result};
use crate::game::Game;
use crate::lp::{LinearProgram, LpOutcome, Relation, TOL_LP};
use crate::polytope::enumerate_vertices;

/// Payoff differences at or below this magnitude count as exact indifference.
pub const KNIFE_EDGE_TOL: f64 = 1e-10;

/// A joint distribution over action profiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Solution {
    probs: Vec<f64>,
}

impl Solution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CpdsError::dim("solution over zero profiles"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CpdsError::config(
                "solution entries must be finite and >= 0",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CpdsError::config(format!(
                "solution sums to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Point mass on one profile.
    pub fn degenerate(num_profiles: usize, profile: usize) -> Self {
        let mut probs = vec![0.0; num_profiles];
        probs[profile] = 1.0;
        Self { probs }
    }

    /// Cleans LP round-off: clamps tiny negatives and renormalizes.
    pub(crate) fn from_lp(x: Vec<f64>) -> Self {
        let mut probs: Vec<f64> = x.into_iter().map(|p| p.max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Linear inequality/equality system over profile probabilities.
///
/// Serialized form: `{"le": [[row, rhs], ...], "eq": [[row, rhs], ...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polyhedron {
    #[serde(default)]
    pub le: Vec<(Vec<f64>, f64)>,
    #[serde(default)]
    pub eq: Vec<(Vec<f64>, f64)>,
}

impl Polyhedron {
    /// The probability simplex over `n` profiles.
    pub fn simplex(n: usize) -> Self {
        let mut p = Polyhedron::default();
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = -1.0;
            p.le.push((row, 0.0));
        }
        p.eq.push((vec![1.0; n], 1.0));
        p
    }

    pub fn num_constraints(&self) -> usize {
        self.le.len() + self.eq.len()
    }

    /// Width of the rows, if any row exists.
    pub fn width(&self) -> Option<usize> {
        self.le.iter().chain(&self.eq).map(|(r, _)| r.len()).next()
    }

    pub fn check_width(&self, n: usize) -> Result<()> {
        for (row, rhs) in self.le.iter().chain(&self.eq) {
            if row.len() != n {
                return Err(CpdsError::dim(format!(
                    "region row has {} coefficients, expected {n}",
                    row.len()
                )));
            }
            if !rhs.is_finite() || row.iter().any(|c| !c.is_finite()) {
                return Err(CpdsError::config("region coefficients must be finite"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        let dot = |r: &[f64]| r.iter().zip(point).map(|(a, b)| a * b).sum::<f64>();
        self.le.iter().all(|(r, b)| dot(r) <= b + tol)
            && self.eq.iter().all(|(r, b)| (dot(r) - b).abs() <= tol)
    }

    /// Adds the constraints to `lp`, skipping bare non-negativity rows the solver
    /// already imposes.
    fn push_into(&self, lp: &mut LinearProgram) {
        for (row, rhs) in &self.le {
            if is_nonnegativity(row, *rhs) {
                continue;
            }
            lp.add(row, Relation::Le, *rhs);
        }
        for (row, rhs) in &self.eq {
            lp.add(row, Relation::Eq, *rhs);
        }
    }
}

fn is_nonnegativity(row: &[f64], rhs: f64) -> bool {
    rhs == 0.0 && row.iter().filter(|&&c| c != 0.0).count() == 1 && row.iter().any(|&c| c < 0.0)
}

/// A finite union of polyhedra.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionUnion(pub Vec<Polyhedron>);

impl RegionUnion {
    pub fn single(p: Polyhedron) -> Self {
        RegionUnion(vec![p])
    }

    pub fn components(&self) -> &[Polyhedron] {
        &self.0
    }

    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.0.iter().any(|p| p.contains(point, tol))
    }

    pub fn check_width(&self, n: usize) -> Result<()> {
        self.0.iter().try_for_each(|p| p.check_width(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionSet {
    Vertices(Vec<Solution>),
    Polyhedron {
        num_profiles: usize,
        constraints: Polyhedron,
        /// Leading `le` rows that are incentive constraints.
        incentive_rows: usize,
    },
}

/// Affine map `coeffs . s + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

impl LinearFunctional {
    pub fn new(coeffs: Vec<f64>, constant: f64) -> Result<Self> {
        if !constant.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(CpdsError::config("functional coefficients must be finite"));
        }
        Ok(Self { coeffs, constant })
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.coeffs.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concept {
    Psne,
    Mixed2x2,
    Ce,
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concept::Psne => "psne",
            Concept::Mixed2x2 => "mixed2x2",
            Concept::Ce => "ce",
        })
    }
}

impl std::str::FromStr for Concept {
    type Err = CpdsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psne" => Ok(Concept::Psne),
            "mixed2x2" => Ok(Concept::Mixed2x2),
            "ce" => Ok(Concept::Ce),
            other => Err(CpdsError::config(format!(
                "unknown solution concept {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Max,
    Min,
}

/// Three-valued answer for set-containment questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tribool {
    True,
    False,
    Indeterminate,
}

impl From<bool> for Tribool {
    fn from(b: bool) -> Self {
        if b {
            Tribool::True
        } else {
            Tribool::False
        }
    }
}

/// Diagnostics from a solution-set computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveDiagnostics {
    /// Some player was exactly indifferent (within [`KNIFE_EDGE_TOL`]) in a way that
    /// admits a continuum of partially mixed equilibria, which were left out.
    pub knife_edge: bool,
}

/// Profiles where no player has a strictly profitable unilateral deviation.
pub fn enumerate_psne(game: &Game) -> SolutionSet {
    let actions = game.actions();
    let n = game.num_profiles();
    let mut out = Vec::new();
    'profiles: for k in 0..n {
        for i in 0..game.num_players() {
            let stride = actions.stride(i);
            let own = actions.action_of(i, k);
            let base = k - own * stride;
            let current = game.u(i, k);
            for alt in 0..actions.sizes()[i] {
                if alt != own && game.u(i, base + alt * stride) > current {
                    continue 'profiles;
                }
            }
        }
        out.push(Solution::degenerate(n, k));
    }
    SolutionSet::Vertices(out)
}

pub fn solve_mixed_ne_2x2(game: &Game) -> Result<SolutionSet> {
    solve_mixed_ne_2x2_diag(game).map(|(s, _)| s)
}

/// Pure equilibria plus the interior mixed equilibrium of a 2x2 game, with a flag for
/// knife-edge indifference.
pub fn solve_mixed_ne_2x2_diag(game: &Game) -> Result<(SolutionSet, SolveDiagnostics)> {
    if game.actions().sizes() != [2, 2] {
        return Err(CpdsError::Unsupported(
            "mixed equilibria are only computed for 2x2 games".into(),
        ));
    }
    let SolutionSet::Vertices(mut vertices) = enumerate_psne(game) else {
        unreachable!("pure equilibria are listed as vertices")
    };
    // Gain from entering for player 0 against a2, and for player 1 against a1.
    let d1 = [game.u(0, 2) - game.u(0, 0), game.u(0, 3) - game.u(0, 1)];
    let d2 = [game.u(1, 1) - game.u(1, 0), game.u(1, 3) - game.u(1, 2)];
    let mut diag = SolveDiagnostics::default();
    if d1.iter().chain(&d2).any(|d| d.abs() <= KNIFE_EDGE_TOL) {
        diag.knife_edge = true;
    }
    let denom1 = d1[0] - d1[1];
    let denom2 = d2[0] - d2[1];
    if denom1.abs() > KNIFE_EDGE_TOL && denom2.abs() > KNIFE_EDGE_TOL {
        // Player 1's mixing probability makes player 0 indifferent and vice versa.
        let p2 = d1[0] / denom1;
        let p1 = d2[0] / denom2;
        if p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0 {
            let probs = vec![
                (1.0 - p1) * (1.0 - p2),
                (1.0 - p1) * p2,
                p1 * (1.0 - p2),
                p1 * p2,
            ];
            vertices.push(Solution { probs });
        }
    }
    Ok((SolutionSet::Vertices(vertices), diag))
}

/// Correlated equilibria as a polyhedron: one obedience constraint per player and
/// ordered pair of distinct actions, followed by the simplex constraints.
pub fn ce_constraints(game: &Game) -> SolutionSet {
    let actions = game.actions();
    let n = game.num_profiles();
    let mut poly = Polyhedron::default();
    for i in 0..game.num_players() {
        let stride = actions.stride(i);
        let size = actions.sizes()[i];
        for a in 0..size {
            for alt in 0..size {
                if alt == a {
                    continue;
                }
                // sum_{a_-i} s(a, a_-i) [u(a, a_-i) - u(alt, a_-i)] >= 0, stored as <= 0.
                let mut row = vec![0.0; n];
                for (k, coeff) in row.iter_mut().enumerate() {
                    if actions.action_of(i, k) == a {
                        let base = k - a * stride;
                        *coeff = -(game.u(i, k) - game.u(i, base + alt * stride));
                    }
                }
                poly.le.push((row, 0.0));
            }
        }
    }
    let incentive_rows = poly.le.len();
    let simplex = Polyhedron::simplex(n);
    poly.le.extend(simplex.le);
    poly.eq.extend(simplex.eq);
    SolutionSet::Polyhedron {
        num_profiles: n,
        constraints: poly,
        incentive_rows,
    }
}

pub fn solution_set(game: &Game, concept: Concept) -> Result<(SolutionSet, SolveDiagnostics)> {
    match concept {
        Concept::Psne => Ok((enumerate_psne(game), SolveDiagnostics::default())),
        Concept::Mixed2x2 => solve_mixed_ne_2x2_diag(game),
        Concept::Ce => Ok((ce_constraints(game), SolveDiagnostics::default())),
    }
}

impl SolutionSet {
    pub fn num_profiles(&self) -> Option<usize> {
        match self {
            SolutionSet::Vertices(v) => v.first().map(Solution::len),
            SolutionSet::Polyhedron { num_profiles, .. } => Some(*num_profiles),
        }
    }

    /// Structural emptiness. A polyhedron is only known empty after an LP.
    pub fn is_empty_list(&self) -> bool {
        matches!(self, SolutionSet::Vertices(v) if v.is_empty())
    }

    fn lp_base(&self) -> Option<LinearProgram> {
        match self {
            SolutionSet::Polyhedron {
                num_profiles,
                constraints,
                ..
            } => {
                let mut lp = LinearProgram::new(*num_profiles);
                constraints.push_into(&mut lp);
                Some(lp)
            }
            SolutionSet::Vertices(_) => None,
        }
    }
}

fn empty_error() -> CpdsError {
    CpdsError::Empty {
        context: "solution set has no elements".into(),
        draw: None,
    }
}

/// Optimum of `f` over the convex hull of `set`.
pub fn maximize_over(
    set: &SolutionSet,
    f: &LinearFunctional,
    direction: Direction,
) -> Result<(f64, Solution)> {
    if let Some(n) = set.num_profiles() {
        if f.coeffs.len() != n {
            return Err(CpdsError::dim(format!(
                "functional has {} coefficients, expected {n}",
                f.coeffs.len()
            )));
        }
    }
    match set {
        SolutionSet::Vertices(vs) => {
            let mut best: Option<(f64, &Solution)> = None;
            for v in vs {
                let val = f.eval(&v.probs);
                let better = match best {
                    None => true,
                    Some((b, _)) => match direction {
                        Direction::Max => val > b,
                        Direction::Min => val < b,
                    },
                };
                if better {
                    best = Some((val, v));
                }
            }
            best.map(|(v, s)| (v, s.clone())).ok_or_else(empty_error)
        }
        SolutionSet::Polyhedron { .. } => {
            let lp = set.lp_base().expect("polyhedron");
            let outcome = match direction {
                Direction::Max => lp.maximize(&f.coeffs)?,
                Direction::Min => lp.minimize(&f.coeffs)?,
            };
            match outcome {
                LpOutcome::Optimal { x, .. } => {
                    let s = Solution::from_lp(x);
                    Ok((f.eval(&s.probs), s))
                }
                LpOutcome::Infeasible => Err(empty_error()),
                LpOutcome::Unbounded => Err(CpdsError::Lp(
                    "unbounded objective over a solution polyhedron".into(),
                )),
            }
        }
    }
}

/// Whether the convex hull of `set` meets `region`.
pub fn intersects(set: &SolutionSet, region: &Polyhedron) -> Result<bool> {
    if let Some(n) = set.num_profiles() {
        region.check_width(n)?;
    }
    match set {
        SolutionSet::Vertices(vs) => {
            if vs.is_empty() {
                return Err(empty_error());
            }
            if vs.iter().any(|v| region.contains(&v.probs, TOL_LP)) {
                return Ok(true);
            }
            // Feasibility over convex-combination weights.
            let k = vs.len();
            let mut lp = LinearProgram::new(k);
            lp.add(&vec![1.0; k], Relation::Eq, 1.0);
            let image = |row: &[f64]| -> Vec<f64> {
                vs.iter()
                    .map(|v| row.iter().zip(&v.probs).map(|(a, b)| a * b).sum())
                    .collect()
            };
            for (row, rhs) in &region.le {
                lp.add(&image(row), Relation::Le, *rhs);
            }
            for (row, rhs) in &region.eq {
                lp.add(&image(row), Relation::Eq, *rhs);
            }
            Ok(lp.feasible_point()?.is_some())
        }
        SolutionSet::Polyhedron { .. } => {
            let base = set.lp_base().expect("polyhedron");
            if base.feasible_point()?.is_none() {
                return Err(empty_error());
            }
            let mut lp = base;
            region.push_into(&mut lp);
            Ok(lp.feasible_point()?.is_some())
        }
    }
}

/// Sound partial decision of `co(set) ⊆ ∪ regions`.
pub fn subset_of(set: &SolutionSet, regions: &RegionUnion) -> Result<Tribool> {
    if let Some(n) = set.num_profiles() {
        regions.check_width(n)?;
    }
    match set {
        SolutionSet::Vertices(vs) => {
            if vs.is_empty() {
                return Err(empty_error());
            }
            if vs.iter().any(|v| !regions.contains(&v.probs, TOL_LP)) {
                return Ok(Tribool::False);
            }
            let common = regions
                .components()
                .iter()
                .any(|c| vs.iter().all(|v| c.contains(&v.probs, TOL_LP)));
            Ok(if common {
                Tribool::True
            } else {
                Tribool::Indeterminate
            })
        }
        SolutionSet::Polyhedron { .. } => {
            let base = set.lp_base().expect("polyhedron");
            if base.feasible_point()?.is_none() {
                return Err(empty_error());
            }
            let mut witnesses = Vec::new();
            for component in regions.components() {
                match support_check(&base, component)? {
                    None => return Ok(Tribool::True),
                    Some(points) => witnesses.extend(points),
                }
            }
            if witnesses.iter().any(|p| !regions.contains(p, TOL_LP)) {
                return Ok(Tribool::False);
            }
            if regions.components().is_empty() {
                return Ok(Tribool::False);
            }
            let SolutionSet::Polyhedron {
                num_profiles,
                constraints,
                ..
            } = set
            else {
                unreachable!()
            };
            if let Some(vertices) = enumerate_vertices(constraints, *num_profiles) {
                if vertices.iter().any(|v| !regions.contains(v, TOL_LP)) {
                    return Ok(Tribool::False);
                }
            }
            Ok(Tribool::Indeterminate)
        }
    }
}

/// Checks every constraint of `component` against the support function of the
/// polyhedron. Returns `None` if contained, otherwise the violating optimizers.
fn support_check(base: &LinearProgram, component: &Polyhedron) -> Result<Option<Vec<Vec<f64>>>> {
    let mut violators = Vec::new();
    let mut probe = |row: &[f64], rhs: f64, dir: Direction| -> Result<()> {
        let out = match dir {
            Direction::Max => base.maximize(row)?,
            Direction::Min => base.minimize(row)?,
        };
        if let LpOutcome::Optimal { value, x } = out {
            let bad = match dir {
                Direction::Max => value > rhs + TOL_LP,
                Direction::Min => value < rhs - TOL_LP,
            };
            if bad {
                violators.push(x);
            }
        }
        Ok(())
    };
    for (row, rhs) in &component.le {
        probe(row, *rhs, Direction::Max)?;
    }
    for (row, rhs) in &component.eq {
        probe(row, *rhs, Direction::Max)?;
        probe(row, *rhs, Direction::Min)?;
    }
    Ok(if violators.is_empty() {
        None
    } else {
        Some(violators)
    })
}
