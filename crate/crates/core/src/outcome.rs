//! Per-draw counterfactual objects: bounds on an affine outcome over the convex hull
//! of the solution set, and could/must indicators for an event set.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CpdsError, Result};
use crate::game::Game;
use crate::solution::{
    intersects, maximize_over, solution_set, subset_of, Concept, Direction, LinearFunctional,
    RegionUnion, SolutionSet, SolveDiagnostics, Tribool,
};

/// Which action profiles count toward an event probability. "Entrants" are players
/// whose action is not 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfilePredicate {
    MinEntrants(usize),
    ExactEntrants(usize),
    Profiles(Vec<Vec<usize>>),
}

/// Builds a functional from the drawn game.
#[derive(Clone)]
pub struct CustomOutcome(pub Arc<OutcomeFn>);

pub type OutcomeFn = dyn Fn(&Game) -> Result<LinearFunctional> + Send + Sync;

impl fmt::Debug for CustomOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomOutcome(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// Probability that the realized profile satisfies the predicate.
    Event(ProfilePredicate),
    ExpectedEntrants,
    /// Weighted sum of realized payoffs.
    Welfare(Vec<f64>),
    /// Fixed coefficients, independent of the draw.
    Affine(LinearFunctional),
    #[serde(skip)]
    Custom(CustomOutcome),
}

fn entrants(game: &Game, profile: usize) -> usize {
    let a = game.actions();
    (0..a.num_players())
        .filter(|&i| a.action_of(i, profile) != 0)
        .count()
}

pub fn outcome_functional(spec: &OutcomeSpec, game: &Game) -> Result<LinearFunctional> {
    let n = game.num_profiles();
    let coeffs = match spec {
        OutcomeSpec::Event(pred) => {
            let mut c = vec![0.0; n];
            match pred {
                ProfilePredicate::MinEntrants(m) => {
                    for (k, ck) in c.iter_mut().enumerate() {
                        if entrants(game, k) >= *m {
                            *ck = 1.0;
                        }
                    }
                }
                ProfilePredicate::ExactEntrants(m) => {
                    for (k, ck) in c.iter_mut().enumerate() {
                        if entrants(game, k) == *m {
                            *ck = 1.0;
                        }
                    }
                }
                ProfilePredicate::Profiles(list) => {
                    for t in list {
                        c[game.actions().profile_index(t)?.0] = 1.0;
                    }
                }
            }
            c
        }
        OutcomeSpec::ExpectedEntrants => (0..n).map(|k| entrants(game, k) as f64).collect(),
        OutcomeSpec::Welfare(w) => {
            if w.len() != game.num_players() {
                return Err(CpdsError::dim(format!(
                    "{} welfare weights for {} players",
                    w.len(),
                    game.num_players()
                )));
            }
            (0..n)
                .map(|k| w.iter().enumerate().map(|(i, wi)| wi * game.u(i, k)).sum())
                .collect()
        }
        OutcomeSpec::Affine(f) => {
            if f.coeffs.len() != n {
                return Err(CpdsError::dim(format!(
                    "affine outcome has {} coefficients, expected {n}",
                    f.coeffs.len()
                )));
            }
            return Ok(f.clone());
        }
        OutcomeSpec::Custom(b) => {
            let f = (b.0)(game)?;
            if f.coeffs.len() != n {
                return Err(CpdsError::dim("custom outcome has the wrong width"));
            }
            return Ok(f);
        }
    };
    LinearFunctional::new(coeffs, 0.0)
}

/// Closed interval; either end may be infinite. Infinite ends serialize as
/// `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedInterval {
    #[serde(with = "extended_real")]
    pub lo: f64,
    #[serde(with = "extended_real")]
    pub hi: f64,
}

mod extended_real {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad bound {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSet {
    ScalarIntervals(Vec<ClosedInterval>),
    SolutionRegions(RegionUnion),
}

impl EventSet {
    pub fn validate(&self) -> Result<()> {
        if let EventSet::ScalarIntervals(list) = self {
            for iv in list {
                if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
                    return Err(CpdsError::config(format!(
                        "event interval [{}, {}] is invalid",
                        iv.lo, iv.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-draw result. `could`/`must` are present only when events were requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawOutcome {
    pub lo: f64,
    pub hi: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub could: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub must: Option<Tribool>,
}

/// Everything the engine needs from one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawEvaluation {
    pub outcome: DrawOutcome,
    pub diagnostics: SolveDiagnostics,
}

fn bounds_over(set: &SolutionSet, f: &LinearFunctional) -> Result<(f64, f64)> {
    let (hi, _) = maximize_over(set, f, Direction::Max)?;
    let (lo, _) = maximize_over(set, f, Direction::Min)?;
    Ok((lo, hi.max(lo)))
}

pub fn draw_bounds(game: &Game, concept: Concept, spec: &OutcomeSpec) -> Result<DrawOutcome> {
    evaluate_draw(game, concept, spec, None).map(|e| e.outcome)
}

/// Could/must indicators; bounds are filled in as a by-product.
pub fn draw_events(
    game: &Game,
    concept: Concept,
    events: &EventSet,
    spec: &OutcomeSpec,
) -> Result<DrawOutcome> {
    evaluate_draw(game, concept, spec, Some(events)).map(|e| e.outcome)
}

/// Solves the game once and computes bounds and (optionally) event indicators.
pub fn evaluate_draw(
    game: &Game,
    concept: Concept,
    spec: &OutcomeSpec,
    events: Option<&EventSet>,
) -> Result<DrawEvaluation> {
    let (set, diagnostics) = solution_set(game, concept)?;
    if set.is_empty_list() {
        return Err(CpdsError::Empty {
            context: format!("no {concept} solution for this utility draw"),
            draw: None,
        });
    }
    let f = outcome_functional(spec, game)?;
    let (lo, hi) = bounds_over(&set, &f)?;
    let (could, must) = match events {
        None => (None, None),
        Some(EventSet::ScalarIntervals(list)) => {
            let (c, m) = interval_indicators(lo, hi, list);
            (Some(c), Some(Tribool::from(m)))
        }
        Some(EventSet::SolutionRegions(union)) => {
            let mut could = false;
            for region in union.components() {
                if intersects(&set, region)? {
                    could = true;
                    break;
                }
            }
            (Some(could), Some(subset_of(&set, union)?))
        }
    };
    Ok(DrawEvaluation {
        outcome: DrawOutcome {
            lo,
            hi,
            could,
            must,
        },
        diagnostics,
    })
}

/// `(overlaps some interval, covered by the union)` for the closed range `[lo, hi]`.
pub fn interval_indicators(lo: f64, hi: f64, list: &[ClosedInterval]) -> (bool, bool) {
    let could = list.iter().any(|iv| iv.lo <= hi && lo <= iv.hi);
    let mut sorted: Vec<ClosedInterval> = list.to_vec();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut must = false;
    let mut current: Option<ClosedInterval> = None;
    for iv in sorted {
        current = match current {
            Some(c) if iv.lo <= c.hi => Some(ClosedInterval {
                lo: c.lo,
                hi: c.hi.max(iv.hi),
            }),
            Some(c) => {
                must |= c.lo <= lo && hi <= c.hi;
                Some(iv)
            }
            None => Some(iv),
        };
    }
    if let Some(c) = current {
        must |= c.lo <= lo && hi <= c.hi;
    }
    (could, must)
}
