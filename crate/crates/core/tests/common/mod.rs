#![allow(dead_code)]

use cpds::game::{build_linear_entry_game, ActionSpace, Game, LinearEntryGameParams};
use cpds::solution::Polyhedron;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// 2x2 entry game with monopoly payoffs `pi` and competition effect `delta`.
pub fn entry_game(pi: [f64; 2], delta: f64) -> Game {
    let actions = ActionSpace::binary(2).unwrap();
    build_linear_entry_game(&actions, &LinearEntryGameParams::two_player(pi, delta)).unwrap()
}

/// Random entry game with payoffs bounded away from 0 and negative delta.
pub fn random_entry_game(r: &mut StdRng) -> Game {
    let pi: [f64; 2] = [r.random_range(0.05..2.0), r.random_range(0.05..2.0)];
    let mut delta: f64 = -r.random_range(0.05..2.5);
    // Keep duopoly payoffs away from zero on both sides.
    while (pi[0] + delta).abs() < 0.05 || (pi[1] + delta).abs() < 0.05 {
        delta = -r.random_range(0.05..2.5);
    }
    entry_game(pi, delta)
}

/// Arbitrary 2x2 game with utilities in [-2, 2].
pub fn random_game_2x2(r: &mut StdRng) -> Game {
    let u = (0..8).map(|_| r.random_range(-2.0..2.0)).collect();
    Game::from_flat(ActionSpace::binary(2).unwrap(), u).unwrap()
}

pub fn random_game(r: &mut StdRng, sizes: &[usize]) -> Game {
    let actions = ActionSpace::new(sizes.to_vec()).unwrap();
    let n = actions.num_profiles() * sizes.len();
    let u = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    Game::from_flat(actions, u).unwrap()
}

/// Profile distribution from independent entry probabilities.
pub fn product(p1: f64, p2: f64) -> [f64; 4] {
    [
        (1.0 - p1) * (1.0 - p2),
        (1.0 - p1) * p2,
        p1 * (1.0 - p2),
        p1 * p2,
    ]
}

/// Fully mixed equilibrium of a 2x2 game from the indifference conditions.
pub fn hand_mixed(g: &Game) -> Option<(f64, f64)> {
    let u0 = g.utilities(0);
    let u1 = g.utilities(1);
    // Gain from entering for player 1 given the rival's action, and vice versa.
    let d0 = [u0[2] - u0[0], u0[3] - u0[1]];
    let d1 = [u1[1] - u1[0], u1[3] - u1[2]];
    if d0[0] == d0[1] || d1[0] == d1[1] {
        return None;
    }
    let p2 = d0[0] / (d0[0] - d0[1]);
    let p1 = d1[0] / (d1[0] - d1[1]);
    (p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0).then_some((p1, p2))
}

/// Pure profiles where every player weakly best-responds.
pub fn brute_psne(g: &Game) -> Vec<usize> {
    let a = g.actions();
    (0..g.num_profiles())
        .filter(|&p| {
            (0..g.num_players()).all(|i| {
                let mine = a.action_of(i, p);
                let base = p - mine * a.stride(i);
                let u = g.utilities(i);
                (0..a.sizes()[i]).all(|k| u[base + k * a.stride(i)] <= u[p])
            })
        })
        .collect()
}

/// Every NE of a 2x2 game as a profile distribution.
pub fn hand_ne_2x2(g: &Game) -> Vec<[f64; 4]> {
    let mut out: Vec<[f64; 4]> = brute_psne(g)
        .into_iter()
        .map(|p| {
            let mut s = [0.0; 4];
            s[p] = 1.0;
            s
        })
        .collect();
    if let Some((p1, p2)) = hand_mixed(g) {
        out.push(product(p1, p2));
    }
    out
}

/// CE obedience inequalities written out directly.
pub fn ce_violation(g: &Game, s: &[f64]) -> f64 {
    let a = g.actions();
    let mut worst: f64 = 0.0;
    for i in 0..g.num_players() {
        let u = g.utilities(i);
        let stride = a.stride(i);
        for rec in 0..a.sizes()[i] {
            for dev in 0..a.sizes()[i] {
                let mut gain = 0.0;
                for p in 0..g.num_profiles() {
                    if a.action_of(i, p) == rec {
                        let q = p - rec * stride + dev * stride;
                        gain += s[p] * (u[q] - u[p]);
                    }
                }
                worst = worst.max(gain);
            }
        }
    }
    let neg = s.iter().fold(0.0f64, |m, &x| m.max(-x));
    let sum = (s.iter().sum::<f64>() - 1.0).abs();
    worst.max(neg).max(sum)
}

/// All vertices of `{le rows, eq rows}` in R^n by solving every square active set.
pub fn brute_vertices(poly: &Polyhedron, n: usize) -> Vec<Vec<f64>> {
    let le = &poly.le;
    let eq = &poly.eq;
    let need = n - eq.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut pick = (0..need).collect::<Vec<_>>();
    if need > le.len() {
        return out;
    }
    loop {
        let rows: Vec<&(Vec<f64>, f64)> = eq.iter().chain(pick.iter().map(|&k| &le[k])).collect();
        let m = DMatrix::from_fn(n, n, |r, c| rows[r].0[c]);
        let b = DVector::from_fn(n, |r, _| rows[r].1);
        if let Some(x) = m.clone().lu().solve(&b) {
            let x: Vec<f64> = x.iter().copied().collect();
            let ok = (&m * DVector::from_column_slice(&x) - &b).amax() < 1e-9
                && le.iter().all(|(r, h)| dot(r, &x) <= h + 1e-9)
                && eq.iter().all(|(r, h)| (dot(r, &x) - h).abs() <= 1e-9);
            if ok
                && !out
                    .iter()
                    .any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9))
            {
                out.push(x);
            }
        }
        // Next combination.
        let mut i = need;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if pick[i] < le.len() - need + i {
                pick[i] += 1;
                for j in i + 1..need {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (min, max) of `c . x` over a polytope by vertex scan.
pub fn brute_optimum(poly: &Polyhedron, n: usize, c: &[f64]) -> Option<(f64, f64)> {
    let v = brute_vertices(poly, n);
    if v.is_empty() {
        return None;
    }
    let vals: Vec<f64> = v.iter().map(|x| dot(c, x)).collect();
    Some((
        vals.iter().copied().fold(f64::INFINITY, f64::min),
        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ))
}

/// CE polytope written out independently of the library.
pub fn ce_polytope(g: &Game) -> Polyhedron {
    let a = g.actions();
    let n = g.num_profiles();
    let mut poly = Polyhedron::simplex(n);
    for i in 0..g.num_players() {
        let u = g.utilities(i);
        let stride = a.stride(i);
        for rec in 0..a.sizes()[i] {
            for dev in 0..a.sizes()[i] {
                if dev == rec {
                    continue;
                }
                let mut row = vec![0.0; n];
                for p in 0..n {
                    if a.action_of(i, p) == rec {
                        let q = p - rec * stride + dev * stride;
                        row[p] = u[q] - u[p];
                    }
                }
                poly.le.push((row, 0.0));
            }
        }
    }
    poly
}

pub const ENTRANTS: [f64; 4] = [0.0, 1.0, 1.0, 2.0];
pub const AT_LEAST_ONE: [f64; 4] = [0.0, 1.0, 1.0, 1.0];

pub fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

use cpds::engine::{
    CounterfactualSpec, EngineOptions, Mode, SupportPoint, TensorTemplate, UtilityDistribution,
};
use cpds::outcome::{EventSet, OutcomeSpec};
use cpds::solution::{Concept, RegionUnion};

/// "At least one firm enters in pure strategies": p1 = 1 or p2 = 1.
pub fn pure_entry_regions() -> EventSet {
    let region = |row: Vec<f64>| Polyhedron {
        le: vec![],
        eq: vec![(row, 1.0)],
    };
    EventSet::SolutionRegions(RegionUnion(vec![
        region(vec![0.0, 0.0, 1.0, 1.0]),
        region(vec![0.0, 1.0, 0.0, 1.0]),
    ]))
}

/// Discrete support over `games` with weights taken from theta coordinates `w0, w1, ...`.
pub fn support_spec(
    games: &[Game],
    concept: Concept,
    outcome: OutcomeSpec,
    events: Option<EventSet>,
) -> CounterfactualSpec {
    let names: Vec<String> = (0..games.len()).map(|k| format!("w{k}")).collect();
    let g0 = &games[0];
    CounterfactualSpec {
        players: g0.num_players(),
        actions: g0.actions().sizes().to_vec(),
        theta: names.clone(),
        utility_map: None,
        distribution: UtilityDistribution::DiscreteSupport(
            games
                .iter()
                .zip(&names)
                .map(|(g, w)| SupportPoint {
                    game: TensorTemplate::from_game(g),
                    weight: cpds::engine::Param::Theta(w.clone()),
                })
                .collect(),
        ),
        concept,
        outcome,
        events,
    }
}

pub fn exact() -> EngineOptions {
    EngineOptions {
        mode: Mode::Exact,
        ..Default::default()
    }
}

pub fn entry_normal(concept: Concept, outcome: OutcomeSpec) -> CounterfactualSpec {
    let mut spec = CounterfactualSpec::load(&data("entry_normal.json")).unwrap();
    spec.concept = concept;
    spec.outcome = outcome;
    spec
}
