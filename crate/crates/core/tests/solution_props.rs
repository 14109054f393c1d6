mod common;

use common::*;
use cpds::game::{ActionSpace, Game};
use cpds::lp::TOL_LP;
use cpds::solution::{
    maximize_over, solution_set, Concept, Direction, LinearFunctional, SolutionSet,
};
use proptest::prelude::*;
use rand::Rng;

fn optimum(g: &Game, concept: Concept, c: &[f64], dir: Direction) -> f64 {
    let (set, _) = solution_set(g, concept).unwrap();
    let f = LinearFunctional::new(c.to_vec(), 0.0).unwrap();
    maximize_over(&set, &f, dir).unwrap().0
}

fn vertices(g: &Game, concept: Concept) -> Vec<Vec<f64>> {
    match solution_set(g, concept).unwrap().0 {
        SolutionSet::Vertices(v) => v.iter().map(|s| s.probs().to_vec()).collect(),
        other => panic!("expected a vertex list, got {other:?}"),
    }
}

#[test]
fn g_mult_ce_exceeds_convex_hull_of_ne() {
    let g = entry_game([0.6, 0.7], -1.0);
    let ce_max = optimum(&g, Concept::Ce, &ENTRANTS, Direction::Max);
    let ne_max = optimum(&g, Concept::Mixed2x2, &ENTRANTS, Direction::Max);
    assert!((ce_max - 65.0 / 44.0).abs() < 1e-8, "{ce_max}");
    assert!((ne_max - 1.3).abs() < 1e-12, "{ne_max}");
    let (lo, hi) = brute_optimum(&ce_polytope(&g), 4, &ENTRANTS).unwrap();
    assert!((hi - 65.0 / 44.0).abs() < 1e-8);
    assert!((optimum(&g, Concept::Ce, &ENTRANTS, Direction::Min) - lo).abs() < 1e-8);
}

#[test]
fn mixed_equilibrium_matches_indifference_oracle() {
    let g = entry_game([0.6, 0.7], -1.0);
    let (p1, p2) = hand_mixed(&g).unwrap();
    assert!((p1 - 0.7).abs() < 1e-12 && (p2 - 0.6).abs() < 1e-12);
    let v = vertices(&g, Concept::Mixed2x2);
    assert_eq!(v.len(), 3);
    let m = product(p1, p2);
    assert!(v
        .iter()
        .any(|s| s.iter().zip(&m).all(|(a, b)| (a - b).abs() < 1e-12)));
}

#[test]
fn brute_oracle_on_matching_pennies() {
    let g = Game::from_flat(
        ActionSpace::binary(2).unwrap(),
        vec![1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0],
    )
    .unwrap();
    assert!(vertices(&g, Concept::Psne).is_empty());
    let ce = brute_vertices(&ce_polytope(&g), 4);
    assert_eq!(ce.len(), 1);
    assert!(ce[0].iter().all(|x| (x - 0.25).abs() < 1e-12));
    assert!((optimum(&g, Concept::Ce, &[1.0, 0.0, 0.0, 0.0], Direction::Max) - 0.25).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ce_contains_every_ne_and_their_mixtures(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_entry_game(&mut r);
        let ne = vertices(&g, Concept::Mixed2x2);
        prop_assert!(!ne.is_empty());
        for s in &ne {
            prop_assert!(ce_violation(&g, s) <= 1e-9);
        }
        for _ in 0..10 {
            let w: Vec<f64> = ne.iter().map(|_| r.random_range(0.0..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut mix = [0.0; 4];
            for (s, wk) in ne.iter().zip(&w) {
                for j in 0..4 {
                    mix[j] += s[j] * wk / total;
                }
            }
            prop_assert!(ce_violation(&g, &mix) <= 1e-9);
        }
        for c in [ENTRANTS, AT_LEAST_ONE] {
            let ce = (optimum(&g, Concept::Ce, &c, Direction::Min), optimum(&g, Concept::Ce, &c, Direction::Max));
            let co = (optimum(&g, Concept::Mixed2x2, &c, Direction::Min), optimum(&g, Concept::Mixed2x2, &c, Direction::Max));
            prop_assert!(ce.0 <= co.0 + 1e-9 && co.1 <= ce.1 + 1e-9, "{ce:?} {co:?}");
        }
    }

    #[test]
    fn library_ne_matches_hand_enumeration(seed in any::<u64>()) {
        let g = random_game_2x2(&mut rng(seed));
        let mut lib = vertices(&g, Concept::Mixed2x2);
        let mut hand: Vec<Vec<f64>> = hand_ne_2x2(&g).iter().map(|s| s.to_vec()).collect();
        let key = |v: &Vec<f64>| v.iter().map(|x| (x * 1e9).round() as i64).collect::<Vec<_>>();
        lib.sort_by_key(key);
        hand.sort_by_key(key);
        prop_assert_eq!(lib.len(), hand.len());
        for (a, b) in lib.iter().zip(&hand) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn entry_games_have_one_or_three_equilibria(seed in any::<u64>()) {
        let g = random_entry_game(&mut rng(seed));
        let k = vertices(&g, Concept::Mixed2x2).len();
        prop_assert!(k == 1 || k == 3, "{k} equilibria");
    }

    #[test]
    fn ce_optimum_matches_vertex_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_game_2x2(&mut r);
        let c: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        let (lo, hi) = brute_optimum(&ce_polytope(&g), 4, &c).expect("CE is never empty");
        prop_assert!((optimum(&g, Concept::Ce, &c, Direction::Max) - hi).abs() < 1e-8);
        prop_assert!((optimum(&g, Concept::Ce, &c, Direction::Min) - lo).abs() < 1e-8);
    }

    #[test]
    fn psne_matches_brute_force_on_larger_games(seed in any::<u64>(), shape in 0usize..3) {
        let sizes: &[usize] = [&[2, 2, 2][..], &[3, 2], &[2, 3, 2]][shape];
        let mut r = rng(seed);
        let mut g = random_game(&mut r, sizes);
        // Round payoffs so ties occur.
        let u: Vec<f64> = g.flat_utility().iter().map(|x| x.round()).collect();
        g = Game::from_flat(g.actions().clone(), u).unwrap();
        let lib: Vec<usize> = vertices(&g, Concept::Psne)
            .iter()
            .map(|s| s.iter().position(|&x| x == 1.0).unwrap())
            .collect();
        prop_assert_eq!(lib, brute_psne(&g));
    }

    #[test]
    fn max_is_at_least_min(seed in any::<u64>(), concept in 0usize..3) {
        let mut r = rng(seed);
        let g = random_game_2x2(&mut r);
        let concept = [Concept::Psne, Concept::Mixed2x2, Concept::Ce][concept];
        if solution_set(&g, concept).unwrap().0.is_empty_list() {
            return Ok(());
        }
        let c: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        let (hi, lo) = (optimum(&g, concept, &c, Direction::Max), optimum(&g, concept, &c, Direction::Min));
        // Two separate LP solves over a singleton can differ in the last bit.
        prop_assert!(hi >= lo - TOL_LP, "max {hi} < min {lo}");
    }

    #[test]
    fn solutions_lie_on_the_simplex(seed in any::<u64>()) {
        let g = random_game_2x2(&mut rng(seed));
        for s in vertices(&g, Concept::Mixed2x2) {
            prop_assert!(s.iter().all(|&x| x >= -1e-12));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn translation_and_scaling_leave_solutions_unchanged(
        seed in any::<u64>(),
        player in 0usize..2,
        c in -5.0f64..5.0,
        k in 0.1f64..10.0,
    ) {
        let mut r = rng(seed);
        let g = random_game_2x2(&mut r);
        let obj: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        for h in [g.translated(player, c).unwrap(), g.scaled(player, k).unwrap()] {
            prop_assert_eq!(vertices(&g, Concept::Psne), vertices(&h, Concept::Psne));
            let (a, b) = (vertices(&g, Concept::Mixed2x2), vertices(&h, Concept::Mixed2x2));
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                for (p, q) in x.iter().zip(y) {
                    prop_assert!((p - q).abs() <= 1e-9);
                }
            }
            for dir in [Direction::Max, Direction::Min] {
                let d = optimum(&g, Concept::Ce, &obj, dir) - optimum(&h, Concept::Ce, &obj, dir);
                prop_assert!(d.abs() <= 1e-9, "{d}");
            }
        }
    }
}
