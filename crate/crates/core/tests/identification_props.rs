mod common;

use common::*;
use cpds::engine::{partial_cpds, PartialCpds};
use cpds::error::CpdsError;
use cpds::game::Game;
use cpds::harness::hausdorff_interval;
use cpds::identification::{
    credible_members, credible_set, estimated_identified_set, parse_posterior, population_bounds,
    posterior_cpds, synthetic_posterior, CredibleRule, Field, IdentifiedSetDraw, NoiseRule,
    Quantity, QuantityInterval, ThetaGrid,
};
use cpds::outcome::OutcomeSpec;
use cpds::solution::Concept;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::Rng;

/// Random simplex weights over three support games, one per grid node.
fn random_weight_grid(r: &mut StdRng, nodes: usize) -> ThetaGrid {
    let pts = (0..nodes)
        .map(|_| {
            let a: f64 = r.random_range(0.0..1.0);
            let b: f64 = r.random_range(0.0..1.0 - a);
            vec![a, b, 1.0 - a - b]
        })
        .collect();
    ThetaGrid::new(pts).unwrap()
}

fn profile(
    games: &[Game],
    grid: &ThetaGrid,
    concept: Concept,
    outcome: OutcomeSpec,
) -> Vec<PartialCpds> {
    let spec = support_spec(games, concept, outcome, Some(pure_entry_regions()));
    grid.nodes()
        .iter()
        .map(|t| partial_cpds(&spec, t, 0, 0, &exact()).unwrap())
        .collect()
}

fn random_subset(r: &mut StdRng, n: usize) -> IdentifiedSetDraw {
    loop {
        let ids: Vec<usize> = (0..n).filter(|_| r.random_bool(0.4)).collect();
        if let Ok(d) = IdentifiedSetDraw::new(ids) {
            return d;
        }
    }
}

fn random_intervals(r: &mut StdRng, n: usize) -> Vec<QuantityInterval> {
    (0..n)
        .map(|_| {
            let lo = r.random_range(-1.0..1.0);
            // Coarse widths so ties occur.
            let w = r.random_range(0.0f64..4.0).floor() * 0.25;
            QuantityInterval::new(lo, lo + w).unwrap()
        })
        .collect()
}

fn games(r: &mut StdRng) -> Vec<Game> {
    (0..3).map(|_| random_entry_game(r)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn population_bounds_equal_a_node_scan(seed in any::<u64>()) {
        let mut r = rng(seed);
        let grid = random_weight_grid(&mut r, 8);
        let prof = profile(&games(&mut r), &grid, Concept::Mixed2x2, OutcomeSpec::ExpectedEntrants);
        let set = random_subset(&mut r, 8);
        let e = population_bounds(&prof, &set, Quantity::Expectation).unwrap();
        let lo = set.node_ids().iter().map(|&k| prof[k].e_inf).fold(f64::INFINITY, f64::min);
        let hi = set.node_ids().iter().map(|&k| prof[k].e_sup).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((e.lo, e.hi), (lo, hi));
        let p = population_bounds(&prof, &set, Quantity::Event).unwrap();
        let lo = set.node_ids().iter().map(|&k| prof[k].p_must.unwrap()).fold(f64::INFINITY, f64::min);
        let hi = set.node_ids().iter().map(|&k| prof[k].p_could.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((p.lo, p.hi), (lo, hi));
        let f = population_bounds(&prof, &set, Quantity::Field(Field::ESup)).unwrap();
        let lo = set.node_ids().iter().map(|&k| prof[k].e_sup).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(f.lo, lo);
    }

    #[test]
    fn bounds_are_nested(seed in any::<u64>()) {
        let mut r = rng(seed);
        let grid = random_weight_grid(&mut r, 8);
        let prof = profile(&games(&mut r), &grid, Concept::Ce, OutcomeSpec::ExpectedEntrants);
        let small = random_subset(&mut r, 8);
        let mut ids = small.node_ids().to_vec();
        ids.extend((0..8).filter(|_| r.random_bool(0.5)));
        let big = IdentifiedSetDraw::new(ids).unwrap();
        prop_assert!(small.is_subset_of(&big));
        for q in [Quantity::Expectation, Quantity::Event] {
            let a = population_bounds(&prof, &small, q).unwrap();
            let b = population_bounds(&prof, &big, q).unwrap();
            prop_assert!(b.contains_interval(&a));
        }
    }

    #[test]
    fn summed_welfare_is_inside_the_sum_of_player_intervals(seed in any::<u64>()) {
        let mut r = rng(seed);
        let grid = random_weight_grid(&mut r, 6);
        let g = games(&mut r);
        let set = random_subset(&mut r, 6);
        let bounds = |w: Vec<f64>| {
            let prof = profile(&g, &grid, Concept::Mixed2x2, OutcomeSpec::Welfare(w));
            population_bounds(&prof, &set, Quantity::Expectation).unwrap()
        };
        let total = bounds(vec![1.0, 1.0]);
        let a = bounds(vec![1.0, 0.0]);
        let b = bounds(vec![0.0, 1.0]);
        prop_assert!(total.lo >= a.lo + b.lo - 1e-12 && total.hi <= a.hi + b.hi + 1e-12);
    }

    #[test]
    fn credible_set_covers_the_kept_share(seed in any::<u64>(), level in 0.01f64..=1.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..60);
        let iv = random_intervals(&mut r, n);
        let c = credible_set(&iv, level, CredibleRule::WidthRank).unwrap();
        let need = (level * n as f64).ceil() as usize;
        prop_assert!(iv.iter().filter(|i| c.contains_interval(i)).count() >= need);
        let kept = credible_members(&iv, level, CredibleRule::WidthRank).unwrap();
        prop_assert_eq!(kept.len(), need);
        // The kept draws are never wider than the dropped ones.
        let widest_kept = kept.iter().map(|&k| iv[k].width()).fold(0.0, f64::max);
        for (k, i) in iv.iter().enumerate() {
            if !kept.contains(&k) {
                prop_assert!(i.width() >= widest_kept);
            }
        }
        let h = credible_set(&iv, level, CredibleRule::HausdorffToMean).unwrap();
        prop_assert!(iv.iter().filter(|i| h.contains_interval(i)).count() >= need);
        let full = credible_set(&iv, 1.0, CredibleRule::WidthRank).unwrap();
        prop_assert!(full.contains_interval(&estimated_identified_set(&iv).unwrap()));
    }

    #[test]
    fn hausdorff_is_a_metric_on_intervals(seed in any::<u64>()) {
        let mut r = rng(seed);
        let v = random_intervals(&mut r, 3);
        let (a, b, c) = (&v[0], &v[1], &v[2]);
        prop_assert_eq!(hausdorff_interval(a, a), 0.0);
        prop_assert_eq!(hausdorff_interval(a, b), hausdorff_interval(b, a));
        prop_assert!(hausdorff_interval(a, c) <= hausdorff_interval(a, b) + hausdorff_interval(b, c) + 1e-15);
        if a != b {
            prop_assert!(hausdorff_interval(a, b) > 0.0);
        }
    }
}

#[test]
fn summed_welfare_is_strictly_inside_on_the_multiple_equilibrium_game() {
    let g = [entry_game([0.6, 0.7], -1.0)];
    let grid = ThetaGrid::new(vec![vec![1.0]]).unwrap();
    let set = IdentifiedSetDraw::new(vec![0]).unwrap();
    let bounds = |w: Vec<f64>| {
        let spec = support_spec(&g, Concept::Psne, OutcomeSpec::Welfare(w), None);
        let prof: Vec<_> = grid
            .nodes()
            .iter()
            .map(|t| partial_cpds(&spec, t, 0, 0, &exact()).unwrap())
            .collect();
        population_bounds(&prof, &set, Quantity::Expectation).unwrap()
    };
    let total = bounds(vec![1.0, 1.0]);
    let (a, b) = (bounds(vec![1.0, 0.0]), bounds(vec![0.0, 1.0]));
    // Monopoly by either firm: summed profit is 0.6 or 0.7, each firm alone 0 or its own.
    assert_eq!((total.lo, total.hi), (0.6, 0.7));
    assert_eq!(a.lo + b.lo, 0.0);
    assert!((a.hi + b.hi - 1.3).abs() < 1e-12);
}

#[test]
fn credible_set_reference_case() {
    let iv: Vec<_> = [(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (0.0, 100.0)]
        .iter()
        .map(|&(a, b)| QuantityInterval::new(a, b).unwrap())
        .collect();
    let c = credible_set(&iv, 0.75, CredibleRule::WidthRank).unwrap();
    assert_eq!((c.lo, c.hi), (0.0, 3.0));
    let full = credible_set(&iv, 1.0, CredibleRule::WidthRank).unwrap();
    assert_eq!((full.lo, full.hi), (0.0, 100.0));
}

#[test]
fn posterior_cpds_applies_population_bounds_per_draw() {
    let mut r = rng(4);
    let grid = random_weight_grid(&mut r, 8);
    let prof = profile(
        &games(&mut r),
        &grid,
        Concept::Mixed2x2,
        OutcomeSpec::ExpectedEntrants,
    );
    let draws: Vec<_> = (0..20).map(|_| random_subset(&mut r, 8)).collect();
    let out = posterior_cpds(&prof, &draws, Quantity::Expectation).unwrap();
    for (d, iv) in draws.iter().zip(&out) {
        assert_eq!(
            *iv,
            population_bounds(&prof, d, Quantity::Expectation).unwrap()
        );
    }
}

#[test]
fn box_posterior_lines_intersect_the_grid() {
    let grid = ThetaGrid::regular_1d(0.0, 2.0, 1.0).unwrap();
    let draws = parse_posterior("# comment\n7: 0,1,2\n8: box 0.5 1.5\n", &grid).unwrap();
    assert_eq!(draws[0].node_ids(), &[0, 1, 2]);
    assert_eq!(draws[1].node_ids(), &[1]);
    match parse_posterior("1: 0\n2: box 3.5 3.9\n", &grid) {
        Err(CpdsError::Ingestion { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected an ingestion error, got {other:?}"),
    }
    assert!(matches!(
        parse_posterior("1: 0,9\n", &grid),
        Err(CpdsError::Ingestion { line: 1, .. })
    ));
}

#[test]
fn synthetic_posterior_concentrates_as_n_grows() {
    let grid = ThetaGrid::regular_1d(0.0, 1.0, 0.001).unwrap();
    let truth = IdentifiedSetDraw::new(grid.in_box(&[0.3], &[0.7])).unwrap();
    let exact =
        synthetic_posterior(&grid, &[0.3], &[0.7], 1, 5, NoiseRule::Fixed { sd: 0.0 }, 1).unwrap();
    assert!(exact.iter().all(|d| *d == truth));
    let mut prev = f64::INFINITY;
    for n in [100u64, 10_000, 1_000_000] {
        let d = synthetic_posterior(
            &grid,
            &[0.3],
            &[0.7],
            n,
            400,
            NoiseRule::InvSqrt { c: 1.0 },
            9,
        )
        .unwrap();
        let mean = d
            .iter()
            .map(|s| {
                let (lo, hi) = s.hull(&grid);
                (lo[0] - 0.3).abs().max((hi[0] - 0.7).abs())
            })
            .sum::<f64>()
            / d.len() as f64;
        assert!(mean < prev, "{mean} at N = {n}");
        prev = mean;
    }
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
}
