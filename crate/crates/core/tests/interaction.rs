use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;

use stripres::config::ExperimentConfig;
use stripres::pipeline::{self, Prepared};
use stripres::C64;

mod common;

fn config(blocks: &[&str], text: &str, a: f64) -> ExperimentConfig {
    let ids: Vec<String> = blocks.iter().map(|b| format!("\"{b}\"")).collect();
    let json = format!(
        r#"{{
  "cross_section": {{"width": {PI}, "modes": 1}},
  "backgrounds": [{{"id": "F", "period": 1.0, "potential": {{"kind": "expression", "text": "0"}}}}],
  "blocks": [{{"id": "W", "left": "F", "right": "F", "a_minus": {a}, "a_plus": {a},
              "potential": {{"kind": "expression", "text": "{text}"}}}}],
  "assembly": {{"block_ids": [{}]}},
  "lambda0": "auto",
  "search_window": [-1.9, 0.99],
  "sweep": [[3, 3]],
  "seed": 3
}}"#,
        ids.join(", ")
    );
    ExperimentConfig::from_json(&json).unwrap()
}

const GAUSSIAN: &str = "-3*exp(-2*x1^2)";

fn three_wells() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| pipeline::prepare(&config(&["W", "W", "W"], GAUSSIAN, 3.0)).unwrap())
}

/// Even ground state of a square well of depth 2 and half width b over the threshold 1.
fn square_well(b: f64) -> (f64, f64, f64) {
    // k tan(k b) = kappa with k^2 + kappa^2 = 2
    let f = |k: f64| k * (k * b).tan() - (2.0 - k * k).sqrt();
    let (mut lo, mut hi) = (1e-9, (PI / (2.0 * b)).min(2f64.sqrt()) - 1e-12);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if f(m) > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
    }
    let k = 0.5 * (lo + hi);
    let kappa = (2.0 - k * k).sqrt();
    // u = A cos(k x) inside, A cos(k b) e^{-kappa (|x| - b)} outside
    let a2 = 1.0 / (b + (2.0 * k * b).sin() / (2.0 * k) + (k * b).cos().powi(2) / kappa);
    (1.0 - kappa * kappa, kappa, a2.sqrt() * (k * b).cos())
}

#[test]
fn square_well_tail_and_coupling_by_hand() {
    // edges halfway between core nodes keep the interpolated well second-order accurate
    let b = 1.0025;
    let a = 3.0;
    let p = pipeline::prepare(&config(&["W", "W"], &format!("-2*step({b}-abs(x1))"), a)).unwrap();
    let (lambda0, kappa, edge) = square_well(b);
    assert!((p.lambda0 - lambda0).abs() <= 1e-4, "{} vs {lambda0}", p.lambda0);
    let alpha = p.tails[0][0].right[0][0];
    let hand = edge * (-kappa * (a - b)).exp();
    assert!((alpha.norm() - hand).abs() <= 1e-3 * hand, "{} vs {hand}", alpha.norm());
    let layout = p.assembly(&[(3, 3)]).unwrap();
    let m = pipeline::interaction_at(&p, &layout).unwrap();
    let d = layout.shifts()[0];
    let entry = 2.0 * kappa * hand * hand * (-kappa * d).exp();
    assert!((m.matrix[(1, 0)].norm() - entry).abs() <= 2e-3 * entry, "{} vs {entry}", m.matrix[(1, 0)]);
    assert_eq!(m.matrix[(0, 0)], C64::new(0.0, 0.0));
    assert_eq!(m.matrix[(1, 1)], C64::new(0.0, 0.0));
}

#[test]
fn three_wells_match_brute_force_levels() {
    let p = three_wells();
    assert_eq!(p.size(), 3);
    let layout = p.assembly(&[(3, 3), (3, 3)]).unwrap();
    let m = pipeline::interaction_at(p, &layout).unwrap();
    // sparsity: only nearest neighbours couple
    for (r, c) in [(0, 0), (1, 1), (2, 2), (0, 2), (2, 0)] {
        assert_eq!(m.matrix[(r, c)], C64::new(0.0, 0.0));
    }
    assert!((m.matrix[(0, 1)] - m.matrix[(1, 0)].conj()).norm() <= 1e-9 * m.matrix[(0, 1)].norm());
    let mut predicted: Vec<f64> = m.eigenvalues.iter().map(|z| z.re).collect();
    predicted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // shifts are compared against the oracle's own single-well level so that
    // discretisation offsets of lambda0 cancel
    let x = &layout.positions;
    let well = |y: f64| -3.0 * (-2.0 * y * y).exp();
    let single = common::extrapolated_levels(&|y| 1.0 + well(y), -25.0, 25.0, 0.01, 1)[0];
    assert!((single - p.lambda0).abs() <= 1e-4);
    let v = |y: f64| 1.0 + x.iter().map(|&c| well(y - c)).sum::<f64>();
    let levels = common::extrapolated_levels(&v, x[0] - 25.0, x[2] + 25.0, 0.01, 3);
    let spread = levels[2] - levels[0];
    for (e, q) in levels.iter().zip(&predicted) {
        assert!((e - single - q).abs() <= 0.01 * spread, "{} vs {q} (spread {spread:.3e})", e - single);
    }
    // three symmetric wells split as 0, +-sqrt(2) |A_12|
    let t = m.matrix[(1, 0)].norm();
    let predicted_spread = predicted[2] - predicted[0];
    assert!((predicted_spread - 2.0 * 2f64.sqrt() * t).abs() <= 1e-9 * predicted_spread);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn chain_gauge_leaves_entries_unchanged(
        mods in proptest::collection::vec(0.1f64..10.0, 4),
        phases in proptest::collection::vec(0.0f64..2.0 * PI, 4),
    ) {
        let p = three_wells();
        let layout = p.assembly(&[(2, 3), (3, 2)]).unwrap();
        let base = pipeline::interaction_at(p, &layout).unwrap();
        let mut gauge = |k: usize, fam: usize, _: usize| C64::from_polar(mods[2 * k + fam], phases[2 * k + fam]);
        let other = common::regauged_interaction(p, &layout, &mut gauge);
        prop_assert!(common::max_relative_change(&base, &other) <= 1e-10);
    }
}
