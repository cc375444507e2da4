use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use stripres::floquet::{FloquetCell, FloquetOptions};
use stripres::interaction::{shift_polynomial, ShiftSign};
use stripres::model::{
    build_assembly, galerkin_project, CrossSection, PerturbationBlock, PeriodicBackground, ScalarPotential,
    TransverseQuadrature,
};
use stripres::pencil::{exponent_of, monodromy};
use stripres::{linalg, C64};

fn background(id: &str, expr: &str, period: f64, modes: usize) -> Arc<PeriodicBackground> {
    let cs = CrossSection::new(PI, modes).unwrap();
    Arc::new(PeriodicBackground::from_potential(id, period, &ScalarPotential::expression(expr).unwrap(), &cs, 256).unwrap())
}

fn potential(a: f64, b: f64, period: f64) -> String {
    format!("{a}*cos(2*pi*x1/{period}) + {b}*xp*sin(2*pi*x1/{period})")
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn transverse_eigenvalues_increase(width in 0.2f64..10.0, modes in 1usize..8) {
        let cs = CrossSection::new(width, modes).unwrap();
        let ev = cs.transverse_eigenvalues();
        prop_assert_eq!(ev.len(), modes);
        for (j, e) in ev.iter().enumerate() {
            let want = ((j + 1) as f64 * PI / width).powi(2);
            prop_assert!((e - want).abs() <= 1e-12 * want);
        }
        prop_assert!(ev.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn galerkin_matrix_is_hermitian(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, x1 in -3.0f64..3.0, modes in 1usize..5) {
        let cs = CrossSection::new(PI, modes).unwrap();
        let quad = TransverseQuadrature::new(&cs);
        let v = move |x: f64, xp: f64| c0 * (x * xp).cos() + c1 * xp * xp;
        let m = galerkin_project(&v, x1, &cs, &quad).unwrap();
        for r in 0..modes {
            for q in 0..modes {
                prop_assert!((m[(r, q)] - m[(q, r)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn block_positions_follow_spacings(
        a in proptest::collection::vec((0.5f64..3.0, 0.5f64..3.0), 2..5),
        s in proptest::collection::vec((1i64..6, 1i64..6), 4),
        period in 0.5f64..2.0,
    ) {
        let cs = CrossSection::new(PI, 1).unwrap();
        let zero = ScalarPotential::expression("0").unwrap();
        let blocks: Vec<Arc<PerturbationBlock>> = a
            .iter()
            .enumerate()
            .map(|(k, &(am, ap))| Arc::new(PerturbationBlock::from_potential(format!("B{k}"), "F", "F", am, ap, &zero, &cs, 0.05).unwrap()))
            .collect();
        let mut cat = BTreeMap::new();
        cat.insert("F".to_string(), background("F", "0", period, 1));
        let spacings = &s[..blocks.len() - 1];
        let asm = build_assembly(blocks.clone(), &cat, spacings).unwrap();
        prop_assert_eq!(asm.positions[0], 0.0);
        for k in 0..blocks.len() - 1 {
            let want = blocks[k + 1].a_minus + blocks[k].a_plus + (spacings[k].0 + spacings[k].1) as f64 * period;
            prop_assert!((asm.positions[k + 1] - asm.positions[k] - want).abs() <= 4.0 * f64::EPSILON * asm.positions[k + 1].abs().max(1.0));
        }
    }

    #[test]
    fn monodromy_is_unimodular_and_real(a in -3.0f64..3.0, b in -1.0f64..1.0, period in 0.5f64..2.0, lambda in -2.0f64..6.0, modes in 1usize..3) {
        let bg = background("B", &potential(a, b, period), period, modes);
        let m = monodromy(&bg, C64::new(lambda, 0.0), 2).unwrap().matrix;
        prop_assert!((m.determinant() - 1.0).norm() <= 1e-9);
        prop_assert!(m.iter().all(|z| z.im.abs() <= 1e-12 * (1.0 + z.norm())));
        // multipliers pair as rho, 1 / conj(rho)
        let ev = linalg::eigenvalues(&m).unwrap();
        for r in &ev {
            let best = ev.iter().map(|s| (r * s.conj() - 1.0).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(best <= 1e-8, "pairing error {}", best);
            let e = exponent_of(*r, period);
            prop_assert!(((C64::new(0.0, 1.0) * e * period).exp() - r).norm() <= 1e-9 * r.norm().max(1.0));
        }
    }

    #[test]
    fn band_energies_are_real_and_periodic(a in -3.0f64..3.0, b in -1.0f64..1.0, period in 0.5f64..2.0, tau in -3.0f64..3.0) {
        let bg = background("B", &potential(a, b, period), period, 2);
        let cell = FloquetCell::new(&bg, &FloquetOptions { plane_waves: 12, ..FloquetOptions::default() });
        let e0 = cell.cell_spectrum(C64::new(tau, 0.0), 4).unwrap();
        let e1 = cell.cell_spectrum(C64::new(tau + 2.0 * PI / period, 0.0), 4).unwrap();
        for (x, y) in e0.iter().zip(&e1) {
            prop_assert!(x.energy.im.abs() <= 1e-10);
            prop_assert!((x.energy - y.energy).norm() <= 1e-8 * (1.0 + x.energy.norm()));
            let norm: f64 = x.bloch_vector.iter().map(|v| v.norm_squared()).sum::<f64>() * period / bg.n_grid() as f64;
            prop_assert!((norm - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn hellmann_feynman_matches_differences(a in -2.0f64..2.0, tau in 0.1f64..2.9, p in 0usize..3) {
        let bg = background("B", &format!("{a}*cos(2*x1)"), PI, 1);
        let cell = FloquetCell::new(&bg, &FloquetOptions { plane_waves: 12, ..FloquetOptions::default() });
        let h = 1e-5;
        let e = cell.energies(tau);
        let gap = e.windows(2).take(p + 1).skip(p.saturating_sub(1)).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-2);
        let fd = (cell.energies(tau + h)[p] - cell.energies(tau - h)[p]) / (2.0 * h);
        let hf = cell.band_derivative(p, tau).unwrap();
        prop_assert!((hf - fd).abs() <= 1e-6 * hf.abs().max(1.0), "{} vs {}", hf, fd);
    }

    #[test]
    fn shift_polynomial_composes(
        re in proptest::collection::vec(-2.0f64..2.0, 1..4),
        im in proptest::collection::vec(-2.0f64..2.0, 4),
        t1 in -3.0f64..3.0,
        t2 in -3.0f64..3.0,
    ) {
        let alpha: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
        for sign in [ShiftSign::Plus, ShiftSign::Minus] {
            let twice = shift_polynomial(&shift_polynomial(&alpha, t1, sign), t2, sign);
            let once = shift_polynomial(&alpha, t1 + t2, sign);
            for (x, y) in twice.iter().zip(&once) {
                prop_assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()) * 100.0);
            }
        }
        let back = shift_polynomial(&shift_polynomial(&alpha, t1, ShiftSign::Plus), t1, ShiftSign::Minus);
        for (x, y) in back.iter().zip(&alpha) {
            prop_assert!((x - y).norm() <= 1e-10);
        }
    }
}
