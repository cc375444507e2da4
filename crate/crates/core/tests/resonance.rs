use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use stripres::bound_states::{BoundStateOptions, MatchingProblem, Side};
use stripres::model::{build_assembly, CrossSection, GluedAssembly, PerturbationBlock, PeriodicBackground, ScalarPotential};
use stripres::resonance::{DirectSolver, ResonanceOptions};
use stripres::C64;

fn bg(id: &str, expr: &str, modes: usize) -> Arc<PeriodicBackground> {
    let cs = CrossSection::new(PI, modes).unwrap();
    Arc::new(PeriodicBackground::from_potential(id, 1.0, &ScalarPotential::expression(expr).unwrap(), &cs, 64).unwrap())
}

fn block(id: &str, expr: &str, a: f64, modes: usize) -> Arc<PerturbationBlock> {
    let cs = CrossSection::new(PI, modes).unwrap();
    Arc::new(PerturbationBlock::from_potential(id, "F", "F", a, a, &ScalarPotential::expression(expr).unwrap(), &cs, 0.005).unwrap())
}

fn assembly(blocks: Vec<Arc<PerturbationBlock>>, spacings: &[(i64, i64)], bgexpr: &str, modes: usize) -> GluedAssembly {
    let mut cat = BTreeMap::new();
    cat.insert("F".to_string(), bg("F", bgexpr, modes));
    build_assembly(blocks, &cat, spacings).unwrap()
}

#[test]
fn unperturbed_line_has_no_roots() {
    let a = assembly(vec![block("Z", "0", 1.0, 1)], &[], "0", 1);
    let s = DirectSolver::new(a, 0.5, ResonanceOptions::default()).unwrap();
    let c = s.winding(C64::new(0.5, 0.0), 0.2).unwrap();
    assert_eq!(c.count, 0);
    let low = c.values.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let (mid, _) = s.scattering_determinant(C64::new(0.5, 0.0)).unwrap();
    assert!(low > -5.0 && mid > -5.0, "{low} {mid}");
}

#[test]
fn single_block_root_matches_bound_state() {
    let blk = block("W", "-3*exp(-2*x1^2)", 3.0, 1);
    let free = bg("F", "0", 1);
    let p = MatchingProblem::new(blk.clone(), free.clone(), free, 0.0, BoundStateOptions::default()).unwrap();
    let e0 = p.discrete_eigenvalues((-1.9, 0.99), None).unwrap()[0].eigenvalue;
    let a = assembly(vec![blk], &[], "0", 1);
    let s = DirectSolver::new(a, e0, ResonanceOptions::default()).unwrap();
    let r = s.locate_resonances(e0, 0.05, &[], 1).unwrap();
    assert_eq!(r.contour_count, 1);
    let z = r.located[0].value;
    assert!((z - e0).norm() < 1e-8, "{z} vs {e0}");
}

#[test]
fn determinant_is_holomorphic() {
    let a = assembly(vec![block("W", "-3*exp(-2*x1^2)", 3.0, 1), block("W", "-3*exp(-2*x1^2)", 3.0, 1)], &[(2, 2)], "0", 1);
    let s = DirectSolver::new(a, 0.2, ResonanceOptions::default()).unwrap();
    let h = 1e-5;
    for k in 0..5 {
        let z = C64::new(0.2 + 0.01 * k as f64, -0.005 + 0.003 * k as f64);
        let eval = |w: C64| {
            let (l, p) = s.scattering_determinant(w).unwrap();
            C64::from_polar(l.exp(), p)
        };
        let dx = (eval(z + h) - eval(z - h)) / (2.0 * h);
        let dy = (eval(z + C64::new(0.0, h)) - eval(z - C64::new(0.0, h))) / (2.0 * h);
        let dz = 0.5 * (dx - C64::new(0.0, 1.0) * dy);
        let dzbar = 0.5 * (dx + C64::new(0.0, 1.0) * dy);
        assert!(dzbar.norm() / dz.norm() <= 1e-4, "{}", dzbar.norm() / dz.norm());
    }
}

#[test]
fn radiation_basis_mode_counts() {
    // free strip with two modes at lambda in (1, 4): one open channel
    let a = assembly(vec![block("Z", "0", 1.0, 2)], &[], "0", 2);
    let s = DirectSolver::new(a, 2.0, ResonanceOptions::default()).unwrap();
    for side in [Side::Left, Side::Right] {
        let b = s.radiation_basis(side, C64::new(2.0, 0.0)).unwrap();
        assert_eq!((b.outgoing, b.decaying), (1, 1));
        assert!(b.condition <= 1e8);
    }
    // gapped end: no outgoing columns
    let a = assembly(vec![block("Z", "0", 1.0, 1)], &[], "0", 1);
    let s = DirectSolver::new(a, 0.5, ResonanceOptions::default()).unwrap();
    let b = s.radiation_basis(Side::Right, C64::new(0.5, 0.0)).unwrap();
    assert_eq!((b.outgoing, b.decaying), (0, 1));
}

#[test]
fn outgoing_wave_moves_away() {
    // M = 1 free, lambda0 = 2: the right outgoing wave is e^{i k x} with k = +1
    let a = assembly(vec![block("Z", "0", 1.0, 1)], &[], "0", 1);
    let s = DirectSolver::new(a, 2.0, ResonanceOptions::default()).unwrap();
    let b = s.radiation_basis(Side::Right, C64::new(2.0, 0.0)).unwrap();
    let ratio = b.vectors[(1, 0)] / b.vectors[(0, 0)];
    assert!((ratio - C64::new(0.0, 1.0)).norm() < 1e-8, "{ratio}");
    let b = s.radiation_basis(Side::Left, C64::new(2.0, 0.0)).unwrap();
    let ratio = b.vectors[(1, 0)] / b.vectors[(0, 0)];
    assert!((ratio - C64::new(0.0, -1.0)).norm() < 1e-8, "{ratio}");
}

#[test]
fn root_positions_ignore_column_scaling() {
    let blk = block("W", "-3*exp(-2*x1^2)", 3.0, 1);
    let a = assembly(vec![blk.clone(), blk], &[(2, 2)], "0", 1);
    let mut s = DirectSolver::new(a, 0.0, ResonanceOptions::default()).unwrap();
    let free = bg("F", "0", 1);
    let p = MatchingProblem::new(s.assembly.blocks[0].clone(), free.clone(), free, 0.0, BoundStateOptions::default()).unwrap();
    let e0 = p.discrete_eigenvalues((-1.9, 0.99), None).unwrap()[0].eigenvalue;
    let r0 = s.locate_resonances(e0, 0.05, &[], 2).unwrap();
    s.column_scales = (vec![C64::new(-2.5, 0.7)], vec![C64::new(0.1, -3.0)]);
    let r1 = s.locate_resonances(e0, 0.05, &[], 2).unwrap();
    assert_eq!(r0.contour_count, 2);
    assert_eq!(r0.located.len(), r1.located.len());
    for (x, y) in r0.located.iter().zip(&r1.located) {
        assert!((x.value - y.value).norm() < 1e-10);
        assert!(x.value.im.abs() < 1e-10, "{} {}", x.value, y.value);
    }
    // symmetric splitting about the single-well level
    let (lo, hi) = (r0.located[0].value.re, r0.located[1].value.re);
    let mid = 0.5 * (lo + hi);
    assert!(lo < e0 && hi > e0);
    assert!((mid - e0).abs() < 0.05 * (hi - lo));
}
