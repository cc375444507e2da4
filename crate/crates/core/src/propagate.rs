//! Fixed-step RK4 for the first-order system y' = [[0, I], [V(x) - lambda, 0]] y,
//! y = (u, u'), on uniform sample grids with linear interpolation of V.

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::model::{PerturbationBlock, PeriodicBackground};

/// Integrate across `samples.len() - 1` intervals of signed width `h`.
/// `samples[j]` is the row-major M x M potential at the j-th grid point in
/// the order of integration. `record(j, y)` is called at every grid point.
pub fn integrate(
    samples: &[&[f64]],
    m: usize,
    lambda: C64,
    h: f64,
    substeps: usize,
    y: &mut CMat,
    record: &mut dyn FnMut(usize, &CMat),
) {
    let rows = 2 * m;
    debug_assert_eq!(y.nrows(), rows);
    let cols = y.ncols();
    let len = rows * cols;
    let sub = substeps.max(1);
    let dt = h / sub as f64;
    let mut k1 = vec![C64::new(0.0, 0.0); len];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let mut w0 = vec![C64::new(0.0, 0.0); m * m];
    let mut wh = w0.clone();
    let mut w1 = w0.clone();

    let rhs = |w: &[C64], src: &[C64], dst: &mut [C64]| {
        for c in 0..cols {
            let col = &src[c * rows..(c + 1) * rows];
            let out = &mut dst[c * rows..(c + 1) * rows];
            for r in 0..m {
                out[r] = col[m + r];
                let mut acc = C64::new(0.0, 0.0);
                for q in 0..m {
                    acc += w[r * m + q] * col[q];
                }
                out[m + r] = acc;
            }
        }
    };
    let fill = |a: &[f64], b: &[f64], s: f64, w: &mut [C64]| {
        for r in 0..m {
            for q in 0..m {
                let v = a[r * m + q] * (1.0 - s) + b[r * m + q] * s;
                w[r * m + q] = if r == q { C64::new(v, 0.0) - lambda } else { C64::new(v, 0.0) };
            }
        }
    };

    record(0, y);
    for j in 0..samples.len().saturating_sub(1) {
        let (a, b) = (samples[j], samples[j + 1]);
        for s in 0..sub {
            let f0 = s as f64 / sub as f64;
            let f1 = (s + 1) as f64 / sub as f64;
            fill(a, b, f0, &mut w0);
            fill(a, b, 0.5 * (f0 + f1), &mut wh);
            fill(a, b, f1, &mut w1);
            let ys = y.as_mut_slice();
            rhs(&w0, ys, &mut k1);
            for i in 0..len {
                tmp[i] = ys[i] + k1[i] * (0.5 * dt);
            }
            rhs(&wh, &tmp, &mut k2);
            for i in 0..len {
                tmp[i] = ys[i] + k2[i] * (0.5 * dt);
            }
            rhs(&wh, &tmp, &mut k3);
            for i in 0..len {
                tmp[i] = ys[i] + k3[i] * dt;
            }
            rhs(&w1, &tmp, &mut k4);
            for i in 0..len {
                ys[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        record(j + 1, y);
    }
}

/// Cell samples of a background from xi = 0 to xi = T inclusive.
pub fn cell_samples(bg: &PeriodicBackground) -> Vec<&[f64]> {
    (0..=bg.n_grid() as i64).map(|j| bg.sample(j)).collect()
}

/// Propagate `y` one period forward through the background cell.
pub fn propagate_cell(bg: &PeriodicBackground, lambda: C64, y: &mut CMat, substeps: usize) {
    let s = cell_samples(bg);
    integrate(&s, bg.modes(), lambda, bg.step(), substeps, y, &mut |_, _| {});
}

/// Propagate one period forward, recording the state at every cell grid point.
pub fn propagate_cell_recorded(bg: &PeriodicBackground, lambda: C64, y0: &CMat, substeps: usize) -> Vec<CMat> {
    let s = cell_samples(bg);
    let mut y = y0.clone();
    let mut out = Vec::with_capacity(s.len());
    integrate(&s, bg.modes(), lambda, bg.step(), substeps, &mut y, &mut |_, st| out.push(st.clone()));
    out
}

/// Monodromy matrix over one period. Fails if the entries exceed 1e12.
pub fn monodromy_matrix(bg: &PeriodicBackground, lambda: C64, substeps: usize) -> Result<CMat> {
    let n = 2 * bg.modes();
    let mut y = CMat::identity(n, n);
    propagate_cell(bg, lambda, &mut y, substeps);
    let norm = y.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if !norm.is_finite() || norm > 1e12 {
        return Err(Error::Overflow(format!(
            "monodromy of background {} has norm {norm:.3e}",
            bg.id
        )));
    }
    Ok(y)
}

/// Core samples between grid indices `from` and `to` (either direction).
pub fn core_samples(block: &PerturbationBlock, from: usize, to: usize) -> Vec<&[f64]> {
    if from <= to {
        (from..=to).map(|j| block.core.raw(j)).collect()
    } else {
        (to..=from).rev().map(|j| block.core.raw(j)).collect()
    }
}

/// Propagate `y` across the core from grid index `from` to `to`, recording
/// (grid index, state) pairs if `record` is given.
pub fn propagate_core(
    block: &PerturbationBlock,
    lambda: C64,
    y: &mut CMat,
    from: usize,
    to: usize,
    substeps: usize,
    record: Option<&mut Vec<(usize, CMat)>>,
) {
    let s = core_samples(block, from, to);
    let h = if to >= from { block.step() } else { -block.step() };
    match record {
        Some(rec) => {
            let idx = |j: usize| if to >= from { from + j } else { from - j };
            integrate(&s, block.modes(), lambda, h, substeps, y, &mut |j, st| rec.push((idx(j), st.clone())));
        }
        None => integrate(&s, block.modes(), lambda, h, substeps, y, &mut |_, _| {}),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrossSection, ScalarPotential};
    use std::f64::consts::PI;

    fn bg(expr: &str, t: f64, m: usize, n: usize) -> PeriodicBackground {
        let cs = CrossSection::new(PI, m).unwrap();
        PeriodicBackground::from_potential("B", t, &ScalarPotential::expression(expr).unwrap(), &cs, n).unwrap()
    }

    #[test]
    fn free_monodromy_matches_exponential() {
        let b = bg("0", PI, 1, 256);
        let m = monodromy_matrix(&b, C64::new(0.75, 0.0), 2).unwrap();
        // u'' = 0.25 u
        let k: f64 = 0.5;
        let x = PI;
        let want = [[(k * x).cosh(), (k * x).sinh() / k], [k * (k * x).sinh(), (k * x).cosh()]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((m[(r, c)].re - want[r][c]).abs() < 1e-9, "{r}{c}");
                assert!(m[(r, c)].im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn determinant_is_one() {
        let b = bg("3*cos(2*x1) + sin(x1)^3", PI, 2, 128);
        let m = monodromy_matrix(&b, C64::new(2.3, -0.4), 2).unwrap();
        assert!((m.determinant() - C64::new(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn recorded_cell_ends_at_monodromy() {
        let b = bg("cos(2*x1)", PI, 1, 64);
        let lam = C64::new(0.4, 0.1);
        let rec = propagate_cell_recorded(&b, lam, &CMat::identity(2, 2), 2);
        let m = monodromy_matrix(&b, lam, 2).unwrap();
        assert_eq!(rec.len(), 65);
        assert!((rec.last().unwrap() - m).norm() < 1e-14);
    }

    #[test]
    fn backward_core_inverts_forward() {
        let cs = CrossSection::new(PI, 1).unwrap();
        let blk = PerturbationBlock::from_potential(
            "W", "B", "B", 1.0, 1.0, &ScalarPotential::expression("-2*exp(-x1^2)").unwrap(), &cs, 0.01,
        )
        .unwrap();
        let lam = C64::new(0.3, 0.0);
        let mut y = CMat::identity(2, 2);
        let n = blk.intervals();
        propagate_core(&blk, lam, &mut y, 0, n, 2, None);
        propagate_core(&blk, lam, &mut y, n, 0, 2, None);
        assert!((y - CMat::identity(2, 2)).norm() < 1e-9);
    }
}
