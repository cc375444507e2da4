//! Predicted resonances from the interaction matrix and the direct solver:
//! a scattering determinant built from radiation bases at both ends, root
//! counting by the argument principle and Newton refinement.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bound_states::Side;
use crate::error::{Error, Result};
use crate::floquet::{BandCrossing, Direction, FloquetCell, FloquetOptions};
use crate::interaction::InteractionMatrix;
use crate::linalg::{self, CMat, SpectralBlocks, C64, I};
use crate::model::{GluedAssembly, PeriodicBackground};
use crate::propagate::{monodromy_matrix, propagate_core};

#[derive(Debug, Clone)]
pub struct ResonanceOptions {
    pub substeps: usize,
    /// Disc radius constant c in max(c eta, 3 max |Lambda|).
    pub radius_factor: f64,
    pub min_points: usize,
    pub max_points: usize,
    /// Largest allowed phase increment between contour samples.
    pub max_increment: f64,
    pub newton_tol: f64,
    pub newton_iterations: usize,
    pub retries: usize,
    pub shrink: f64,
    pub floquet: FloquetOptions,
}

impl Default for ResonanceOptions {
    fn default() -> Self {
        ResonanceOptions {
            substeps: 2,
            radius_factor: 8.0,
            min_points: 64,
            max_points: 8192,
            max_increment: 0.5 * PI,
            newton_tol: 1e-13,
            newton_iterations: 60,
            retries: 3,
            shrink: 0.8,
            floquet: FloquetOptions::default(),
        }
    }
}

/// Prediction lambda0 + Lambda_j with its cluster and error-bar scale.
#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    #[serde(serialize_with = "crate::output::ser_c64")]
    pub value: C64,
    pub cluster: usize,
    pub remainder: f64,
}

pub fn predicted_resonances(matrix: &InteractionMatrix, lambda0: f64) -> Vec<Prediction> {
    let remainder = matrix.scales.remainder(matrix.size);
    let mut out = Vec::with_capacity(matrix.size);
    for (j, ev) in matrix.eigenvalues.iter().enumerate() {
        let cluster = matrix.clusters.iter().position(|c| c.contains(&j)).unwrap_or(0);
        out.push(Prediction { value: C64::new(lambda0, 0.0) + ev, cluster, remainder });
    }
    out
}

/// Outgoing and decaying solutions admitted at one end of the assembly.
#[derive(Debug, Clone)]
pub struct RadiationBasis {
    pub side: Side,
    pub lambda: C64,
    /// 2M x M initial data at the end cross-section.
    pub vectors: CMat,
    pub outgoing: usize,
    pub decaying: usize,
    pub condition: f64,
}

/// Static data of one end: outgoing crossings at lambda0 and strip bound.
#[derive(Debug, Clone)]
pub struct EndData {
    pub side: Side,
    pub background: Arc<PeriodicBackground>,
    pub cell: Arc<FloquetCell>,
    pub outgoing: Vec<BandCrossing>,
    /// |gamma_+-|: decaying columns have |Im r| above this.
    pub gamma: f64,
    reference: CMat,
}

impl EndData {
    pub fn new(bg: Arc<PeriodicBackground>, side: Side, lambda0: f64, opts: &ResonanceOptions) -> Result<Self> {
        let cell = Arc::new(FloquetCell::new(&bg, &opts.floquet));
        let want = match side {
            Side::Right => Direction::Plus,
            Side::Left => Direction::Minus,
        };
        let outgoing: Vec<BandCrossing> =
            cell.classify_directions(&bg, lambda0)?.into_iter().filter(|c| c.direction == want).collect();
        let mono = monodromy_matrix(&bg, C64::new(lambda0, 0.0), opts.substeps)?;
        let mhat = linalg::eigenvalues(&mono)?
            .iter()
            .map(|r| r.norm().ln().abs() / bg.period)
            .filter(|&x| x > 1e-6)
            .fold(f64::INFINITY, f64::min);
        let gamma = if mhat.is_finite() { mhat / 2f64.sqrt() } else { 1.0 };
        let mut end = EndData { side, background: bg, cell, outgoing, gamma, reference: CMat::zeros(0, 0) };
        let raw = end.raw_basis(C64::new(lambda0, 0.0), opts.substeps)?;
        end.reference = linalg::orthonormalize(&raw.0);
        Ok(end)
    }

    fn raw_basis(&self, lambda: C64, substeps: usize) -> Result<(CMat, usize, usize)> {
        let bg = &self.background;
        let m = bg.modes();
        let mono = monodromy_matrix(bg, lambda, substeps)?;
        let sb = SpectralBlocks::new(&mono, 1e-6)?;
        let mut used = vec![false; sb.clusters.len()];
        let mut cols: Vec<CMat> = Vec::new();
        let mut outgoing = 0;
        for c in &self.outgoing {
            let t = self.cell.quasimomentum_continue(c, lambda).map_err(|e| Error::ContinuationFailure(e.to_string()))?;
            let rho = (I * t * bg.period).exp();
            let (best, dist) = sb
                .clusters
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, cl)| (i, (cl.mean - rho).norm()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .ok_or_else(|| Error::ContinuationFailure("no multiplier left for an outgoing wave".into()))?;
            if dist > 1e-2 {
                return Err(Error::ContinuationFailure(format!(
                    "continued multiplier {rho} has no monodromy partner (distance {dist:.2e})"
                )));
            }
            used[best] = true;
            outgoing += sb.clusters[best].basis.ncols();
            cols.push(sb.clusters[best].basis.clone());
        }
        let bound = (self.gamma * bg.period).exp();
        let mut decaying = 0;
        for (i, cl) in sb.clusters.iter().enumerate() {
            let r = cl.mean.norm();
            let take = match self.side {
                Side::Right => r < 1.0 / bound,
                Side::Left => r > bound,
            };
            if take && !used[i] {
                decaying += cl.basis.ncols();
                cols.push(cl.basis.clone());
            }
        }
        if outgoing + decaying != m {
            return Err(Error::Numerical(format!(
                "radiation basis of background {} at lambda = {lambda} has {} columns instead of {m}",
                bg.id,
                outgoing + decaying
            )));
        }
        let mut b = CMat::zeros(2 * m, m);
        let mut at = 0;
        for c in cols {
            b.view_mut((0, at), (2 * m, c.ncols())).copy_from(&c);
            at += c.ncols();
        }
        Ok((b, outgoing, decaying))
    }

    /// Radiation basis in the holomorphic gauge B (R^H B)^{-1}.
    pub fn radiation_basis(&self, lambda: C64, substeps: usize) -> Result<RadiationBasis> {
        let (b, outgoing, decaying) = self.raw_basis(lambda, substeps)?;
        let g = linalg::inverse(&(self.reference.adjoint() * &b))?;
        let vectors = b * g;
        let condition = linalg::condition_number(&vectors);
        Ok(RadiationBasis { side: self.side, lambda, vectors, outgoing, decaying, condition })
    }
}

/// Scattering determinant of a glued assembly.
#[derive(Debug, Clone)]
pub struct DirectSolver {
    pub assembly: GluedAssembly,
    pub lambda0: f64,
    pub left: EndData,
    pub right: EndData,
    pub opts: ResonanceOptions,
    /// Constant rescaling of the left and right basis columns.
    pub column_scales: (Vec<C64>, Vec<C64>),
}

impl DirectSolver {
    pub fn new(assembly: GluedAssembly, lambda0: f64, opts: ResonanceOptions) -> Result<Self> {
        let n = assembly.n();
        let left = EndData::new(assembly.backgrounds[0].clone(), Side::Left, lambda0, &opts)?;
        let right = EndData::new(assembly.backgrounds[n].clone(), Side::Right, lambda0, &opts)?;
        let m = assembly.modes();
        Ok(DirectSolver {
            assembly,
            lambda0,
            left,
            right,
            opts,
            column_scales: (vec![C64::new(1.0, 0.0); m], vec![C64::new(1.0, 0.0); m]),
        })
    }

    pub fn radiation_basis(&self, side: Side, lambda: C64) -> Result<RadiationBasis> {
        match side {
            Side::Left => self.left.radiation_basis(lambda, self.opts.substeps),
            Side::Right => self.right.radiation_basis(lambda, self.opts.substeps),
        }
    }

    /// log D(lambda) as (log |D|, arg D).
    pub fn scattering_determinant(&self, lambda: C64) -> Result<(f64, f64)> {
        let z = self.log_det(lambda)?;
        Ok((z.re, wrap(z.im)))
    }

    fn log_det(&self, lambda: C64) -> Result<C64> {
        let a = &self.assembly;
        let n = a.n();
        let s = self.opts.substeps;
        let mut y = self.right.radiation_basis(lambda, s)?.vectors;
        for (c, z) in self.column_scales.1.iter().enumerate() {
            let col = y.column(c) * *z;
            y.set_column(c, &col);
        }
        let mut acc = C64::new(0.0, 0.0);
        for k in (0..n).rev() {
            let blk = &a.blocks[k];
            propagate_core(blk, lambda, &mut y, blk.intervals(), 0, s, None);
            let (q, ld) = linalg::qr_normalize(&y);
            y = q;
            acc += ld;
            if k > 0 {
                let bg = &a.backgrounds[k];
                let (lm, lp) = a.spacings[k - 1];
                let mono = monodromy_matrix(bg, lambda, s)?;
                let sb = SpectralBlocks::new(&mono, 1e-6)?;
                y = sb.apply_power(&y, -((lm + lp) as i64))?;
                let (q, ld) = linalg::qr_normalize(&y);
                y = q;
                acc += ld;
            }
        }
        let mut bl = self.left.radiation_basis(lambda, s)?.vectors;
        for (c, z) in self.column_scales.0.iter().enumerate() {
            let col = bl.column(c) * *z;
            bl.set_column(c, &col);
        }
        let m = a.modes();
        let mut w = CMat::zeros(2 * m, 2 * m);
        w.view_mut((0, 0), (2 * m, m)).copy_from(&bl);
        w.view_mut((0, m), (2 * m, m)).copy_from(&y);
        let z = linalg::log_det(&w) + acc;
        if !z.re.is_finite() {
            return Err(Error::Overflow(format!("scattering determinant not finite at lambda = {lambda}")));
        }
        Ok(z)
    }

    /// Log-derivative D'/D by central differences.
    pub fn log_derivative(&self, lambda: C64, h: f64) -> Result<C64> {
        let a = self.log_det(lambda + h)?;
        let b = self.log_det(lambda - h)?;
        let d = C64::new(a.re - b.re, wrap(a.im - b.im));
        Ok(d / (2.0 * h))
    }

    /// Total phase change of D around the circle, sampled adaptively.
    pub fn winding(&self, center: C64, radius: f64) -> Result<Contour> {
        let mut k = self.opts.min_points.max(8);
        loop {
            let pts: Vec<C64> = (0..k).map(|j| center + radius * (I * (2.0 * PI * j as f64 / k as f64)).exp()).collect();
            let vals: Vec<C64> = pts.par_iter().map(|&z| self.log_det(z)).collect::<Result<_>>()?;
            let incs: Vec<f64> = (0..k).map(|j| wrap(vals[(j + 1) % k].im - vals[j].im)).collect();
            let worst = incs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if worst < self.opts.max_increment {
                let total: f64 = incs.iter().sum();
                let count = (total / (2.0 * PI)).round();
                if (total / (2.0 * PI) - count).abs() > 0.1 {
                    return Err(Error::WindingUnstable { radius });
                }
                return Ok(Contour { center, radius, points: pts, values: vals, count: count as i64 });
            }
            if 2 * k > self.opts.max_points {
                return Err(Error::WindingUnstable { radius });
            }
            k *= 2;
        }
    }

    /// Newton on D with a multiplicity-aware step. The derivative is taken by
    /// central differences of D / D(z), which stays regular across the root.
    pub fn newton(&self, start: C64, multiplicity: usize, scale: f64) -> Result<C64> {
        let mut z = start;
        let h = (1e-6 * scale).max(1e-13);
        for _ in 0..self.opts.newton_iterations {
            let l0 = self.log_det(z)?;
            let rp = (self.log_det(z + h)? - l0).exp();
            let rm = (self.log_det(z - h)? - l0).exp();
            let step = multiplicity.max(1) as f64 * 2.0 * h / (rp - rm);
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            let step = if step.norm() > scale { step * (scale / step.norm()) } else { step };
            z -= step;
            if step.norm() <= self.opts.newton_tol * (1.0 + z.norm()) {
                break;
            }
        }
        Ok(z)
    }

    /// Count, locate and refine the roots of D inside the disc. The radius is
    /// shrunk by the configured factor if the winding is not resolvable.
    pub fn locate_resonances(&self, center: f64, radius: f64, predicted: &[Prediction], max_count: usize) -> Result<ResonanceResult> {
        let mut r = radius;
        let mut last = None;
        for attempt in 0..=self.opts.retries {
            match self.locate_in(center, r, predicted, max_count) {
                Ok(res) => return Ok(res),
                Err(Error::WindingUnstable { radius }) => {
                    log::warn!("winding not resolvable at radius {radius:.3e} (attempt {})", attempt + 1);
                    last = Some(Error::WindingUnstable { radius });
                    r *= self.opts.shrink;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or(Error::WindingUnstable { radius: r }))
    }

    fn locate_in(&self, center: f64, radius: f64, predicted: &[Prediction], max_count: usize) -> Result<ResonanceResult> {
        let c0 = C64::new(center, 0.0);
        let contour = self.winding(c0, radius)?;
        if contour.count < 0 {
            return Err(Error::Numerical(format!("negative winding number {} around lambda0", contour.count)));
        }
        let count = contour.count as usize;
        let mut roots: Vec<C64> = Vec::new();
        if count > 0 {
            let guesses = contour.moment_roots(count);
            for g in guesses {
                let z = self.newton(g, 1, 0.25 * radius)?;
                roots.push(z);
            }
        }
        // merge roots that converged to the same point and recover multiplicities
        let mut located: Vec<Root> = Vec::new();
        let merge = 1e-6 * radius;
        for z in roots {
            if let Some(r) = located.iter_mut().find(|r| (r.value - z).norm() < merge) {
                r.multiplicity += 1;
            } else {
                located.push(Root { value: z, multiplicity: 1, residual: f64::NAN });
            }
        }
        let copy: Vec<C64> = located.iter().map(|r| r.value).collect();
        for r in located.iter_mut() {
            let sep = copy
                .iter()
                .filter(|z| (**z - r.value).norm() > 0.0)
                .map(|z| (*z - r.value).norm())
                .fold(radius, f64::min);
            let small = (0.3 * sep).min(0.1 * radius);
            let inner = self.winding(r.value, small)?;
            if inner.count >= 1 {
                r.multiplicity = inner.count as usize;
            }
            if r.multiplicity > 1 {
                r.value = self.newton(r.value, r.multiplicity, small)?;
            }
        }
        located.retain(|r| (r.value - c0).norm() <= radius);
        let total: usize = located.iter().map(|r| r.multiplicity).sum();
        if total != count {
            log::warn!("located multiplicities sum to {total}, winding gives {count}");
        }
        if count > max_count {
            return Err(Error::Numerical(format!("{count} roots inside the disc exceed the bound N = {max_count}")));
        }
        for r in located.iter_mut() {
            r.residual = predicted.iter().map(|p| (r.value - p.value).norm()).fold(f64::INFINITY, f64::min);
        }
        located.sort_by(|a, b| a.value.re.partial_cmp(&b.value.re).unwrap().then(a.value.im.partial_cmp(&b.value.im).unwrap()));
        Ok(ResonanceResult {
            predicted: predicted.to_vec(),
            located,
            contour_count: count,
            radius,
            contour_points: contour.points.len(),
        })
    }
}

/// Disc radius max(c eta, 3 max |Lambda|).
pub fn disc_radius(matrix: &InteractionMatrix, factor: f64) -> f64 {
    let lam = matrix.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    (factor * matrix.scales.eta).max(3.0 * lam)
}

fn wrap(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

#[derive(Debug, Clone)]
pub struct Contour {
    pub center: C64,
    pub radius: f64,
    pub points: Vec<C64>,
    /// log D at the points.
    pub values: Vec<C64>,
    pub count: i64,
}

impl Contour {
    /// Roots from the contour moments s_p = (1 / 2 pi i) sum z^p d log D,
    /// relative to the centre, via Newton identities and a companion matrix.
    pub fn moment_roots(&self, count: usize) -> Vec<C64> {
        let k = self.points.len();
        let mut s = vec![C64::new(0.0, 0.0); count + 1];
        let mut prev = self.values[0];
        let mut phase = self.values[0].im;
        let mut unwrapped = Vec::with_capacity(k + 1);
        unwrapped.push(C64::new(prev.re, phase));
        for j in 1..=k {
            let v = self.values[j % k];
            phase += wrap(v.im - prev.im);
            prev = v;
            unwrapped.push(C64::new(v.re, phase));
        }
        for j in 0..k {
            let z0 = self.points[j] - self.center;
            let z1 = self.points[(j + 1) % k] - self.center;
            let zm = 0.5 * (z0 + z1);
            let dlog = unwrapped[j + 1] - unwrapped[j];
            let mut zp = C64::new(1.0, 0.0);
            for p in s.iter_mut() {
                *p += zp * dlog;
                zp *= zm;
            }
        }
        let scale = C64::new(0.0, 2.0 * PI);
        for p in s.iter_mut() {
            *p /= scale;
        }
        // Newton identities: e_1 .. e_count from power sums s_1 .. s_count
        let mut e = vec![C64::new(0.0, 0.0); count + 1];
        e[0] = C64::new(1.0, 0.0);
        for m in 1..=count {
            let mut acc = C64::new(0.0, 0.0);
            for i in 1..=m {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                acc += e[m - i] * s[i] * sign;
            }
            e[m] = acc / m as f64;
        }
        // z^count - e1 z^{count-1} + e2 z^{count-2} - ...
        let mut comp = CMat::zeros(count, count);
        for i in 0..count {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            comp[(0, i)] = e[i + 1] * sign;
            if i + 1 < count {
                comp[(i + 1, i)] = C64::new(1.0, 0.0);
            }
        }
        let roots = if count == 1 { vec![comp[(0, 0)]] } else { linalg::eigenvalues(&comp).unwrap_or_default() };
        roots.into_iter().map(|z| z + self.center).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Root {
    #[serde(serialize_with = "crate::output::ser_c64")]
    pub value: C64,
    pub multiplicity: usize,
    /// Distance to the nearest prediction.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceResult {
    pub predicted: Vec<Prediction>,
    pub located: Vec<Root>,
    pub contour_count: usize,
    /// Effective disc radius after any shrinking.
    pub radius: f64,
    pub contour_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    /// Coefficient of <l>.
    pub slope: f64,
    /// Coefficient of log ||l||.
    pub exponent: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares fit log |delta| = c + slope <l> + exponent log ||l||.
/// Input triples (<l>, ||l||, |lambda_l - lambda0|).
pub fn rate_fit(series: &[(f64, f64, f64)]) -> Result<RateFit> {
    if series.len() < 3 {
        return Err(Error::InsufficientData(format!("rate fit needs at least 3 spacings, got {}", series.len())));
    }
    if series.iter().any(|&(a, b, d)| !(a > 0.0 && b > 0.0 && d > 0.0 && d.is_finite())) {
        return Err(Error::InsufficientData("rate fit needs positive spacings and shifts".into()));
    }
    let first = series[0].2;
    if series.iter().all(|&(_, _, d)| (d - first).abs() <= 1e-12 * first) {
        return Err(Error::InsufficientData("shift series is constant".into()));
    }
    let n = series.len();
    let a = nalgebra::DMatrix::<f64>::from_fn(n, 3, |r, c| match c {
        0 => 1.0,
        1 => series[r].0,
        _ => series[r].1.ln(),
    });
    let b = nalgebra::DVector::<f64>::from_iterator(n, series.iter().map(|s| s.2.ln()));
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-10 * smax {
        return Err(Error::InsufficientData("spacing series gives a degenerate design".into()));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(RateFit { slope: x[1], exponent: x[2], intercept: x[0], points: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_fit_recovers_generator() {
        let s: Vec<(f64, f64, f64)> = [4.0f64, 6.0, 8.0, 10.0, 12.0].iter().map(|&l| (l, l, l * (-0.5 * l).exp())).collect();
        let f = rate_fit(&s).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-3);
        assert!((f.exponent - 1.0).abs() < 0.05);
    }

    #[test]
    fn rate_fit_rejects_bad_series() {
        assert!(matches!(rate_fit(&[(1.0, 1.0, 0.1), (2.0, 2.0, 0.01)]), Err(Error::InsufficientData(_))));
        let c = [(2.0, 2.0, 0.3), (3.0, 3.0, 0.3), (4.0, 4.0, 0.3)];
        assert!(matches!(rate_fit(&c), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn moments_recover_polynomial_roots() {
        let roots = [C64::new(0.1, -0.05), C64::new(-0.2, 0.02), C64::new(0.05, 0.15)];
        let center = C64::new(1.0, 0.0);
        let k = 256;
        let points: Vec<C64> = (0..k).map(|j| center + 0.5 * (I * (2.0 * PI * j as f64 / k as f64)).exp()).collect();
        let values: Vec<C64> = points.iter().map(|z| roots.iter().map(|r| (z - center - r).ln()).sum()).collect();
        let c = Contour { center, radius: 0.5, points, values, count: 3 };
        let mut got = c.moment_roots(3);
        got.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        let mut want: Vec<C64> = roots.iter().map(|r| r + center).collect();
        want.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() < 1e-3, "{g} {w}");
        }
    }

    #[test]
    fn wrap_range() {
        assert!((wrap(3.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert!((wrap(-PI) - PI).abs() < 1e-12);
    }
}
