//! Band structure of periodic backgrounds.
//!
//! The quasi-periodic cell problem is solved in a plane-wave basis
//! e^{i(tau + 2 pi g / T) x}, |g| <= G, using the exact Fourier coefficients
//! of the piecewise-linear interpolant of the cell samples.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64};
use crate::model::PeriodicBackground;
use crate::propagate::monodromy_matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetOptions {
    /// Plane-wave cutoff G (basis size M (2G + 1)).
    pub plane_waves: usize,
    /// Eigenvalues closer than this are treated as degenerate.
    pub degeneracy_floor: f64,
    /// |dE/dtau| below this is treated as a band edge.
    pub derivative_floor: f64,
    /// Largest |lambda - lambda0| accepted by quasimomentum continuation.
    pub continuation_radius: f64,
    /// Step length of the straight continuation path.
    pub path_step: f64,
    /// Distance to a band edge below which lambda0 counts as at the edge.
    pub band_margin: f64,
    /// Points of the coarse tau scan over the Brillouin zone.
    pub tau_points: usize,
    /// RK4 substeps per cell sample interval for monodromy evaluations.
    pub substeps: usize,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            plane_waves: 32,
            degeneracy_floor: 1e-8,
            derivative_floor: 1e-6,
            continuation_radius: 0.5,
            path_step: 0.02,
            band_margin: 1e-6,
            tau_points: 257,
            substeps: 2,
        }
    }
}

/// Plane-wave representation of one background cell.
#[derive(Debug, Clone)]
pub struct FloquetCell {
    pub id: String,
    pub period: f64,
    pub modes: usize,
    pub cutoff: usize,
    n_grid: usize,
    /// coeff[d + 2G] is the M x M Fourier coefficient with index d in [-2G, 2G].
    coeff: Vec<CMat>,
    opts: FloquetOptions,
}

/// Eigenpair of the cell problem: energy and periodic Bloch part on the cell grid.
#[derive(Debug, Clone)]
pub struct FloquetMode {
    pub background: String,
    pub band: usize,
    pub tau: C64,
    pub energy: C64,
    /// Periodic part at xi_j, j = 0..n_grid-1, component-major per point.
    pub bloch_vector: Vec<CVec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandCrossing {
    pub background: String,
    pub band: usize,
    pub lambda0: f64,
    pub tau: f64,
    pub derivative: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Location {
    Inside,
    Gap,
    Edge,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackgroundBands {
    pub id: String,
    /// [min, max] of every band that reaches the window.
    pub bands: Vec<(f64, f64)>,
    pub location: Option<Location>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EssentialSpectrum {
    pub window: (f64, f64),
    pub intervals: Vec<(f64, f64)>,
    pub per_background: Vec<BackgroundBands>,
}

impl EssentialSpectrum {
    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }

    /// Distance from x to the nearest interval endpoint.
    pub fn distance_to_edge(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|e| e.is_finite())
            .map(|e| (e - x).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Reduce Re tau into (-pi/T, pi/T]; returns the reduced value and the shift q.
pub fn reduce_tau(tau: C64, period: f64) -> (C64, i64) {
    let k = 2.0 * PI / period;
    let mut q = (tau.re / k).round() as i64;
    let mut r = tau.re - q as f64 * k;
    if r <= -PI / period {
        r += k;
        q -= 1;
    } else if r > PI / period {
        r -= k;
        q += 1;
    }
    (C64::new(r, tau.im), q)
}

impl FloquetCell {
    pub fn new(bg: &PeriodicBackground, opts: &FloquetOptions) -> Self {
        let m = bg.modes();
        let n = bg.n_grid();
        let g = opts.plane_waves;
        let mut coeff = Vec::with_capacity(4 * g + 1);
        for d in -(2 * g as i64)..=(2 * g as i64) {
            let mut c = CMat::zeros(m, m);
            for j in 0..n {
                let ph = C64::from_polar(1.0, -2.0 * PI * (d * j as i64) as f64 / n as f64);
                let s = bg.sample(j as i64);
                for r in 0..m {
                    for q in 0..m {
                        c[(r, q)] += ph * s[r * m + q];
                    }
                }
            }
            let w = sinc(PI * d as f64 / n as f64).powi(2) / n as f64;
            coeff.push(c * C64::new(w, 0.0));
        }
        Self {
            id: bg.id.clone(),
            period: bg.period,
            modes: m,
            cutoff: g,
            n_grid: n,
            coeff,
            opts: *opts,
        }
    }

    pub fn options(&self) -> &FloquetOptions {
        &self.opts
    }

    pub fn dim(&self) -> usize {
        self.modes * (2 * self.cutoff + 1)
    }

    /// Number of eigenvalues considered trustworthy.
    pub fn capacity(&self) -> usize {
        self.dim() / 4
    }

    fn wavenumber(&self, g: usize) -> f64 {
        2.0 * PI * (g as f64 - self.cutoff as f64) / self.period
    }

    /// Plane-wave matrix at tau (no zone reduction).
    pub fn hamiltonian(&self, tau: C64) -> CMat {
        let m = self.modes;
        let nb = 2 * self.cutoff + 1;
        let dim = m * nb;
        let mut h = CMat::zeros(dim, dim);
        let g2 = 2 * self.cutoff;
        for a in 0..nb {
            for b in 0..nb {
                let c = &self.coeff[a + g2 - b];
                for r in 0..m {
                    for q in 0..m {
                        h[(a * m + r, b * m + q)] = c[(r, q)];
                    }
                }
            }
            let kin = (tau + self.wavenumber(a)).powi(2);
            for r in 0..m {
                h[(a * m + r, a * m + r)] += kin;
            }
        }
        h
    }

    /// dH/dtau, diagonal.
    fn dham_diag(&self, tau: C64) -> Vec<C64> {
        let m = self.modes;
        let mut d = Vec::with_capacity(self.dim());
        for a in 0..(2 * self.cutoff + 1) {
            let v = (tau + self.wavenumber(a)) * 2.0;
            for _ in 0..m {
                d.push(v);
            }
        }
        d
    }

    /// Sorted eigenvalues and eigenvectors at real tau (zone-reduced).
    fn real_eigen(&self, tau: f64) -> (Vec<f64>, CMat, i64) {
        let (t, q) = reduce_tau(C64::new(tau, 0.0), self.period);
        let h = self.hamiltonian(t);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = CMat::zeros(self.dim(), self.dim());
        for (c, &i) in order.iter().enumerate() {
            vecs.set_column(c, &eig.eigenvectors.column(i));
        }
        (vals, vecs, q)
    }

    /// Sorted band energies at real tau (all basis eigenvalues).
    pub fn energies(&self, tau: f64) -> Vec<f64> {
        let (t, _) = reduce_tau(C64::new(tau, 0.0), self.period);
        let mut vals: Vec<f64> = self.hamiltonian(t).symmetric_eigenvalues().iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals
    }

    /// Periodic Bloch part on the cell grid from plane-wave coefficients,
    /// with the zone shift q (tau = tau_r + 2 pi q / T) folded in.
    fn bloch_on_grid(&self, a: &CVec, q: i64) -> Vec<CVec> {
        let m = self.modes;
        let h = self.period / self.n_grid as f64;
        let mut out = Vec::with_capacity(self.n_grid);
        for j in 0..self.n_grid {
            let x = j as f64 * h;
            let mut v = CVec::zeros(m);
            for g in 0..(2 * self.cutoff + 1) {
                let ph = C64::from_polar(1.0, (self.wavenumber(g) - 2.0 * PI * q as f64 / self.period) * x);
                for r in 0..m {
                    v[r] += a[g * m + r] * ph;
                }
            }
            out.push(v);
        }
        let norm: f64 = out.iter().map(|v| v.norm_squared()).sum::<f64>() * h;
        let s = C64::new(1.0 / norm.sqrt(), 0.0);
        out.iter().map(|v| v * s).collect()
    }

    /// The `count` lowest cell eigenpairs at tau, sorted by real part.
    pub fn cell_spectrum(&self, tau: C64, count: usize) -> Result<Vec<FloquetMode>> {
        if count > self.capacity() {
            return Err(Error::DiscretizationTooCoarse { requested: count, capacity: self.capacity() });
        }
        if !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(Error::Numerical("non-finite quasimomentum".into()));
        }
        if tau.im == 0.0 {
            let (vals, vecs, q) = self.real_eigen(tau.re);
            return Ok((0..count)
                .map(|p| FloquetMode {
                    background: self.id.clone(),
                    band: p,
                    tau,
                    energy: C64::new(vals[p], 0.0),
                    bloch_vector: self.bloch_on_grid(&vecs.column(p).into_owned(), q),
                })
                .collect());
        }
        let (t, q) = reduce_tau(tau, self.period);
        let h = self.hamiltonian(t);
        let mut ev = linalg::eigenvalues(&h)?;
        ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let mut out = Vec::with_capacity(count);
        for (p, &e) in ev.iter().take(count).enumerate() {
            let start = CVec::from_element(self.dim(), C64::new(1.0, 0.0));
            let (energy, x, _) = eig_near(&h, e, &start, &start)?;
            out.push(FloquetMode {
                background: self.id.clone(),
                band: p,
                tau,
                energy,
                bloch_vector: self.bloch_on_grid(&x, q),
            });
        }
        Ok(out)
    }

    /// Hellmann-Feynman derivative of band p at real tau.
    pub fn band_derivative(&self, p: usize, tau: f64) -> Result<f64> {
        let (vals, vecs, _) = self.real_eigen(tau);
        if p >= self.capacity() {
            return Err(Error::DiscretizationTooCoarse { requested: p + 1, capacity: self.capacity() });
        }
        let gap_lo = if p > 0 { vals[p] - vals[p - 1] } else { f64::INFINITY };
        let gap_hi = vals[p + 1] - vals[p];
        let gap = gap_lo.min(gap_hi);
        if gap < self.opts.degeneracy_floor {
            return Err(Error::DegenerateBand { background: self.id.clone(), band: p, tau, gap });
        }
        let (t, _) = reduce_tau(C64::new(tau, 0.0), self.period);
        let d = self.dham_diag(t);
        let x = vecs.column(p);
        Ok(x.iter().zip(&d).map(|(a, w)| a.norm_sqr() * w.re).sum())
    }

    fn band_value(&self, p: usize, tau: f64) -> f64 {
        self.energies(tau)[p]
    }

    /// Golden-section search for an extremum of band p within [a, b].
    fn refine_extremum(&self, p: usize, mut a: f64, mut b: f64, maximize: bool) -> f64 {
        let sign = if maximize { -1.0 } else { 1.0 };
        let f = |t: f64| sign * self.band_value(p, t);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - gr * (b - a);
        let mut d = a + gr * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        // the band is quadratic at the extremum: a 1e-7 bracket fixes the value to ~1e-14
        let tol = 1e-7 * (b - a).abs().max(1.0);
        for _ in 0..80 {
            if (b - a).abs() < tol {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = f(d);
            }
        }
        sign * f(0.5 * (a + b)).min(fc.min(fd))
    }

    /// [min, max] of every band whose minimum lies below `upper`.
    pub fn band_ranges(&self, upper: f64) -> Result<Vec<(f64, f64)>> {
        let n = self.opts.tau_points.max(3);
        let zone = PI / self.period;
        let taus: Vec<f64> = (0..n).map(|i| -zone + 2.0 * zone * i as f64 / (n - 1) as f64).collect();
        let table: Vec<Vec<f64>> = taus.iter().map(|&t| self.energies(t)).collect();
        let cap = self.capacity();
        let mut out = Vec::new();
        for p in 0..self.dim() {
            let col: Vec<f64> = table.iter().map(|e| e[p]).collect();
            let coarse_min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            if coarse_min > upper + 1.0 {
                break;
            }
            if p >= cap {
                return Err(Error::DiscretizationTooCoarse { requested: p + 1, capacity: cap });
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            // the scan covers the closed zone; endpoints coincide
            for i in 0..n - 1 {
                let prev = col[(i + n - 2) % (n - 1)];
                let next = col[i + 1];
                let ta = if i == 0 { taus[0] - (taus[1] - taus[0]) } else { taus[i - 1] };
                let tb = taus[i + 1];
                if col[i] <= prev && col[i] <= next {
                    lo = lo.min(self.refine_extremum(p, ta, tb, false));
                }
                if col[i] >= prev && col[i] >= next {
                    hi = hi.max(self.refine_extremum(p, ta, tb, true));
                }
            }
            lo = lo.min(coarse_min);
            hi = hi.max(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            if lo <= upper {
                out.push((lo, hi));
            }
        }
        Ok(out)
    }

    /// Real crossings E_p(tau) = lambda0 with their direction.
    pub fn classify_directions(&self, bg: &PeriodicBackground, lambda0: f64) -> Result<Vec<BandCrossing>> {
        let mono = monodromy_matrix(bg, C64::new(lambda0, 0.0), self.opts.substeps)?;
        let ev = linalg::eigenvalues(&mono)?;
        let mut seeds: Vec<f64> = ev
            .iter()
            .filter(|r| (r.norm() - 1.0).abs() < 1e-6)
            .map(|r| r.arg() / self.period)
            .collect();
        seeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let scale = 1.0 + lambda0.abs();
        let mut out: Vec<BandCrossing> = Vec::new();
        for seed in seeds {
            let mut tau = seed;
            let mut found = None;
            for _ in 0..60 {
                let (vals, vecs, _) = self.real_eigen(tau);
                let p = nearest(&vals, lambda0);
                let (t, _) = reduce_tau(C64::new(tau, 0.0), self.period);
                let d = self.dham_diag(t);
                let x = vecs.column(p);
                let der: f64 = x.iter().zip(&d).map(|(a, w)| a.norm_sqr() * w.re).sum();
                let res = vals[p] - lambda0;
                if der.abs() < self.opts.derivative_floor {
                    return Err(Error::BandEdgeAt { background: self.id.clone(), tau, derivative: der });
                }
                if res.abs() <= 1e-12 * scale {
                    found = Some((p, der, vals.clone()));
                    break;
                }
                let step = res / der;
                tau -= step.clamp(-0.25 * PI / self.period, 0.25 * PI / self.period);
            }
            let (p, der, vals) = found.ok_or_else(|| Error::NewtonDivergence {
                background: self.id.clone(),
                detail: format!("crossing refinement from tau = {seed} did not converge"),
            })?;
            let gap_lo = if p > 0 { vals[p] - vals[p - 1] } else { f64::INFINITY };
            let gap = gap_lo.min(vals[p + 1] - vals[p]);
            let tau = reduce_tau(C64::new(tau, 0.0), self.period).0.re;
            if gap < self.opts.degeneracy_floor {
                return Err(Error::DegenerateBand { background: self.id.clone(), band: p, tau, gap });
            }
            if der.abs() < 1e-3 {
                // close to an edge: a derivative floor violation would have surfaced above
                log::warn!("background {}: small group velocity {der:.3e} at tau = {tau}", self.id);
            }
            if out.iter().any(|c| (c.tau - tau).abs() < 1e-8) {
                return Err(Error::DegenerateBand { background: self.id.clone(), band: p, tau, gap: 0.0 });
            }
            out.push(BandCrossing {
                background: self.id.clone(),
                band: p,
                lambda0,
                tau,
                derivative: der,
                direction: if der > 0.0 { Direction::Plus } else { Direction::Minus },
            });
        }
        out.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
        Ok(out)
    }

    /// Solve E(t) = lambda near the crossing by Newton continuation along
    /// the straight path from lambda0 with `steps` nodes (0 = from path_step).
    pub fn quasimomentum_continue_steps(&self, crossing: &BandCrossing, lambda: C64, steps: usize) -> Result<C64> {
        let lambda0 = C64::new(crossing.lambda0, 0.0);
        let dist = (lambda - lambda0).norm();
        let fail = |detail: String| Error::NewtonDivergence { background: self.id.clone(), detail };
        if dist > self.opts.continuation_radius {
            return Err(fail(format!(
                "|lambda - lambda0| = {dist:.3e} exceeds the continuation radius {}",
                self.opts.continuation_radius
            )));
        }
        if crossing.derivative.abs() < self.opts.derivative_floor {
            return Err(fail(format!("band derivative {:.3e} at the crossing is below the floor", crossing.derivative)));
        }
        let tau_p = crossing.tau;
        let (vals, vecs, _) = self.real_eigen(tau_p);
        let p = nearest(&vals, crossing.lambda0);
        let mut x = vecs.column(p).into_owned();
        let mut y = x.clone();
        let mut tau = C64::new(tau_p, 0.0);
        let mut energy = C64::new(vals[p], 0.0);
        let mut der = C64::new(crossing.derivative, 0.0);
        let nsteps = if steps == 0 { ((dist / self.opts.path_step).ceil() as usize).max(1) } else { steps };
        let bound = PI / self.period;
        for j in 1..=nsteps {
            let target = lambda0 + (lambda - lambda0) * (j as f64 / nsteps as f64);
            tau += (target - energy) / der;
            let mut converged = false;
            for _ in 0..60 {
                let h = self.hamiltonian(tau);
                let (e, xn, yn) = eig_near(&h, energy + (target - energy), &x, &y)?;
                let d = self.dham_diag(tau);
                let num: C64 = yn.iter().zip(xn.iter()).zip(&d).map(|((a, b), w)| a.conj() * w * b).sum();
                let den: C64 = yn.iter().zip(xn.iter()).map(|(a, b)| a.conj() * b).sum();
                der = num / den;
                energy = e;
                x = xn;
                y = yn;
                if der.norm() < self.opts.derivative_floor {
                    return Err(fail(format!("derivative {:.3e} below floor at tau = {tau}", der.norm())));
                }
                let delta = (energy - target) / der;
                tau -= delta;
                if (tau - tau_p).norm() > bound {
                    return Err(fail(format!("quasimomentum left the continuation disc at tau = {tau}")));
                }
                if delta.norm() < 1e-14 * (1.0 + tau.norm()) && (energy - target).norm() < 1e-11 * (1.0 + target.norm()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(fail(format!("Newton did not converge at lambda = {target}")));
            }
            energy = target;
        }
        Ok(tau)
    }

    pub fn quasimomentum_continue(&self, crossing: &BandCrossing, lambda: C64) -> Result<C64> {
        self.quasimomentum_continue_steps(crossing, lambda, 0)
    }

    /// Band table over the zone with bands tracked by eigenvector overlap.
    pub fn band_table(&self, bands: usize, points: usize) -> Result<Vec<(usize, f64, f64)>> {
        if bands > self.capacity() {
            return Err(Error::DiscretizationTooCoarse { requested: bands, capacity: self.capacity() });
        }
        let zone = PI / self.period;
        let n = points.max(2);
        let mut rows = Vec::with_capacity(bands * n);
        let mut prev: Option<CMat> = None;
        for i in 0..n {
            let tau = -zone + 2.0 * zone * i as f64 / (n - 1) as f64;
            // the scan stays inside the closed zone, so one basis window serves all points
            let h = self.hamiltonian(C64::new(tau, 0.0));
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let cand: Vec<usize> = order.iter().take(bands + 2).copied().collect();
            let assigned: Vec<usize> = match &prev {
                None => cand.iter().take(bands).copied().collect(),
                Some(pv) => {
                    let mut used = vec![false; cand.len()];
                    let mut a = Vec::with_capacity(bands);
                    for b in 0..bands {
                        let mut best = 0;
                        let mut best_ov = -1.0;
                        for (ci, &idx) in cand.iter().enumerate() {
                            if used[ci] {
                                continue;
                            }
                            let ov = pv.column(b).dotc(&eig.eigenvectors.column(idx)).norm();
                            if ov > best_ov {
                                best_ov = ov;
                                best = ci;
                            }
                        }
                        used[best] = true;
                        a.push(cand[best]);
                    }
                    a
                }
            };
            let mut pv = CMat::zeros(self.dim(), bands);
            for (b, &idx) in assigned.iter().enumerate() {
                pv.set_column(b, &eig.eigenvectors.column(idx));
                rows.push((b, tau, eig.eigenvalues[idx]));
            }
            prev = Some(pv);
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
        Ok(rows)
    }
}

fn nearest(vals: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if (v - x).abs() < (vals[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Shifted inverse iteration with a two-sided Rayleigh quotient.
/// Returns (eigenvalue, right vector, left vector), vectors unit-normalised.
pub fn eig_near(h: &CMat, shift: C64, x0: &CVec, y0: &CVec) -> Result<(C64, CVec, CVec)> {
    let n = h.nrows();
    let mut sigma = shift;
    let mut x = x0.normalize();
    let mut y = y0.normalize();
    let mut e = sigma;
    let scale = 1.0 + linalg::max_abs(h);
    for it in 0..30 {
        let mut a = h.clone();
        for i in 0..n {
            a[(i, i)] -= sigma;
        }
        let lu = a.clone().lu();
        let lua = a.adjoint().lu();
        let (xs, ys) = match (lu.solve(&x), lua.solve(&y)) {
            (Some(xs), Some(ys)) => (xs, ys),
            _ => {
                sigma += C64::new(1e-13 * scale, 1e-13 * scale);
                continue;
            }
        };
        x = xs.normalize();
        y = ys.normalize();
        let hx = h * &x;
        let den = y.dotc(&x);
        if den.norm() < 1e-14 {
            return Err(Error::Numerical("left and right eigenvectors nearly orthogonal".into()));
        }
        let en = y.dotc(&hx) / den;
        let change = (en - e).norm();
        e = en;
        if it > 0 && change <= 1e-15 * scale {
            break;
        }
        // keep the shift slightly off the eigenvalue to avoid exact singularity
        sigma = en;
    }
    Ok((e, x, y))
}

/// Union of all band ranges of `cells` intersected with `window`, plus the
/// per-background location of `lambda0`.
pub fn essential_spectrum_edges(
    cells: &[&FloquetCell],
    window: (f64, f64),
    lambda0: Option<f64>,
) -> Result<EssentialSpectrum> {
    let mut all: Vec<(f64, f64)> = Vec::new();
    let mut per = Vec::new();
    for cell in cells {
        let ranges = cell.band_ranges(window.1)?;
        let location = lambda0.map(|l| {
            let margin = cell.opts.band_margin;
            let near_edge = ranges.iter().any(|&(a, b)| (l - a).abs() < margin || (l - b).abs() < margin);
            if near_edge {
                Location::Edge
            } else if ranges.iter().any(|&(a, b)| l > a && l < b) {
                Location::Inside
            } else {
                Location::Gap
            }
        });
        for &(a, b) in &ranges {
            let lo = a.max(window.0);
            let hi = b.min(window.1);
            if lo <= hi {
                all.push((lo, hi));
            }
        }
        per.push(BackgroundBands { id: cell.id.clone(), bands: ranges, location });
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in all {
        match merged.last_mut() {
            Some(last) if a <= last.1 + 1e-12 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    Ok(EssentialSpectrum { window, intervals: merged, per_background: per })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrossSection, ScalarPotential};

    fn bg(expr: &str, t: f64, m: usize) -> PeriodicBackground {
        let cs = CrossSection::new(PI, m).unwrap();
        PeriodicBackground::from_potential("B", t, &ScalarPotential::expression(expr).unwrap(), &cs, 256).unwrap()
    }

    fn cell(b: &PeriodicBackground) -> FloquetCell {
        FloquetCell::new(b, &FloquetOptions::default())
    }

    #[test]
    fn free_strip_spectrum_at_zero() {
        let c = cell(&bg("0", PI, 2));
        let modes = c.cell_spectrum(C64::new(0.0, 0.0), 5).unwrap();
        let want = [1.0, 4.0, 5.0, 5.0, 8.0];
        for (m, w) in modes.iter().zip(want) {
            assert!((m.energy.re - w).abs() < 1e-10, "{} vs {w}", m.energy);
        }
    }

    #[test]
    fn free_strip_offset_tau() {
        let c = cell(&bg("0", PI, 1));
        let m = c.cell_spectrum(C64::new(0.5, 0.0), 1).unwrap();
        assert!((m[0].energy.re - 1.25).abs() < 1e-12);
        let h = PI / 256.0;
        let norm: f64 = m[0].bloch_vector.iter().map(|v| v.norm_squared()).sum::<f64>() * h;
        assert!((norm - 1.0).abs() < 1e-10);
        assert!((c.band_derivative(0, 0.5).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn too_many_eigenvalues_rejected() {
        let c = cell(&bg("0", PI, 1));
        let err = c.cell_spectrum(C64::new(0.0, 0.0), c.capacity() + 1).unwrap_err();
        assert!(matches!(err, Error::DiscretizationTooCoarse { .. }));
    }

    #[test]
    fn plane_wave_matrix_agrees_with_dense_nonhermitian_solver() {
        let c = cell(&bg("4*step(x1 - 0.5)", 1.0, 1));
        for &tau in &[0.0, 1.0, PI] {
            let h = c.hamiltonian(C64::new(tau, 0.0));
            let mut dense: Vec<f64> = linalg::eigenvalues(&h).unwrap().iter().map(|z| z.re).collect();
            dense.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let e = c.energies(tau);
            for p in 0..4 {
                assert!((dense[p] - e[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn band_edges_match_monodromy_trace() {
        // Kronig-Penney cell: band edges solve trace(M(lambda)) = +-2.
        let b = bg("4*step(x1 - 0.5)", 1.0, 1);
        let c = cell(&b);
        let ranges = c.band_ranges(60.0).unwrap();
        let tr = |l: f64| monodromy_matrix(&b, C64::new(l, 0.0), 4).unwrap().trace().re;
        for &(lo, hi) in ranges.iter().take(2) {
            for edge in [lo, hi] {
                let target = if tr(edge) > 0.0 { 2.0 } else { -2.0 };
                let (mut a, mut z) = (edge - 0.05, edge + 0.05);
                let f = |l: f64| tr(l) - target;
                // pick a sign-changing bracket around the edge
                if f(a) * f(edge) <= 0.0 {
                    z = edge;
                } else {
                    a = edge;
                }
                for _ in 0..60 {
                    let m = 0.5 * (a + z);
                    if f(a) * f(m) <= 0.0 {
                        z = m;
                    } else {
                        a = m;
                    }
                }
                assert!((0.5 * (a + z) - edge).abs() < 2e-3, "edge {edge} vs {}", 0.5 * (a + z));
            }
        }
    }

    #[test]
    fn hellmann_feynman_matches_finite_difference() {
        let c = cell(&bg("4*step(x1 - 0.5) + cos(2*pi*x1)", 1.0, 1));
        let tau = 0.5 * PI;
        for p in 0..3 {
            let hf = c.band_derivative(p, tau).unwrap();
            let d = 1e-5;
            let fd = (c.energies(tau + d)[p] - c.energies(tau - d)[p]) / (2.0 * d);
            assert!((hf - fd).abs() <= 1e-6 * hf.abs().max(1e-3), "p={p}: {hf} vs {fd}");
        }
        assert!(c.band_derivative(0, 0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn free_essential_spectrum_edge() {
        let c = cell(&bg("0", PI, 1));
        let es = essential_spectrum_edges(&[&c], (-5.0, 9.5), Some(0.5)).unwrap();
        assert!((es.intervals[0].0 - 1.0).abs() < 1e-8);
        assert_eq!(es.intervals[0].1, 9.5);
        assert_eq!(es.per_background[0].location, Some(Location::Gap));
        let es = essential_spectrum_edges(&[&c], (-5.0, 0.5), None).unwrap();
        assert!(es.intervals.is_empty());
    }

    #[test]
    fn free_crossings_m1() {
        let b = bg("0", PI, 1);
        let c = cell(&b);
        let cr = c.classify_directions(&b, 1.25).unwrap();
        assert_eq!(cr.len(), 2);
        assert!((cr[0].tau + 0.5).abs() < 1e-9 && cr[0].direction == Direction::Minus);
        assert!((cr[1].tau - 0.5).abs() < 1e-9 && cr[1].direction == Direction::Plus);
    }

    #[test]
    fn free_crossings_m2_folded() {
        let b = bg("0", PI, 2);
        let c = cell(&b);
        let cr = c.classify_directions(&b, 4.5).unwrap();
        let mut taus: Vec<f64> = cr.iter().map(|x| x.tau).collect();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let f = 3.5f64.sqrt() - 2.0;
        let mut want = vec![f, -f, 0.5f64.sqrt(), -(0.5f64.sqrt())];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(taus.len(), 4);
        for (a, b) in taus.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        for x in &cr {
            let e = c.energies(x.tau)[x.band];
            assert!((e - 4.5).abs() < 1e-9);
        }
    }

    #[test]
    fn gapped_background_has_no_crossings() {
        let b = bg("0", PI, 1);
        let c = cell(&b);
        assert!(c.classify_directions(&b, 0.5).unwrap().is_empty());
    }

    #[test]
    fn continuation_matches_square_root() {
        let b = bg("0", PI, 1);
        let c = cell(&b);
        let cr = c.classify_directions(&b, 1.25).unwrap();
        let plus = cr.iter().find(|x| x.direction == Direction::Plus).unwrap();
        let t = c.quasimomentum_continue(plus, C64::new(1.25, 0.0)).unwrap();
        assert!((t - C64::new(0.5, 0.0)).norm() < 1e-12);
        let lam = C64::new(1.25, -0.1);
        let t = c.quasimomentum_continue(plus, lam).unwrap();
        let want = (lam - 1.0).sqrt();
        assert!((t - want).norm() < 1e-10, "{t} vs {want}");
        assert!((t - C64::new(0.509538, -0.098128)).norm() < 1e-6);
        let t2 = c.quasimomentum_continue_steps(plus, lam, 17).unwrap();
        assert!((t - t2).norm() < 1e-9);
    }

    #[test]
    fn continuation_from_band_edge_fails() {
        let b = bg("0", PI, 1);
        let c = cell(&b);
        let edge = BandCrossing {
            background: "B".into(),
            band: 0,
            lambda0: 1.0,
            tau: 0.0,
            derivative: 0.0,
            direction: Direction::Plus,
        };
        let err = c.quasimomentum_continue(&edge, C64::new(1.01, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NewtonDivergence { .. }));
    }

    #[test]
    fn band_table_tracks_bands() {
        let c = cell(&bg("cos(2*pi*x1)", 1.0, 1));
        let rows = c.band_table(3, 33).unwrap();
        assert_eq!(rows.len(), 99);
        let b0: Vec<f64> = rows.iter().filter(|r| r.0 == 0).map(|r| r.2).collect();
        let b1min = rows.iter().filter(|r| r.0 == 1).map(|r| r.2).fold(f64::INFINITY, f64::min);
        assert!(b0.iter().all(|&e| e < b1min));
    }

    #[test]
    fn reduce_tau_into_zone() {
        let (t, q) = reduce_tau(C64::new(3.5, 0.2), 1.0);
        assert!((t.re - (3.5 - 2.0 * PI)).abs() < 1e-14 && q == 1 && t.im == 0.2);
        let (t, _) = reduce_tau(C64::new(-PI, 0.0), 1.0);
        assert!((t.re - PI).abs() < 1e-14);
    }
}
