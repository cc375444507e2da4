//! Discrete eigenvalues of a single perturbation block glued between its two
//! backgrounds, eigenfunctions with exactly represented Floquet tails, and
//! the tail coefficients with respect to the level exponents.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::floquet::EssentialSpectrum;
use crate::linalg::{self, CMat, CVec, SpectralBlocks, C64};
use crate::model::{PerturbationBlock, PeriodicBackground};
use crate::pencil::PencilEigen;
use crate::propagate::{monodromy_matrix, propagate_cell_recorded, propagate_core};

#[derive(Debug, Clone)]
pub struct BoundStateOptions {
    pub substeps: usize,
    /// Uniform scan points across the search window.
    pub scan_points: usize,
    /// Absolute tolerance of the root refinement.
    pub root_tol: f64,
    /// Singular values below this count towards the multiplicity.
    pub nullity: f64,
    /// A scan minimum is accepted as an eigenvalue below this singular value.
    pub accept: f64,
    pub band_margin: f64,
    /// Fit window offset and length, in periods beyond the core edge.
    pub fit_offset: usize,
    pub fit_periods: usize,
    /// Periods after the fit window used to measure the remainder decay.
    pub rate_periods: usize,
    /// Allowed shortfall of the remainder rate below gamma, as a fraction of mhat.
    pub rate_tolerance: f64,
    /// Condition number above which the tail fit is rejected.
    pub max_condition: f64,
}

impl Default for BoundStateOptions {
    fn default() -> Self {
        BoundStateOptions {
            substeps: 2,
            scan_points: 400,
            root_tol: 1e-12,
            nullity: 1e-8,
            accept: 1e-6,
            band_margin: 1e-6,
            fit_offset: 1,
            fit_periods: 3,
            rate_periods: 3,
            rate_tolerance: 0.1,
            max_condition: 1e10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Solutions decaying away from a core edge, as initial data at the edge
/// (background phase 0) with monodromy action C B = B R.
#[derive(Debug, Clone)]
pub struct DecayingBasis {
    pub side: Side,
    pub lambda: C64,
    pub period: f64,
    pub basis: CMat,
    pub restricted: CMat,
    /// Basis propagated across one cell, at every cell grid point.
    pub cell: Vec<CMat>,
}

impl DecayingBasis {
    pub fn n_grid(&self) -> usize {
        self.cell.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.period / self.n_grid() as f64
    }

    /// State (u, u') at background grid index j from the edge for coefficients d.
    /// `j` must be <= 0 on the left and >= 0 on the right.
    pub fn state_at(&self, j: i64, d: &CVec) -> CVec {
        let n = self.n_grid() as i64;
        let (m, r) = (j.div_euclid(n), j.rem_euclid(n) as usize);
        let p = linalg::mat_pow(&self.restricted, m).expect("restricted monodromy is invertible");
        &self.cell[r] * (p * d)
    }

    /// Gram matrix of the whole tail: sum over cells of the trapezoid cell Gram.
    pub fn tail_gram(&self) -> Result<CMat> {
        let m = self.basis.nrows() / 2;
        let k = self.basis.ncols();
        let h = self.step();
        let n = self.n_grid();
        let mut g = CMat::zeros(k, k);
        for (r, s) in self.cell.iter().enumerate() {
            let w = if r == 0 || r == n { 0.5 * h } else { h };
            let u = s.rows(0, m);
            g += u.adjoint() * u * C64::new(w, 0.0);
        }
        let q = match self.side {
            Side::Right => self.restricted.clone(),
            Side::Left => linalg::inverse(&self.restricted)?,
        };
        let mut x = g;
        let mut p = q.clone();
        for _ in 0..64 {
            let add = p.adjoint() * &x * &p;
            x += &add;
            p = &p * &p;
            if linalg::max_abs(&p) < 1e-20 {
                break;
            }
        }
        Ok(match self.side {
            Side::Right => x,
            Side::Left => q.adjoint() * x * q,
        })
    }
}

/// Decaying solutions of a background on one side of a core.
pub fn decaying_basis(bg: &PeriodicBackground, lambda: C64, side: Side, substeps: usize) -> Result<DecayingBasis> {
    let mono = monodromy_matrix(bg, lambda, substeps)?;
    let blocks = SpectralBlocks::new(&mono, 1e-6)?;
    let m = bg.modes();
    let no_basis = || Error::NoDecayingBasis { background: bg.id.clone(), side: side.name().into() };
    let mut cols = Vec::new();
    let mut restricted = Vec::new();
    for cl in &blocks.clusters {
        let modulus = cl.mean.norm();
        if (modulus - 1.0).abs() < 1e-8 {
            return Err(no_basis());
        }
        let take = match side {
            Side::Right => modulus < 1.0,
            Side::Left => modulus > 1.0,
        };
        if take {
            cols.push(cl.basis.clone());
            restricted.push(cl.restricted.clone());
        }
    }
    let k: usize = cols.iter().map(|c| c.ncols()).sum();
    if k != m {
        return Err(no_basis());
    }
    let mut basis = CMat::zeros(2 * m, m);
    let mut r = CMat::zeros(m, m);
    let mut at = 0;
    for (c, rr) in cols.iter().zip(&restricted) {
        basis.view_mut((0, at), (2 * m, c.ncols())).copy_from(c);
        r.view_mut((at, at), (c.ncols(), c.ncols())).copy_from(rr);
        at += c.ncols();
    }
    let cell = propagate_cell_recorded(bg, lambda, &basis, substeps);
    Ok(DecayingBasis { side, lambda, period: bg.period, basis, restricted: r, cell })
}

/// Matching data at the splitting point of the core.
#[derive(Debug, Clone)]
pub struct Matching {
    pub left: DecayingBasis,
    pub right: DecayingBasis,
    /// Left basis propagated to the splitting point.
    pub at_mid_left: CMat,
    /// Right basis propagated to the splitting point.
    pub at_mid_right: CMat,
}

impl Matching {
    pub fn matrix(&self) -> CMat {
        let m = self.at_mid_left.ncols();
        let mut w = CMat::zeros(2 * m, 2 * m);
        w.view_mut((0, 0), (2 * m, m)).copy_from(&self.at_mid_left);
        w.view_mut((0, m), (2 * m, m)).copy_from(&self.at_mid_right);
        w
    }

    /// Singular values of the matching matrix with each half orthonormalised.
    pub fn normalized_singular_values(&self) -> Vec<f64> {
        let m = self.at_mid_left.ncols();
        let mut w = CMat::zeros(2 * m, 2 * m);
        w.view_mut((0, 0), (2 * m, m)).copy_from(&linalg::orthonormalize(&self.at_mid_left));
        w.view_mut((0, m), (2 * m, m)).copy_from(&linalg::orthonormalize(&self.at_mid_right));
        linalg::singular_values(&w)
    }

    /// det W / (det(R_L^H B_L) det(R_R^H B_R)): independent of the choice of basis.
    pub fn determinant(&self, reference: &(CMat, CMat)) -> C64 {
        let d = self.matrix().determinant();
        d / ((reference.0.adjoint() * &self.left.basis).determinant() * (reference.1.adjoint() * &self.right.basis).determinant())
    }
}

/// Eigenvalue problem of one block between its backgrounds.
#[derive(Debug, Clone)]
pub struct MatchingProblem {
    pub block: Arc<PerturbationBlock>,
    pub left: Arc<PeriodicBackground>,
    pub right: Arc<PeriodicBackground>,
    pub opts: BoundStateOptions,
    pub mid: usize,
    reference: (CMat, CMat),
}

impl MatchingProblem {
    /// `reference_lambda` fixes the gauge of `matching_determinant`; it must lie
    /// in a common gap of both backgrounds.
    pub fn new(
        block: Arc<PerturbationBlock>,
        left: Arc<PeriodicBackground>,
        right: Arc<PeriodicBackground>,
        reference_lambda: f64,
        opts: BoundStateOptions,
    ) -> Result<Self> {
        if left.modes() != block.modes() || right.modes() != block.modes() {
            return Err(Error::InvalidModel(format!("block {} and its backgrounds differ in mode count", block.id)));
        }
        let mid = ((block.a_minus / block.step()).round() as usize).min(block.intervals());
        let mut p = MatchingProblem {
            block,
            left,
            right,
            opts,
            mid,
            reference: (CMat::zeros(0, 0), CMat::zeros(0, 0)),
        };
        p.reference = p.local_reference(C64::new(reference_lambda, 0.0))?;
        Ok(p)
    }

    pub fn modes(&self) -> usize {
        self.block.modes()
    }

    fn local_reference(&self, lambda: C64) -> Result<(CMat, CMat)> {
        let l = decaying_basis(&self.left, lambda, Side::Left, self.opts.substeps)?;
        let r = decaying_basis(&self.right, lambda, Side::Right, self.opts.substeps)?;
        Ok((linalg::orthonormalize(&l.basis), linalg::orthonormalize(&r.basis)))
    }

    pub fn matching(&self, lambda: C64) -> Result<Matching> {
        let s = self.opts.substeps;
        let left = decaying_basis(&self.left, lambda, Side::Left, s)?;
        let right = decaying_basis(&self.right, lambda, Side::Right, s)?;
        let n = self.block.intervals();
        let mut yl = left.basis.clone();
        propagate_core(&self.block, lambda, &mut yl, 0, self.mid, s, None);
        let mut yr = right.basis.clone();
        propagate_core(&self.block, lambda, &mut yr, n, self.mid, s, None);
        Ok(Matching { left, right, at_mid_left: yl, at_mid_right: yr })
    }

    /// Real matching determinant in the gauge fixed at construction; zero
    /// exactly at eigenvalues.
    pub fn matching_determinant(&self, lambda: f64) -> Result<f64> {
        Ok(self.matching(C64::new(lambda, 0.0))?.determinant(&self.reference).re)
    }

    /// Smallest normalised singular value of the matching matrix.
    pub fn sigma_min(&self, lambda: f64) -> Result<f64> {
        Ok(*self.matching(C64::new(lambda, 0.0))?.normalized_singular_values().last().unwrap())
    }

    /// All eigenvalues inside `window`.
    pub fn discrete_eigenvalues(&self, window: (f64, f64), spectrum: Option<&EssentialSpectrum>) -> Result<Vec<BoundState>> {
        if let Some(sp) = spectrum {
            for x in [window.0, window.1] {
                if sp.contains(x) || sp.distance_to_edge(x) < self.opts.band_margin {
                    let edge = sp
                        .intervals
                        .iter()
                        .flat_map(|&(a, b)| [a, b])
                        .min_by(|a, b| (a - x).abs().partial_cmp(&(b - x).abs()).unwrap())
                        .unwrap_or(x);
                    return Err(Error::WindowTouchesBand { block: self.block.id.clone(), edge });
                }
            }
            if sp.intervals.iter().any(|&(a, b)| a < window.1 && b > window.0) {
                let edge = sp.intervals.iter().map(|&(a, _)| a).find(|&a| a > window.0).unwrap_or(window.0);
                return Err(Error::WindowTouchesBand { block: self.block.id.clone(), edge });
            }
        }
        let roots = self.locate_roots(window)?;
        let mut out = Vec::new();
        for (lam, _) in roots {
            out.extend(self.states_at(lam)?);
        }
        Ok(out)
    }

    /// Roots of the matching condition with their multiplicities.
    pub fn locate_roots(&self, window: (f64, f64)) -> Result<Vec<(f64, usize)>> {
        let np = self.opts.scan_points.max(8);
        let grid: Vec<f64> = (0..np).map(|i| window.0 + (window.1 - window.0) * i as f64 / (np - 1) as f64).collect();
        let sig: Vec<f64> = grid.par_iter().map(|&l| self.sigma_min(l)).collect::<Result<_>>()?;
        let mut roots: Vec<(f64, usize)> = Vec::new();
        for i in 0..np {
            let lo = if i == 0 { sig[0] } else { sig[i - 1] };
            let hi = if i + 1 == np { sig[i] } else { sig[i + 1] };
            let is_min = sig[i] <= lo && sig[i] <= hi && (i == 0 || sig[i] < lo || i + 1 == np || sig[i] < hi);
            if !is_min {
                continue;
            }
            let a = grid[i.saturating_sub(1)];
            let b = grid[(i + 1).min(np - 1)];
            let lam = self.refine(a, b)?;
            let sv = self.matching(C64::new(lam, 0.0))?.normalized_singular_values();
            if *sv.last().unwrap() > self.opts.accept {
                continue;
            }
            let mult = sv.iter().filter(|&&s| s <= self.opts.nullity.max(10.0 * sv.last().unwrap())).count().max(1);
            if roots.iter().all(|&(r, _)| (r - lam).abs() > 1e-9) {
                roots.push((lam, mult));
            }
        }
        roots.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(roots)
    }

    /// Minimise sigma_min on [a, b], then polish by a sign change of the
    /// determinant in a gauge taken at the minimiser.
    fn refine(&self, a: f64, b: f64) -> Result<f64> {
        let lam = golden_min(|x| self.sigma_min(x).unwrap_or(f64::INFINITY), a, b, self.opts.root_tol);
        let reference = self.local_reference(C64::new(lam, 0.0))?;
        let det = |x: f64| -> Result<f64> { Ok(self.matching(C64::new(x, 0.0))?.determinant(&reference).re) };
        let (fa, fb) = (det(a)?, det(b)?);
        if fa * fb >= 0.0 {
            return Ok(lam);
        }
        bisect_secant(det, a, b, fa, fb, self.opts.root_tol)
    }

    /// Orthonormal eigenfunctions at a located eigenvalue.
    pub fn states_at(&self, lambda: f64) -> Result<Vec<BoundState>> {
        let lam = C64::new(lambda, 0.0);
        let mt = self.matching(lam)?;
        let m = self.modes();
        let (ql, rl) = linalg::qr_parts(&mt.at_mid_left);
        let (qr, rr) = linalg::qr_parts(&mt.at_mid_right);
        let mut w = CMat::zeros(2 * m, 2 * m);
        w.view_mut((0, 0), (2 * m, m)).copy_from(&ql);
        w.view_mut((0, m), (2 * m, m)).copy_from(&qr);
        let sv = linalg::singular_values(&w);
        let smin = *sv.last().unwrap();
        let mult = sv.iter().filter(|&&s| s <= self.opts.nullity.max(10.0 * smin)).count().max(1);
        let (null, _) = linalg::smallest_right_singular(&w, mult);
        let rl_inv = linalg::inverse(&rl)?;
        let rr_inv = linalg::inverse(&rr)?;
        let left = Arc::new(mt.left);
        let right = Arc::new(mt.right);
        let (gl, gr) = (left.tail_gram()?, right.tail_gram()?);
        let n = self.block.intervals();
        let mut states: Vec<BoundState> = Vec::with_capacity(mult);
        for c in 0..mult {
            let v = null.column(c);
            let cl: CVec = &rl_inv * v.rows(0, m);
            let cr: CVec = -(&rr_inv * v.rows(m, m));
            let mut core = vec![CVec::zeros(2 * m); n + 1];
            let mut y = CMat::from_column_slice(2 * m, 1, (&left.basis * &cl).as_slice());
            let mut rec = Vec::new();
            propagate_core(&self.block, lam, &mut y, 0, self.mid, self.opts.substeps, Some(&mut rec));
            for (j, st) in rec {
                core[j] = st.column(0).into_owned();
            }
            let mut y = CMat::from_column_slice(2 * m, 1, (&right.basis * &cr).as_slice());
            let mut rec = Vec::new();
            propagate_core(&self.block, lam, &mut y, n, self.mid, self.opts.substeps, Some(&mut rec));
            for (j, st) in rec {
                if j > self.mid {
                    core[j] = st.column(0).into_owned();
                }
            }
            states.push(BoundState {
                block: self.block.id.clone(),
                eigenvalue: lambda,
                index: c,
                multiplicity: mult,
                residual: smin,
                modes: m,
                a_minus: self.block.a_minus,
                a_plus: self.block.a_plus,
                step: self.block.step(),
                core,
                left_coef: cl,
                right_coef: cr,
                left: left.clone(),
                right: right.clone(),
                left_gram: gl.clone(),
                right_gram: gr.clone(),
            });
        }
        // modified Gram-Schmidt in the whole-line inner product
        for i in 0..states.len() {
            for j in 0..i {
                let p = states[j].inner(&states[i]);
                let (a, b) = states.split_at_mut(i);
                b[0].axpy(-p, &a[j]);
            }
            let nrm = states[i].inner(&states[i]).re.sqrt();
            states[i].scale(C64::new(1.0 / nrm, 0.0));
            let phase = states[i].dominant_phase();
            states[i].scale(phase);
        }
        Ok(states)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

/// Illinois-modified regula falsi with bisection fallback.
fn bisect_secant(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, tol: f64) -> Result<f64> {
    let mut side = 0;
    for it in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut x = (a * fb - b * fa) / (fb - fa);
        if it % 4 == 3 || !(x > a.min(b) && x < a.max(b)) {
            x = 0.5 * (a + b);
        }
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx * fb < 0.0 {
            a = b;
            fa = fb;
            b = x;
            fb = fx;
            side = 0;
        } else {
            b = x;
            fb = fx;
            side += 1;
            if side >= 2 {
                fa *= 0.5;
            }
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Bound state with its whole-line representation.
#[derive(Debug, Clone)]
pub struct BoundState {
    pub block: String,
    pub eigenvalue: f64,
    pub index: usize,
    pub multiplicity: usize,
    /// Smallest normalised singular value of the matching matrix at the eigenvalue.
    pub residual: f64,
    pub modes: usize,
    pub a_minus: f64,
    pub a_plus: f64,
    pub step: f64,
    /// (u, u') on the core grid.
    pub core: Vec<CVec>,
    pub left_coef: CVec,
    pub right_coef: CVec,
    pub left: Arc<DecayingBasis>,
    pub right: Arc<DecayingBasis>,
    left_gram: CMat,
    right_gram: CMat,
}

impl BoundState {
    /// Whole-line discrete inner product <self, other>.
    pub fn inner(&self, other: &BoundState) -> C64 {
        let m = self.modes;
        let n = self.core.len() - 1;
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            acc += self.core[j].rows(0, m).dotc(&other.core[j].rows(0, m)) * w;
        }
        acc *= self.step;
        acc += self.left_coef.dotc(&(&self.left_gram * &other.left_coef));
        acc += self.right_coef.dotc(&(&self.right_gram * &other.right_coef));
        acc
    }

    fn axpy(&mut self, a: C64, x: &BoundState) {
        for (u, v) in self.core.iter_mut().zip(&x.core) {
            *u += v * a;
        }
        self.left_coef += &x.left_coef * a;
        self.right_coef += &x.right_coef * a;
    }

    fn scale(&mut self, a: C64) {
        for u in &mut self.core {
            *u *= a;
        }
        self.left_coef *= a;
        self.right_coef *= a;
    }

    /// Phase making the largest core value real positive.
    fn dominant_phase(&self) -> C64 {
        let mut best = C64::new(1.0, 0.0);
        let mut size = 0.0;
        for u in &self.core {
            for z in u.rows(0, self.modes).iter() {
                if z.norm() > size * (1.0 + 1e-9) {
                    size = z.norm();
                    best = *z;
                }
            }
        }
        if size == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            best.conj() / size
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.inner(self).re
    }

    /// Value u at core grid index j.
    pub fn core_value(&self, j: usize) -> CVec {
        self.core[j].rows(0, self.modes).into_owned()
    }

    /// (u, u') at background grid index j from the core edge: j <= 0 on the
    /// left (x = -a_minus + j h_left), j >= 0 on the right.
    pub fn tail_state(&self, side: Side, j: i64) -> CVec {
        match side {
            Side::Left => self.left.state_at(j, &self.left_coef),
            Side::Right => self.right.state_at(j, &self.right_coef),
        }
    }

    pub fn tail_value(&self, side: Side, j: i64) -> CVec {
        self.tail_state(side, j).rows(0, self.modes).into_owned()
    }

    /// Samples on [-a_minus - pad T_left, a_plus + pad T_right].
    pub fn samples(&self, pad_periods: usize) -> (Vec<f64>, Vec<CVec>) {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        let nl = (pad_periods * self.left.n_grid()) as i64;
        for j in -nl..0 {
            xs.push(-self.a_minus + j as f64 * self.left.step());
            vs.push(self.tail_value(Side::Left, j));
        }
        for j in 0..self.core.len() {
            xs.push(-self.a_minus + j as f64 * self.step);
            vs.push(self.core_value(j));
        }
        let nr = (pad_periods * self.right.n_grid()) as i64;
        for j in 1..=nr {
            xs.push(self.a_plus + j as f64 * self.right.step());
            vs.push(self.tail_value(Side::Right, j));
        }
        (xs, vs)
    }
}

/// Tail coefficients of one side of a bound state.
#[derive(Debug, Clone, Serialize)]
pub struct TailExpansion {
    pub block: String,
    pub side: Side,
    /// alpha[i][s] for the requested level chains.
    #[serde(serialize_with = "crate::output::ser_cvec2")]
    pub alpha: Vec<Vec<C64>>,
    /// Coefficients of every decaying chain used in the fit.
    #[serde(skip)]
    pub all_alpha: Vec<Vec<C64>>,
    /// Decay rate of the non-level remainder (infinite if below the noise floor).
    pub residual_rate: f64,
    pub reconstruction_error: f64,
    pub condition: f64,
}

/// Fit the tail against all decaying Floquet solutions `chains` of the adjacent
/// background (plus family on the right, minus family on the left), which
/// must be computed at the bound-state eigenvalue. `level` lists the chain
/// indices forming the leading terms. `gamma` and `mhat` give the rate test.
pub fn tail_coefficients(
    state: &BoundState,
    side: Side,
    chains: &[PencilEigen],
    level: &[usize],
    gamma: f64,
    mhat: f64,
    opts: &BoundStateOptions,
) -> Result<TailExpansion> {
    let m = state.modes;
    let basis = match side {
        Side::Left => &state.left,
        Side::Right => &state.right,
    };
    let n = basis.n_grid() as i64;
    if chains.iter().any(|c| c.n_grid() as i64 != n) {
        return Err(Error::InvalidModel("tail chains and eigenfunction use different background grids".into()));
    }
    let sign = match side {
        Side::Left => -1,
        Side::Right => 1,
    };
    let (o, p, q) = (opts.fit_offset as i64, opts.fit_periods as i64, opts.rate_periods as i64);
    let fit_idx: Vec<i64> = (o * n..=(o + p) * n).map(|j| sign * j).collect();
    let cols: Vec<(usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..c.chain_length()).map(move |s| (i, s)))
        .collect();
    let rows = fit_idx.len() * m;
    let mut a = CMat::zeros(rows, cols.len());
    let mut b = CVec::zeros(rows);
    for (r, &j) in fit_idx.iter().enumerate() {
        let u = state.tail_value(side, j);
        b.rows_mut(r * m, m).copy_from(&u);
        for (c, &(i, s)) in cols.iter().enumerate() {
            a.view_mut((r * m, c), (m, 1)).copy_from(&chains[i].value_at(s, j));
        }
    }
    let scale: Vec<f64> = (0..cols.len()).map(|c| a.column(c).norm().max(1e-300)).collect();
    for (c, s) in scale.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let condition = linalg::condition_number(&a);
    if !condition.is_finite() || condition > opts.max_condition {
        return Err(Error::FitIllConditioned { block: state.block.clone(), condition });
    }
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let coef: Vec<C64> = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
    let reconstruction_error = (&a * &x - &b).norm() / b.norm().max(1e-300);
    let mut all_alpha: Vec<Vec<C64>> = chains.iter().map(|c| vec![C64::new(0.0, 0.0); c.chain_length()]).collect();
    for (&(i, s), v) in cols.iter().zip(&coef) {
        all_alpha[i][s] = *v;
    }
    let alpha: Vec<Vec<C64>> = level.iter().map(|&i| all_alpha[i].clone()).collect();

    // remainder after removing the level terms, first and last cell of the rate window
    let cell_norms = |cell: i64| -> (f64, f64) {
        let mut rem = 0.0;
        let mut tot = 0.0;
        for j in (cell * n)..((cell + 1) * n) {
            let jj = sign * j;
            let u = state.tail_value(side, jj);
            let mut r = u.clone();
            for &i in level {
                for s in 0..chains[i].chain_length() {
                    r -= chains[i].value_at(s, jj) * all_alpha[i][s];
                }
            }
            rem += r.norm_squared();
            tot += u.norm_squared();
        }
        (rem.sqrt(), tot.sqrt())
    };
    let first = o + p;
    let last = o + p + q - 1;
    let (r0, t0) = cell_norms(first);
    let (r1, t1) = cell_norms(last);
    let floor = 1e-7;
    let residual_rate = if r0 <= floor * t0 || r1 <= floor * t1 || last == first {
        f64::INFINITY
    } else {
        (r0 / r1).ln() / ((last - first) as f64 * basis.period)
    };
    let required = gamma - opts.rate_tolerance * mhat;
    if residual_rate < required {
        return Err(Error::RateViolation {
            block: state.block.clone(),
            side: side.name().into(),
            rate: residual_rate,
            required,
        });
    }
    Ok(TailExpansion {
        block: state.block.clone(),
        side,
        alpha,
        all_alpha,
        residual_rate,
        reconstruction_error,
        condition,
    })
}

/// JSON record of a bound state with its tails.
#[derive(Debug, Clone, Serialize)]
pub struct BoundStateRecord {
    pub block: String,
    pub eigenvalue: f64,
    pub multiplicity: usize,
    pub index: usize,
    pub residual: f64,
    #[serde(serialize_with = "crate::output::ser_cvec2")]
    pub alpha_left: Vec<Vec<C64>>,
    #[serde(serialize_with = "crate::output::ser_cvec2")]
    pub alpha_right: Vec<Vec<C64>>,
    pub rate_left: Option<f64>,
    pub rate_right: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrossSection, ScalarPotential};
    use crate::pencil::{floquet_exponents, Family};
    use std::f64::consts::PI;

    fn free_bg() -> Arc<PeriodicBackground> {
        let cs = CrossSection::new(PI, 1).unwrap();
        Arc::new(PeriodicBackground::from_potential("F", 1.0, &ScalarPotential::expression("0").unwrap(), &cs, 64).unwrap())
    }

    fn problem(expr: &str, a: f64, step: f64, reference: f64) -> MatchingProblem {
        let cs = CrossSection::new(PI, 1).unwrap();
        let blk = PerturbationBlock::from_potential("W", "F", "F", a, a, &ScalarPotential::expression(expr).unwrap(), &cs, step).unwrap();
        MatchingProblem::new(Arc::new(blk), free_bg(), free_bg(), reference, BoundStateOptions::default()).unwrap()
    }

    #[test]
    fn free_tail_basis() {
        let b = decaying_basis(&free_bg(), C64::new(0.75, 0.0), Side::Right, 2).unwrap();
        assert!((b.restricted[(0, 0)].re - (-0.5f64).exp()).abs() < 1e-9);
        let ratio = b.basis[(1, 0)] / b.basis[(0, 0)];
        assert!((ratio.re + 0.5).abs() < 1e-12);
        // sum_m e^{-2 kappa m} over cells of int e^{-2 kappa xi}
        let g = b.tail_gram().unwrap()[(0, 0)].re / b.basis[(0, 0)].norm_sqr();
        assert!((g - 1.0).abs() < 1e-3, "{g}");
        assert!(matches!(
            decaying_basis(&free_bg(), C64::new(1.5, 0.0), Side::Right, 2),
            Err(Error::NoDecayingBasis { .. })
        ));
    }

    #[test]
    fn no_perturbation_no_states() {
        let p = problem("0", 1.0, 0.01, 0.0);
        let w = (-0.9, 0.99);
        assert!(p.discrete_eigenvalues(w, None).unwrap().is_empty());
        let d0 = p.matching_determinant(-0.9).unwrap();
        for i in 0..=40 {
            let l = -0.9 + 1.89 * i as f64 / 40.0;
            assert!(p.matching_determinant(l).unwrap() * d0 > 0.0);
        }
    }

    #[test]
    fn symmetric_well_even_state() {
        let p = problem("-3*exp(-2*x1^2)", 2.0, 0.005, 0.0);
        let st = p.discrete_eigenvalues((-1.9, 0.99), None).unwrap();
        assert!(!st.is_empty());
        let s0 = &st[0];
        assert!(s0.residual < 1e-8);
        assert!((s0.norm_squared() - 1.0).abs() < 1e-12);
        let n = s0.core.len() - 1;
        let peak = (0..=n).map(|j| s0.core_value(j)[0].norm()).fold(0.0, f64::max);
        let defect = (0..=n).map(|j| (s0.core_value(j)[0] - s0.core_value(n - j)[0]).norm()).fold(0.0, f64::max);
        assert!(defect / peak < 1e-7, "{defect}");
        // left and right tails carry equal amplitude
        let l = s0.tail_value(Side::Left, -64)[0].norm();
        let r = s0.tail_value(Side::Right, 64)[0].norm();
        assert!((l - r).abs() < 1e-8 * r);
        // tail continues the core smoothly
        let edge = s0.tail_state(Side::Right, 0);
        assert!((edge - &s0.core[n]).norm() < 1e-12);
    }

    #[test]
    fn free_tail_fit_matches_exponent() {
        let p = problem("-3*exp(-2*x1^2)", 2.0, 0.005, 0.0);
        let st = p.discrete_eigenvalues((-1.9, 0.99), None).unwrap();
        let s0 = &st[0];
        let e = floquet_exponents(&free_bg(), s0.eigenvalue, 50.0, 2).unwrap();
        let plus: Vec<PencilEigen> = e.iter().filter(|x| x.family == Family::Plus).cloned().collect();
        let minus: Vec<PencilEigen> = e.iter().filter(|x| x.family == Family::Minus).cloned().collect();
        let kappa = (1.0 - s0.eigenvalue).sqrt();
        let opts = BoundStateOptions::default();
        let tr = tail_coefficients(s0, Side::Right, &plus, &[0], 1.5 * kappa, kappa, &opts).unwrap();
        let tl = tail_coefficients(s0, Side::Left, &minus, &[0], 1.5 * kappa, kappa, &opts).unwrap();
        assert!(tr.reconstruction_error < 1e-6);
        assert!(tr.residual_rate.is_infinite());
        assert!((tr.alpha[0][0].norm() - tl.alpha[0][0].norm()).abs() < 1e-8 * tr.alpha[0][0].norm());
        // unit cell norm makes the periodic part identically 1, so phi = alpha e^{-kappa (x - a)}
        let amp = s0.tail_value(Side::Right, 0)[0];
        assert!((tr.alpha[0][0] - amp).norm() < 1e-6 * amp.norm());
    }

    #[test]
    fn chain_rescaling_rescales_alpha() {
        let p = problem("-3*exp(-2*x1^2)", 2.0, 0.01, 0.0);
        let s0 = &p.discrete_eigenvalues((-1.9, 0.99), None).unwrap()[0];
        let e = floquet_exponents(&free_bg(), s0.eigenvalue, 50.0, 2).unwrap();
        let mut plus: Vec<PencilEigen> = e.iter().filter(|x| x.family == Family::Plus).cloned().collect();
        let opts = BoundStateOptions::default();
        let a = tail_coefficients(s0, Side::Right, &plus, &[0], 1.0, 0.8, &opts).unwrap();
        let c = C64::new(-0.3, 1.7);
        plus[0].rescale(c);
        let b = tail_coefficients(s0, Side::Right, &plus, &[0], 1.0, 0.8, &opts).unwrap();
        assert!((b.alpha[0][0] * c - a.alpha[0][0]).norm() < 1e-10 * a.alpha[0][0].norm());
    }
}
