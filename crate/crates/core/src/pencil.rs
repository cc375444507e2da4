//! Complex Floquet exponents and Jordan chains from the monodromy matrix,
//! and the decay scale of the connecting backgrounds.
//!
//! A multiplier rho of the monodromy gives the exponent r = log(rho) / (i T)
//! with Re r in (-pi/T, pi/T]. On the generalised eigenspace of rho the
//! monodromy acts as rho exp(i T N) with N nilpotent; a Jordan chain of N,
//! N Y_s = Y_{s-1}, gives Floquet solutions
//! phi_s(x) = e^{i r x} sum_p (i x)^p / p! Phi_{s-p}(x) with periodic Phi.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, SpectralBlocks, C64, I};
use crate::model::{GluedAssembly, PeriodicBackground};
use crate::propagate::{monodromy_matrix, propagate_cell_recorded};

/// Relative diameter below which multipliers are merged into one cluster.
pub const CLUSTER_DIAMETER: f64 = 1e-6;
/// Singular-value threshold (relative) for Jordan rank decisions.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Monodromy {
    pub background: String,
    pub lambda: C64,
    pub matrix: CMat,
}

pub fn monodromy(bg: &PeriodicBackground, lambda: C64, substeps: usize) -> Result<Monodromy> {
    Ok(Monodromy {
        background: bg.id.clone(),
        lambda,
        matrix: monodromy_matrix(bg, lambda, substeps)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Plus,
    Minus,
    Real,
}

/// Exponent with its Jordan chain as monodromy-space vectors.
#[derive(Debug, Clone)]
pub struct ExponentChain {
    pub exponent: C64,
    pub multiplier: C64,
    pub family: Family,
    /// Y_0 .. Y_{len-1}: (u, u') initial data at xi = 0, N Y_s = Y_{s-1}.
    pub states: Vec<CVec>,
    /// max_s |M Y_s - rho sum_m (iT)^m/m! Y_{s-m}| / |Y|
    pub residual: f64,
    pub cluster_diameter: f64,
}

/// Exponent from multiplier with Re normalised into (-pi/T, pi/T].
pub fn exponent_of(rho: C64, period: f64) -> C64 {
    let mut arg = rho.arg();
    if arg <= -PI {
        arg += 2.0 * PI;
    }
    C64::new(arg, -rho.norm().ln()) / period
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Chain residual of the monodromy relation.
pub fn chain_residual(m: &CMat, rho: C64, period: f64, states: &[CVec]) -> f64 {
    let scale = states.iter().map(|y| y.norm()).fold(0.0, f64::max).max(1e-300);
    let mut worst = 0.0f64;
    for s in 0..states.len() {
        let mut rhs = CVec::zeros(m.nrows());
        for q in 0..=s {
            rhs += &states[s - q] * (rho * (I * period).powu(q as u32) / factorial(q));
        }
        let r = (m * &states[s] - rhs).norm() / (scale * (1.0 + linalg::max_abs(m)));
        worst = worst.max(r);
    }
    worst
}

/// Exponents and Jordan chains of a raw monodromy matrix.
pub fn exponents_from_monodromy(m: &CMat, period: f64, strip_height: f64, family_tol: f64) -> Result<Vec<ExponentChain>> {
    let blocks = SpectralBlocks::new(m, CLUSTER_DIAMETER)?;
    let mut out = Vec::new();
    for cl in &blocks.clusters {
        let rho = cl.mean;
        let exponent = exponent_of(rho, period);
        if exponent.im.abs() > strip_height {
            continue;
        }
        let k = cl.basis.ncols();
        let s_mat = &cl.restricted / rho - CMat::identity(k, k);
        // N = log(I + S) / (iT); the series terminates for nilpotent S
        let mut n_mat = CMat::zeros(k, k);
        let mut p = CMat::identity(k, k);
        for j in 1..=k.max(1) {
            p = &p * &s_mat;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            n_mat += &p * C64::new(sign / j as f64, 0.0);
        }
        n_mat /= I * period;
        let thr = RANK_THRESHOLD * (1.0 + linalg::max_abs(m) / rho.norm()) / period;
        let chains = jordan_chains(&n_mat, thr);
        if chains.iter().map(|c| c.len()).sum::<usize>() != k {
            return Err(Error::IllConditionedJordan { background: String::new(), diameter: cl.diameter });
        }
        let family = if exponent.im > family_tol {
            Family::Plus
        } else if exponent.im < -family_tol {
            Family::Minus
        } else {
            Family::Real
        };
        for chain in chains {
            let states: Vec<CVec> = chain.iter().map(|z| &cl.basis * z).collect();
            let residual = chain_residual(m, rho, period, &states);
            out.push(ExponentChain {
                exponent,
                multiplier: rho,
                family,
                states,
                residual,
                cluster_diameter: cl.diameter,
            });
        }
    }
    Ok(out)
}

/// Jordan chains (z_0, ..., z_{L-1}) with N z_s = z_{s-1}, N z_0 = 0,
/// covering C^k for a numerically nilpotent N.
fn jordan_chains(n: &CMat, thr: f64) -> Vec<Vec<CVec>> {
    let k = n.nrows();
    let mut powers = vec![CMat::identity(k, k)];
    for j in 1..=k {
        let next = &powers[j - 1] * n;
        powers.push(next);
    }
    // N^j of a split Jordan block keeps entries of order thr * |N|^(j-1)
    let scale = linalg::max_abs(n).max(1.0);
    let ranks: Vec<usize> = powers
        .iter()
        .enumerate()
        .map(|(j, p)| if j == 0 { k } else { linalg::rank(p, thr * scale.powi(j as i32 - 1)) })
        .collect();
    let mut max_len = 0;
    for j in 1..=k {
        if ranks[j - 1] > 0 {
            max_len = j;
        }
    }
    let mut chains: Vec<Vec<CVec>> = Vec::new();
    // span of vectors already used, kept orthonormal
    let mut used: Vec<CVec> = Vec::new();
    for len in (1..=max_len).rev() {
        let at_least = |l: usize| if l > k { 0 } else { ranks[l - 1] - ranks[l] };
        let exact = at_least(len) - at_least(len + 1);
        for _ in 0..exact {
            // complement of the used span
            let mut proj = CMat::identity(k, k);
            for u in &used {
                proj -= u * u.adjoint();
            }
            let target = &powers[len - 1] * &proj;
            let svd = target.clone().svd(false, true);
            let vt = svd.v_t.expect("v_t");
            let mut best = 0;
            for i in 0..svd.singular_values.len() {
                if svd.singular_values[i] > svd.singular_values[best] {
                    best = i;
                }
            }
            let top: CVec = proj * vt.row(best).adjoint();
            let mut chain = vec![CVec::zeros(k); len];
            chain[len - 1] = top;
            for s in (0..len - 1).rev() {
                chain[s] = n * &chain[s + 1];
            }
            for v in &chain {
                let mut w = v.clone();
                for u in &used {
                    let c = u.dotc(&w);
                    w -= u * c;
                }
                let nw = w.norm();
                if nw > 1e-12 {
                    used.push(w / C64::new(nw, 0.0));
                }
            }
            chains.push(chain);
        }
    }
    chains
}

/// Pencil eigenvalue with its normalised chain and cell samples.
#[derive(Debug, Clone)]
pub struct PencilEigen {
    pub background: String,
    pub period: f64,
    pub modes: usize,
    pub exponent: C64,
    pub multiplier: C64,
    pub family: Family,
    /// (u, u') of phi_s at the cell grid points xi_j, j = 0..=n, for each s.
    pub cell: Vec<Vec<CVec>>,
    pub chain_residual: f64,
}

impl PencilEigen {
    pub fn chain_length(&self) -> usize {
        self.cell.len()
    }

    pub fn n_grid(&self) -> usize {
        self.cell[0].len() - 1
    }

    pub fn step(&self) -> f64 {
        self.period / self.n_grid() as f64
    }

    /// Initial data of phi_s at xi = 0.
    pub fn state(&self, s: usize) -> &CVec {
        &self.cell[s][0]
    }

    /// (u, u') of phi_s at grid point j (any integer; x = j h).
    pub fn solution_at(&self, s: usize, j: i64) -> CVec {
        let n = self.n_grid() as i64;
        let m = j.div_euclid(n);
        let r = j.rem_euclid(n) as usize;
        let shift = I * (m as f64 * self.period);
        let rho_m = self.multiplier.powi(m as i32);
        let mut out = CVec::zeros(2 * self.modes);
        for q in 0..=s {
            out += &self.cell[s - q][r] * (rho_m * shift.powu(q as u32) / factorial(q));
        }
        out
    }

    /// Floquet solution value u-part at grid point j.
    pub fn value_at(&self, s: usize, j: i64) -> CVec {
        self.solution_at(s, j).rows(0, self.modes).into_owned()
    }

    /// Periodic parts Phi_s at xi_j, j = 0..n-1 (u components).
    pub fn periodic_parts(&self) -> Vec<Vec<CVec>> {
        let h = self.step();
        let len = self.chain_length();
        let mut out: Vec<Vec<CVec>> = Vec::with_capacity(len);
        for s in 0..len {
            let mut col = Vec::with_capacity(self.n_grid());
            for j in 0..self.n_grid() {
                let x = j as f64 * h;
                let mut v = self.cell[s][j].rows(0, self.modes).into_owned() * (-I * self.exponent * x).exp();
                for p in 1..=s {
                    v -= &out[s - p][j] * ((I * x).powu(p as u32) / factorial(p));
                }
                col.push(v);
            }
            out.push(col);
        }
        out
    }

    /// Multiply every chain member by c.
    pub fn rescale(&mut self, c: C64) {
        for col in &mut self.cell {
            for v in col {
                *v *= c;
            }
        }
    }

    fn combine(&mut self, t: usize, a: C64, src: usize) {
        let add: Vec<CVec> = self.cell[src].iter().map(|v| v * a).collect();
        for (v, w) in self.cell[t].iter_mut().zip(add) {
            *v += w;
        }
    }
}

fn cell_inner(h: f64, a: &[CVec], b: &[CVec]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y)).sum::<C64>() * h
}

/// Build a normalised pencil eigen entry from a chain of initial data.
pub fn chain_to_eigen(bg: &PeriodicBackground, lambda0: f64, chain: &ExponentChain, substeps: usize) -> PencilEigen {
    let m = bg.modes();
    let lam = C64::new(lambda0, 0.0);
    let cell = chain
        .states
        .iter()
        .map(|y| {
            let y0 = CMat::from_column_slice(2 * m, 1, y.as_slice());
            propagate_cell_recorded(bg, lam, &y0, substeps)
                .into_iter()
                .map(|st| st.column(0).into_owned())
                .collect::<Vec<CVec>>()
        })
        .collect();
    let mut e = PencilEigen {
        background: bg.id.clone(),
        period: bg.period,
        modes: m,
        exponent: chain.exponent,
        multiplier: chain.multiplier,
        family: chain.family,
        cell,
        chain_residual: chain.residual,
    };
    normalise_chain(&mut e);
    e
}

/// Unit cell norm for Phi_0 with its first nonzero component real positive;
/// adjoint members orthogonalised against Phi_0.
pub fn normalise_chain(e: &mut PencilEigen) {
    let h = e.step();
    let phi = e.periodic_parts();
    let norm = cell_inner(h, &phi[0], &phi[0]).re.sqrt();
    let peak = phi[0].iter().flat_map(|v| v.iter()).map(|z| z.norm()).fold(0.0, f64::max);
    let first = phi[0]
        .iter()
        .flat_map(|v| v.iter())
        .find(|z| z.norm() > 1e-6 * peak)
        .copied()
        .unwrap_or(C64::new(1.0, 0.0));
    let phase = first.conj() / first.norm();
    e.rescale(phase / norm);
    for s in 1..e.chain_length() {
        let phi = e.periodic_parts();
        let a = cell_inner(h, &phi[0], &phi[s]) / cell_inner(h, &phi[0], &phi[0]);
        for t in (s..e.chain_length()).rev() {
            e.combine(t, -a, t - s);
        }
    }
}

/// All exponents with |Im r| <= strip_height of a background at real lambda0,
/// with normalised chains. Minus-family entries are the chains of the
/// multipliers 1 / conj(rho) of the plus family.
pub fn floquet_exponents(bg: &PeriodicBackground, lambda0: f64, strip_height: f64, substeps: usize) -> Result<Vec<PencilEigen>> {
    let mono = monodromy_matrix(bg, C64::new(lambda0, 0.0), substeps)?;
    let chains = exponents_from_monodromy(&mono, bg.period, strip_height, 1e-7 / bg.period).map_err(|e| match e {
        Error::IllConditionedJordan { diameter, .. } => Error::IllConditionedJordan { background: bg.id.clone(), diameter },
        other => other,
    })?;
    let mut out: Vec<PencilEigen> = chains.iter().map(|c| chain_to_eigen(bg, lambda0, c, substeps)).collect();
    out.sort_by(|a, b| {
        let key = |e: &PencilEigen| match e.family {
            Family::Plus => 0,
            Family::Minus => 1,
            Family::Real => 2,
        };
        key(a)
            .cmp(&key(b))
            .then(a.exponent.im.abs().partial_cmp(&b.exponent.im.abs()).unwrap())
            .then(a.exponent.re.partial_cmp(&b.exponent.re).unwrap())
    });
    Ok(out)
}

/// Decay data of the connecting backgrounds.
#[derive(Debug, Clone, Serialize)]
pub struct DecayScale {
    pub mhat: f64,
    pub gamma: f64,
    /// J^(k) for each connector k = 1..n-1.
    pub levels: Vec<usize>,
    /// Largest chain length among the level exponents.
    pub kappa: usize,
    /// Smallest Im of a non-level plus exponent over all connectors (infinite if none).
    pub next_level: f64,
}

/// Indices of the plus entries at level m with the matching minus entries.
pub fn level_pairs(eigs: &[PencilEigen], mhat: f64) -> Vec<(usize, usize)> {
    let tol = 1e-8 * mhat.max(1e-12);
    let plus: Vec<usize> = (0..eigs.len())
        .filter(|&i| eigs[i].family == Family::Plus && (eigs[i].exponent.im - mhat).abs() <= tol.max(1e-9))
        .collect();
    let mut taken = vec![false; eigs.len()];
    let mut out = Vec::new();
    for i in plus {
        let target = eigs[i].exponent.conj();
        let mut best: Option<usize> = None;
        for j in 0..eigs.len() {
            if eigs[j].family != Family::Minus || taken[j] || eigs[j].chain_length() != eigs[i].chain_length() {
                continue;
            }
            let d = (eigs[j].exponent - target).norm();
            if d < 1e-7 && best.is_none_or(|b| d < (eigs[b].exponent - target).norm()) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            taken[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn decay_scale(assembly: &GluedAssembly, pencils: &[Vec<PencilEigen>], lambda0: f64) -> Result<DecayScale> {
    let n = assembly.n();
    if pencils.len() + 1 != n {
        return Err(Error::InvalidModel("pencil data must be given for every connector".into()));
    }
    let mut mhat = f64::INFINITY;
    for (k, eigs) in pencils.iter().enumerate() {
        if eigs.iter().any(|e| e.family == Family::Real) {
            return Err(Error::Lambda0InMiddleEssentialSpectrum {
                background: assembly.backgrounds[k + 1].id.clone(),
                lambda0,
            });
        }
        for e in eigs.iter().filter(|e| e.family == Family::Plus) {
            mhat = mhat.min(e.exponent.im);
        }
    }
    if !mhat.is_finite() || mhat <= 0.0 {
        return Err(Error::Numerical("no decaying exponents on the connecting backgrounds".into()));
    }
    let tol = 1e-8 * mhat;
    let mut levels = Vec::with_capacity(pencils.len());
    let mut kappa = 0;
    let mut next = f64::INFINITY;
    for eigs in pencils {
        let pairs = level_pairs(eigs, mhat);
        levels.push(pairs.len());
        for &(i, _) in &pairs {
            kappa = kappa.max(eigs[i].chain_length());
        }
        for e in eigs.iter().filter(|e| e.family == Family::Plus) {
            if e.exponent.im > mhat + tol {
                next = next.min(e.exponent.im);
            }
        }
    }
    let upper = next.min(2.0 * mhat);
    let gamma = 0.5 * (mhat + upper);
    // strip re-verification: nothing strictly between mhat and gamma
    for eigs in pencils {
        if eigs
            .iter()
            .any(|e| e.exponent.im.abs() > mhat + tol && e.exponent.im.abs() <= gamma)
        {
            return Err(Error::Numerical("strip around the level exponents is not empty".into()));
        }
    }
    Ok(DecayScale { mhat, gamma, levels, kappa, next_level: next })
}
