//! Coupling constants between the decaying Floquet solutions of a connecting
//! background, shift polynomials of the tail coefficients, the block
//! tridiagonal interaction matrix, its eigenvalues and their clusters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64, I};
use crate::pencil::{DecayScale, PencilEigen};

/// Largest supported total number of bound states.
pub const MAX_STATES: usize = 64;
/// Tolerance for deciding that two exponents coincide.
pub const EXPONENT_MATCH: f64 = 1e-9;

/// Level exponents of one connecting background with their pairing.
#[derive(Debug, Clone)]
pub struct ConnectorLevel {
    pub background: String,
    pub period: f64,
    /// Plus-family level exponents, i = 0..J.
    pub plus: Vec<PencilEigen>,
    /// Minus-family partners in the same order.
    pub minus: Vec<PencilEigen>,
}

impl ConnectorLevel {
    pub fn levels(&self) -> usize {
        self.plus.len()
    }
}

/// K[i][q][(s, t)] for plus chain (i, s) against minus chain (q, t).
#[derive(Debug, Clone, Serialize)]
pub struct CouplingTable {
    pub background: String,
    #[serde(skip)]
    pub values: Vec<Vec<CMat>>,
}

impl CouplingTable {
    pub fn get(&self, i: usize, s: usize, q: usize, t: usize) -> C64 {
        self.values[i][q][(s, t)]
    }
}

/// Boundary pairing of a plus-chain member and a minus-chain member, taken
/// at the cell translate x = cells * T:
/// K = sum over modes of phi+ conj(phi-)' - conj(phi-) phi+'.
pub fn coupling_pairing_at(plus: &PencilEigen, s: usize, minus: &PencilEigen, t: usize, cells: i64) -> C64 {
    if (plus.exponent - minus.exponent.conj()).norm() > EXPONENT_MATCH * (1.0 + plus.exponent.norm()) {
        return C64::new(0.0, 0.0);
    }
    let j = cells * plus.n_grid() as i64;
    let m = plus.modes;
    let a = plus.solution_at(s, j);
    let b = minus.solution_at(t, j);
    let mut k = C64::new(0.0, 0.0);
    for r in 0..m {
        k += a[r] * b[m + r].conj() - b[r].conj() * a[m + r];
    }
    k
}

pub fn coupling_pairing(plus: &PencilEigen, s: usize, minus: &PencilEigen, t: usize) -> C64 {
    coupling_pairing_at(plus, s, minus, t, 1)
}

pub fn coupling_table(level: &ConnectorLevel) -> CouplingTable {
    let values = level
        .plus
        .iter()
        .map(|p| {
            level
                .minus
                .iter()
                .map(|q| CMat::from_fn(p.chain_length(), q.chain_length(), |s, t| coupling_pairing(p, s, q, t)))
                .collect()
        })
        .collect();
    CouplingTable { background: level.background.clone(), values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ShiftSign {
    Plus,
    Minus,
}

/// beta_s(T) = sum_m alpha_{m+s} (+-iT)^m / m!
pub fn shift_polynomial(alpha: &[C64], shift: f64, sign: ShiftSign) -> Vec<C64> {
    let z = match sign {
        ShiftSign::Plus => I * shift,
        ShiftSign::Minus => -I * shift,
    };
    (0..alpha.len())
        .map(|s| {
            let mut acc = C64::new(0.0, 0.0);
            let mut term = C64::new(1.0, 0.0);
            for m in 0..alpha.len() - s {
                if m > 0 {
                    term *= z / m as f64;
                }
                acc += alpha[m + s] * term;
            }
            acc
        })
        .collect()
}

/// Tail coefficients of one bound state. `left[i][s]` refers to the minus
/// level exponents of the connector on the left, `right[i][s]` to the plus
/// level exponents of the connector on the right; both measured in the frame
/// of the adjacent core edge. Empty on sides without a connector.
#[derive(Debug, Clone, Default)]
pub struct StateTails {
    pub left: Vec<Vec<C64>>,
    pub right: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scales {
    pub eta: f64,
    pub min_spacing: f64,
    pub max_spacing: f64,
    pub kappa: usize,
    pub mhat: f64,
    pub gamma: f64,
}

impl Scales {
    pub fn new(distances: &[f64], decay: &DecayScale) -> Self {
        let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let max = distances.iter().copied().fold(0.0, f64::max);
        Scales {
            eta: max.powi(decay.kappa as i32) * (-decay.mhat * min).exp(),
            min_spacing: min,
            max_spacing: max,
            kappa: decay.kappa,
            mhat: decay.mhat,
            gamma: decay.gamma,
        }
    }

    /// eta^{1-1/N} e^{-gamma <l> / N}
    pub fn remainder(&self, n: usize) -> f64 {
        let nf = n.max(1) as f64;
        self.eta.powf(1.0 - 1.0 / nf) * (-self.gamma * self.min_spacing / nf).exp()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixBlock {
    pub r: usize,
    pub k: usize,
    #[serde(serialize_with = "crate::output::ser_cmat")]
    pub entries: CMat,
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractionMatrix {
    pub size: usize,
    /// N^(k) for each block.
    pub counts: Vec<usize>,
    pub blocks: Vec<MatrixBlock>,
    #[serde(skip)]
    pub matrix: CMat,
    #[serde(serialize_with = "crate::output::ser_cvec")]
    pub eigenvalues: Vec<C64>,
    pub clusters: Vec<Vec<usize>>,
    pub cluster_threshold: f64,
    pub scales: Scales,
}

impl InteractionMatrix {
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for c in &self.counts {
            off.push(off.last().unwrap() + c);
        }
        off
    }
}

fn check_tail(states: &[StateTails], side_left: bool, levels: &ConnectorLevel) -> Result<()> {
    for st in states {
        let a = if side_left { &st.left } else { &st.right };
        let chains = if side_left { &levels.minus } else { &levels.plus };
        if a.len() != chains.len() || a.iter().zip(chains).any(|(row, e)| row.len() != e.chain_length()) {
            return Err(Error::InvalidModel("tail coefficients do not match the level exponents".into()));
        }
    }
    Ok(())
}

/// Entry for row j of block k+1 and column p of block k.
fn plus_entry(level: &ConnectorLevel, table: &CouplingTable, right_p: &[Vec<C64>], left_j: &[Vec<C64>], d: f64) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    for (i, e) in level.plus.iter().enumerate() {
        let beta = shift_polynomial(&right_p[i], d, ShiftSign::Plus);
        let mut inner = C64::new(0.0, 0.0);
        for (q, f) in level.minus.iter().enumerate() {
            for (s, b) in beta.iter().enumerate() {
                for t in 0..f.chain_length() {
                    inner += left_j[q][t].conj() * table.get(i, s, q, t) * b;
                }
            }
        }
        total += (I * e.exponent * d).exp() * inner;
    }
    total
}

/// Entry for row j of block k and column p of block k+1. The pairing enters
/// conjugated so that the entry is invariant under rescaling of the chains.
fn minus_entry(level: &ConnectorLevel, table: &CouplingTable, left_p: &[Vec<C64>], right_j: &[Vec<C64>], d: f64) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    for (i, e) in level.minus.iter().enumerate() {
        let beta = shift_polynomial(&left_p[i], d, ShiftSign::Minus);
        let mut inner = C64::new(0.0, 0.0);
        for (q, f) in level.plus.iter().enumerate() {
            for (s, b) in beta.iter().enumerate() {
                for t in 0..f.chain_length() {
                    inner += right_j[q][t].conj() * table.get(q, t, i, s).conj() * b;
                }
            }
        }
        total += (-I * e.exponent * d).exp() * inner;
    }
    total
}

/// Assemble the interaction matrix.
///
/// `states[k]` are the bound states of block k, `levels[k]` and `tables[k]`
/// describe the connector between blocks k and k+1 whose core edges are
/// `edge_gaps[k]` apart; `distances[k]` is the physical distance between
/// the block origins.
pub fn assemble_interaction(
    states: &[Vec<StateTails>],
    levels: &[ConnectorLevel],
    tables: &[CouplingTable],
    edge_gaps: &[f64],
    distances: &[f64],
    decay: &DecayScale,
    cluster_factor: f64,
) -> Result<InteractionMatrix> {
    let n = states.len();
    if levels.len() + 1 != n || tables.len() + 1 != n || edge_gaps.len() + 1 != n || distances.len() + 1 != n {
        return Err(Error::InvalidModel("connector data must be given between every pair of blocks".into()));
    }
    let counts: Vec<usize> = states.iter().map(|s| s.len()).collect();
    let size: usize = counts.iter().sum();
    if size == 0 {
        return Err(Error::EmptyProblem);
    }
    if size > MAX_STATES {
        return Err(Error::InvalidModel(format!("{size} bound states exceed the supported maximum of {MAX_STATES}")));
    }
    let mut off = vec![0];
    for c in &counts {
        off.push(off.last().unwrap() + c);
    }
    let mut matrix = CMat::zeros(size, size);
    let mut blocks = Vec::new();
    for k in 0..n - 1 {
        let (lv, tb, d) = (&levels[k], &tables[k], edge_gaps[k]);
        check_tail(&states[k], false, lv)?;
        check_tail(&states[k + 1], true, lv)?;
        let (ck, cn) = (counts[k], counts[k + 1]);
        if ck == 0 || cn == 0 {
            continue;
        }
        let lower = CMat::from_fn(cn, ck, |j, p| plus_entry(lv, tb, &states[k][p].right, &states[k + 1][j].left, d));
        let upper = CMat::from_fn(ck, cn, |j, p| minus_entry(lv, tb, &states[k + 1][p].left, &states[k][j].right, d));
        matrix.view_mut((off[k + 1], off[k]), (cn, ck)).copy_from(&lower);
        matrix.view_mut((off[k], off[k + 1]), (ck, cn)).copy_from(&upper);
        blocks.push(MatrixBlock { r: k + 1, k, entries: lower });
        blocks.push(MatrixBlock { r: k, k: k + 1, entries: upper });
    }
    blocks.sort_by_key(|b| (b.r, b.k));
    let scales = Scales::new(distances, decay);
    let (eigenvalues, clusters, threshold) = eigen_clusters(&matrix, &scales, cluster_factor)?;
    Ok(InteractionMatrix {
        size,
        counts,
        blocks,
        matrix,
        eigenvalues,
        clusters,
        cluster_threshold: threshold,
        scales,
    })
}

/// Eigenvalues sorted by (Re, Im) with single-linkage clusters at
/// factor * eta^{1-1/N} e^{-gamma <l> / N}.
pub fn eigen_clusters(matrix: &CMat, scales: &Scales, factor: f64) -> Result<(Vec<C64>, Vec<Vec<usize>>, f64)> {
    let n = matrix.nrows();
    let mut ev = if n == 1 { vec![matrix[(0, 0)]] } else { linalg::eigenvalues(matrix)? };
    ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    let threshold = factor * scales.remainder(n);
    let clusters = linalg::single_linkage(n, |a, b| (ev[a] - ev[b]).norm() <= threshold);
    Ok((ev, clusters, threshold))
}
