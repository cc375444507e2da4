//! Small dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Max-abs entry norm.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Diagonal similarity scaling (Parlett-Reinsch) returning the balanced matrix.
pub fn balance(m: &CMat) -> CMat {
    let n = m.nrows();
    let mut a = m.clone();
    let radix = 2.0f64;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut col = 0.0;
            let mut row = 0.0;
            for j in 0..n {
                if j != i {
                    col += a[(j, i)].norm();
                    row += a[(i, j)].norm();
                }
            }
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let s = col + row;
            let mut f = 1.0;
            let mut cc = col;
            let mut rr = row;
            while cc < rr / radix {
                cc *= radix;
                rr /= radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix;
                rr *= radix;
                f /= radix;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
    a
}

/// All eigenvalues of a square complex matrix via balancing and complex Schur.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite matrix passed to eigensolver".into()));
    }
    let b = balance(m);
    if let Some(schur) = nalgebra::linalg::Schur::try_new(b.clone(), 1e-15, 10_000) {
        let (_, t) = schur.unpack();
        return Ok((0..n).map(|i| t[(i, i)]).collect());
    }
    // deflation is relative to the diagonal and can stall when it vanishes;
    // a scalar shift moves the spectrum rigidly
    let shift = C64::new(max_abs(&b).max(f64::MIN_POSITIVE) * 1.618_033_988_749_895, 0.0);
    let shifted = &b + CMat::identity(n, n) * shift;
    let schur = nalgebra::linalg::Schur::try_new(shifted, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)] - shift).collect())
}

/// Orthonormal basis for the span of the `k` right singular vectors with
/// smallest singular values. Returns the basis and all singular values (descending).
pub fn smallest_right_singular(m: &CMat, k: usize) -> (CMat, Vec<f64>) {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    // nalgebra returns singular values in descending order for square input,
    // but sort defensively.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut basis = CMat::zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        for r in 0..n {
            basis[(r, col)] = vt[(idx, r)].conj();
        }
    }
    let mut sorted = sv.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    (basis, sorted)
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Numerical rank with an absolute singular-value threshold.
pub fn rank(m: &CMat, threshold: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > threshold).count()
}

/// 2-norm condition number.
pub fn condition_number(m: &CMat) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

pub fn inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Complex logarithm of the determinant, computed from LU pivots so that
/// very large or small determinants stay representable.
pub fn log_det(m: &CMat) -> C64 {
    let n = m.nrows();
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += u[(i, i)].ln();
    }
    if lu.p().determinant::<f64>() < 0.0 {
        acc += C64::new(0.0, std::f64::consts::PI);
    }
    acc
}

/// Thin QR; returns Q and log det R (complex, R square).
pub fn qr_normalize(m: &CMat) -> (CMat, C64) {
    let qr = m.clone().qr();
    let r = qr.r();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..r.nrows().min(r.ncols()) {
        acc += r[(i, i)].ln();
    }
    (qr.q(), acc)
}

/// Thin QR factors (Q, R).
pub fn qr_parts(m: &CMat) -> (CMat, CMat) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Orthonormal basis of the column span (thin QR Q factor).
pub fn orthonormalize(m: &CMat) -> CMat {
    m.clone().qr().q()
}

/// Matrix power for integer exponent (negative uses the inverse).
pub fn mat_pow(m: &CMat, e: i64) -> Result<CMat> {
    let base = if e < 0 { inverse(m)? } else { m.clone() };
    let mut p = e.unsigned_abs();
    let mut result = CMat::identity(m.nrows(), m.ncols());
    let mut b = base;
    while p > 0 {
        if p & 1 == 1 {
            result = &result * &b;
        }
        b = &b * &b;
        p >>= 1;
    }
    Ok(result)
}

/// Group indices into clusters: `close(i, j)` links two items; clusters are
/// connected components (single linkage). Output is ordered by smallest member.
pub fn single_linkage(n: usize, close: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if close(i, j) {
                let a = find(&mut parent, i);
                let b = find(&mut parent, j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// One cluster of eigenvalues with an orthonormal basis of its invariant
/// subspace and the restriction of the matrix to that subspace.
#[derive(Debug, Clone)]
pub struct SpectralCluster {
    pub eigenvalues: Vec<C64>,
    pub mean: C64,
    pub diameter: f64,
    /// n x k orthonormal basis of the invariant subspace.
    pub basis: CMat,
    /// k x k matrix C with A * basis = basis * C.
    pub restricted: CMat,
}

/// Block decomposition A = S diag(C_c) S^{-1} over eigenvalue clusters.
#[derive(Debug, Clone)]
pub struct SpectralBlocks {
    pub clusters: Vec<SpectralCluster>,
    pub s: CMat,
    pub s_inv: CMat,
}

impl SpectralBlocks {
    /// Decompose `a`, clustering eigenvalues whose relative distance is at most `rel_tol`.
    pub fn new(a: &CMat, rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        let ev = eigenvalues(a)?;
        let scale = max_abs(a).max(f64::MIN_POSITIVE);
        let groups = single_linkage(n, |i, j| {
            let d = (ev[i] - ev[j]).norm();
            d <= rel_tol * ev[i].norm().max(ev[j].norm()).max(1e-300 * scale)
        });
        let mut clusters = Vec::with_capacity(groups.len());
        for g in groups {
            let k = g.len();
            let vals: Vec<C64> = g.iter().map(|&i| ev[i]).collect();
            let mean = vals.iter().sum::<C64>() / k as f64;
            let mut diameter = 0.0f64;
            for x in &vals {
                for y in &vals {
                    diameter = diameter.max((x - y).norm());
                }
            }
            let shifted = a - CMat::identity(n, n) * mean;
            let mut p = shifted.clone();
            for _ in 1..k {
                p = &p * &shifted;
            }
            let (basis, _) = smallest_right_singular(&p, k);
            let restricted = basis.adjoint() * a * &basis;
            clusters.push(SpectralCluster {
                eigenvalues: vals,
                mean,
                diameter,
                basis,
                restricted,
            });
        }
        // Sort by ascending modulus then argument for determinism.
        clusters.sort_by(|x, y| {
            x.mean
                .norm()
                .partial_cmp(&y.mean.norm())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.mean.arg().partial_cmp(&y.mean.arg()).unwrap_or(std::cmp::Ordering::Equal))
        });
        let mut s = CMat::zeros(n, n);
        let mut col = 0;
        for cl in &clusters {
            let k = cl.basis.ncols();
            s.view_mut((0, col), (n, k)).copy_from(&cl.basis);
            col += k;
        }
        let s_inv = inverse(&s)?;
        Ok(Self { clusters, s, s_inv })
    }

    /// Offsets of each cluster inside the concatenated basis.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.clusters.len());
        let mut o = 0;
        for c in &self.clusters {
            out.push(o);
            o += c.basis.ncols();
        }
        out
    }

    /// Apply A^m to the columns of `x` using powers of the restricted blocks.
    pub fn apply_power(&self, x: &CMat, m: i64) -> Result<CMat> {
        let coeff = &self.s_inv * x;
        let mut out = CMat::zeros(coeff.nrows(), coeff.ncols());
        for (cl, off) in self.clusters.iter().zip(self.offsets()) {
            let k = cl.basis.ncols();
            let p = mat_pow(&cl.restricted, m)?;
            let block = coeff.rows(off, k).into_owned();
            out.rows_mut(off, k).copy_from(&(p * block));
        }
        Ok(&self.s * out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: usize, cols: usize, data: &[(f64, f64)]) -> CMat {
        CMat::from_row_iterator(rows, cols, data.iter().map(|&(r, i)| c(r, i)))
    }

    #[test]
    fn zero_diagonal_tridiagonal_spectrum() {
        for t in [1.0, 1e-6] {
            let z = (0.0, 0.0);
            let a = (t, 0.0);
            let m = cm(3, 3, &[z, a, z, a, z, a, z, a, z]);
            let mut ev: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|e| e.re).collect();
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let want = [-(2f64.sqrt()) * t, 0.0, 2f64.sqrt() * t];
            for (e, w) in ev.iter().zip(want) {
                assert!((e - w).abs() <= 1e-13 * t, "{e} {w}");
            }
        }
    }

    #[test]
    fn eigenvalues_of_triangular() {
        let m = cm(3, 3, &[(1.0, 0.0), (2.0, 0.0), (3.0, 1.0), (0.0, 0.0), (-2.0, 1.0), (1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (5.0, 0.0)]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((ev[0] - c(-2.0, 1.0)).norm() < 1e-12);
        assert!((ev[1] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((ev[2] - c(5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn log_det_matches_determinant() {
        let m = cm(2, 2, &[(1.0, 2.0), (0.5, 0.0), (-3.0, 0.0), (2.0, -1.0)]);
        let d = m.determinant();
        assert!((log_det(&m).exp() - d).norm() < 1e-12);
    }

    #[test]
    fn spectral_blocks_reproduce_powers() {
        let m = cm(3, 3, &[(2.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (2.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (0.5, 0.0)]);
        let sb = SpectralBlocks::new(&m, 1e-6).unwrap();
        assert_eq!(sb.clusters.len(), 2);
        let x = CMat::identity(3, 3);
        for e in [-3i64, 0, 1, 4] {
            let a = sb.apply_power(&x, e).unwrap();
            let b = mat_pow(&m, e).unwrap();
            assert!((a - b).norm() < 1e-9, "power {e}");
        }
    }

    #[test]
    fn single_linkage_chains() {
        let v = [0.0f64, 0.1, 0.2, 1.0];
        let g = single_linkage(4, |i, j| (v[i] - v[j]).abs() <= 0.15);
        assert_eq!(g, vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn balancing_preserves_spectrum() {
        let m = cm(2, 2, &[(1.0, 0.0), (1e6, 0.0), (1e-6, 0.0), (2.0, 0.0)]);
        let b = balance(&m);
        assert!((b.trace() - m.trace()).norm() < 1e-9);
        assert!((b.determinant() - m.determinant()).norm() < 1e-9);
    }
}
