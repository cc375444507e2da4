//! Strip geometry, Galerkin reduction of scalar potentials, periodic
//! backgrounds, perturbation blocks and their gluing.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Dirichlet strip (0, width) with `modes` transverse sine modes retained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSection {
    pub width: f64,
    pub modes: usize,
}

impl CrossSection {
    pub fn new(width: f64, modes: usize) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidModel(format!("strip width must be positive, got {width}")));
        }
        if modes == 0 {
            return Err(Error::InvalidModel("at least one transverse mode is required".into()));
        }
        Ok(Self { width, modes })
    }

    /// Transverse Dirichlet eigenvalues (j pi / width)^2, j = 1..M.
    pub fn transverse_eigenvalues(&self) -> Vec<f64> {
        (1..=self.modes)
            .map(|j| (j as f64 * PI / self.width).powi(2))
            .collect()
    }

    /// Normalised transverse mode j (1-based) at xp.
    pub fn mode(&self, j: usize, xp: f64) -> f64 {
        (2.0 / self.width).sqrt() * (j as f64 * PI * xp / self.width).sin()
    }
}

/// Scalar potential V(x1, xp) as given in a configuration.
#[derive(Debug, Clone)]
pub enum ScalarPotential {
    Expression(Expr),
    /// Piecewise-linear table in x1, constant in xp.
    Table { x: Vec<f64>, values: Vec<f64> },
}

impl ScalarPotential {
    pub fn expression(text: &str) -> Result<Self> {
        Ok(Self::Expression(Expr::parse(text)?))
    }

    pub fn table(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if x.len() != values.len() || x.len() < 2 {
            return Err(Error::InvalidModel(
                "table potential needs matching x and values arrays of length >= 2".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("table x must be strictly increasing".into()));
        }
        Ok(Self::Table { x, values })
    }

    pub fn uses_xp(&self) -> bool {
        match self {
            Self::Expression(e) => e.uses_xp(),
            Self::Table { .. } => false,
        }
    }

    pub fn eval(&self, x1: f64, xp: f64) -> f64 {
        match self {
            Self::Expression(e) => e.eval(x1, xp),
            Self::Table { x, values } => interp_table(x, values, x1),
        }
    }
}

fn interp_table(x: &[f64], v: &[f64], t: f64) -> f64 {
    if t <= x[0] {
        return v[0];
    }
    let n = x.len();
    if t >= x[n - 1] {
        return v[n - 1];
    }
    let j = x.partition_point(|&xi| xi <= t) - 1;
    let s = (t - x[j]) / (x[j + 1] - x[j]);
    v[j] * (1.0 - s) + v[j + 1] * s
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre rule on the strip cross-section.
#[derive(Debug, Clone)]
pub struct TransverseQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// modes[j][q] = chi_{j+1}(nodes[q])
    modes: Vec<Vec<f64>>,
}

impl TransverseQuadrature {
    pub fn new(cs: &CrossSection) -> Self {
        let (gx, gw) = gauss_legendre(16);
        let panels = 4 * cs.modes.max(1) + 4;
        let h = cs.width / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 16);
        let mut weights = Vec::with_capacity(panels * 16);
        for p in 0..panels {
            let a = p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(a + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        let modes = (1..=cs.modes)
            .map(|j| nodes.iter().map(|&xp| cs.mode(j, xp)).collect())
            .collect();
        Self { nodes, weights, modes }
    }
}

/// Project V(x1, .) onto the transverse modes and add the transverse eigenvalues.
pub fn galerkin_project(
    v: &dyn Fn(f64, f64) -> f64,
    x1: f64,
    cs: &CrossSection,
    quad: &TransverseQuadrature,
) -> Result<DMatrix<f64>> {
    let m = cs.modes;
    let vals: Vec<f64> = quad.nodes.iter().map(|&xp| v(x1, xp)).collect();
    let mut out = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for q in 0..vals.len() {
                s += quad.weights[q] * quad.modes[a][q] * vals[q] * quad.modes[b][q];
            }
            out[(a, b)] = s;
            out[(b, a)] = s;
        }
    }
    for (j, e) in cs.transverse_eigenvalues().iter().enumerate() {
        out[(j, j)] += e;
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::QuadratureFailure(format!("potential at x1 = {x1}")));
    }
    Ok(out)
}

/// Reduce a scalar potential to an M x M matrix at x1, skipping quadrature
/// when the potential does not depend on xp.
pub fn reduce_potential(
    pot: &ScalarPotential,
    x1: f64,
    cs: &CrossSection,
    quad: &TransverseQuadrature,
) -> Result<DMatrix<f64>> {
    if pot.uses_xp() {
        galerkin_project(&|a, b| pot.eval(a, b), x1, cs, quad)
    } else {
        let v = pot.eval(x1, 0.5 * cs.width);
        if !v.is_finite() {
            return Err(Error::QuadratureFailure(format!("potential at x1 = {x1}")));
        }
        let mut out = DMatrix::from_diagonal_element(cs.modes, cs.modes, v);
        for (j, e) in cs.transverse_eigenvalues().iter().enumerate() {
            out[(j, j)] += e;
        }
        Ok(out)
    }
}

/// Samples of a real symmetric M x M potential on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSamples {
    pub modes: usize,
    data: Vec<f64>,
}

impl MatrixSamples {
    pub fn from_matrices(modes: usize, mats: &[DMatrix<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(mats.len() * modes * modes);
        for (j, m) in mats.iter().enumerate() {
            if m.nrows() != modes || m.ncols() != modes {
                return Err(Error::InvalidModel(format!("sample {j} has wrong shape")));
            }
            for r in 0..modes {
                for c in 0..modes {
                    let x = m[(r, c)];
                    if !x.is_finite() {
                        return Err(Error::InvalidModel(format!("sample {j} is not finite")));
                    }
                    if (x - m[(c, r)]).abs() > 1e-12 * (1.0 + x.abs()) {
                        return Err(Error::InvalidModel(format!("sample {j} is not Hermitian")));
                    }
                    data.push(0.5 * (x + m[(c, r)]));
                }
            }
        }
        Ok(Self { modes, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.modes * self.modes)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major slice of sample j.
    pub fn raw(&self, j: usize) -> &[f64] {
        let mm = self.modes * self.modes;
        &self.data[j * mm..(j + 1) * mm]
    }

    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.modes, self.modes, self.raw(j))
    }
}

/// One period cell of a background. Samples sit at xi_j = j T / n, j = 0..n-1,
/// and the profile wraps periodically.
#[derive(Debug, Clone)]
pub struct PeriodicBackground {
    pub id: String,
    pub period: f64,
    pub samples: MatrixSamples,
}

impl PeriodicBackground {
    pub fn new(id: impl Into<String>, period: f64, samples: MatrixSamples) -> Result<Self> {
        let id = id.into();
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidModel(format!("background {id}: period must be positive")));
        }
        if samples.len() < 16 {
            return Err(Error::InvalidModel(format!(
                "background {id}: at least 16 cell samples required, got {}",
                samples.len()
            )));
        }
        Ok(Self { id, period, samples })
    }

    pub fn from_potential(
        id: impl Into<String>,
        period: f64,
        pot: &ScalarPotential,
        cs: &CrossSection,
        n_grid: usize,
    ) -> Result<Self> {
        let quad = TransverseQuadrature::new(cs);
        let mats = (0..n_grid)
            .map(|j| reduce_potential(pot, j as f64 * period / n_grid as f64, cs, &quad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(id, period, MatrixSamples::from_matrices(cs.modes, &mats)?)
    }

    pub fn modes(&self) -> usize {
        self.samples.modes
    }

    pub fn n_grid(&self) -> usize {
        self.samples.len()
    }

    pub fn step(&self) -> f64 {
        self.period / self.n_grid() as f64
    }

    /// Sample j with periodic wrap.
    pub fn sample(&self, j: i64) -> &[f64] {
        let n = self.n_grid() as i64;
        self.samples.raw(j.rem_euclid(n) as usize)
    }

    /// Linearly interpolated value at xi (any real, wrapped).
    pub fn value_at(&self, xi: f64, out: &mut [f64]) {
        let t = xi.rem_euclid(self.period) / self.step();
        let j = t.floor();
        let s = t - j;
        let a = self.sample(j as i64);
        let b = self.sample(j as i64 + 1);
        for k in 0..out.len() {
            out[k] = a[k] * (1.0 - s) + b[k] * s;
        }
    }
}

/// Single-perturbation block: core on [-a_minus, a_plus] sampled uniformly,
/// joined to its left and right backgrounds (phase zero at each edge).
#[derive(Debug, Clone)]
pub struct PerturbationBlock {
    pub id: String,
    pub left_background: String,
    pub right_background: String,
    pub a_minus: f64,
    pub a_plus: f64,
    /// Samples at -a_minus + j h, j = 0..=n.
    pub core: MatrixSamples,
}

impl PerturbationBlock {
    pub fn new(
        id: impl Into<String>,
        left_background: impl Into<String>,
        right_background: impl Into<String>,
        a_minus: f64,
        a_plus: f64,
        core: MatrixSamples,
    ) -> Result<Self> {
        let id = id.into();
        if !(a_minus > 0.0 && a_plus > 0.0) {
            return Err(Error::InvalidModel(format!("block {id}: a_minus and a_plus must be positive")));
        }
        if core.len() < 3 {
            return Err(Error::InvalidModel(format!("block {id}: core needs at least 3 samples")));
        }
        Ok(Self {
            id,
            left_background: left_background.into(),
            right_background: right_background.into(),
            a_minus,
            a_plus,
            core,
        })
    }

    /// Sample the scalar potential on a core grid with step close to `core_step`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_potential(
        id: impl Into<String>,
        left_background: impl Into<String>,
        right_background: impl Into<String>,
        a_minus: f64,
        a_plus: f64,
        pot: &ScalarPotential,
        cs: &CrossSection,
        core_step: f64,
    ) -> Result<Self> {
        let len = a_minus + a_plus;
        let intervals = ((len / core_step).round() as usize).max(2);
        let h = len / intervals as f64;
        let quad = TransverseQuadrature::new(cs);
        let mats = (0..=intervals)
            .map(|j| reduce_potential(pot, -a_minus + j as f64 * h, cs, &quad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            id,
            left_background,
            right_background,
            a_minus,
            a_plus,
            MatrixSamples::from_matrices(cs.modes, &mats)?,
        )
    }

    pub fn modes(&self) -> usize {
        self.core.modes
    }

    pub fn intervals(&self) -> usize {
        self.core.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.a_minus + self.a_plus) / self.intervals() as f64
    }

    /// Coordinate of core sample j in the block frame.
    pub fn x_of(&self, j: usize) -> f64 {
        -self.a_minus + j as f64 * self.step()
    }

    /// Interpolated core value at x in [-a_minus, a_plus] (clamped).
    pub fn core_value(&self, x: f64, out: &mut [f64]) {
        let t = ((x + self.a_minus) / self.step()).clamp(0.0, self.intervals() as f64);
        let j = (t.floor() as usize).min(self.intervals() - 1);
        let s = t - j as f64;
        let a = self.core.raw(j);
        let b = self.core.raw(j + 1);
        for k in 0..out.len() {
            out[k] = a[k] * (1.0 - s) + b[k] * s;
        }
    }

    /// Value of the single-block operator's potential anywhere on the line.
    pub fn value_extended(&self, x: f64, left: &PeriodicBackground, right: &PeriodicBackground, out: &mut [f64]) {
        if x < -self.a_minus {
            left.value_at(x + self.a_minus, out);
        } else if x > self.a_plus {
            right.value_at(x - self.a_plus, out);
        } else {
            self.core_value(x, out);
        }
    }

    /// Largest mismatch between the core samples and the adjacent
    /// backgrounds at the two seams.
    pub fn seam_mismatch(&self, left: &PeriodicBackground, right: &PeriodicBackground) -> f64 {
        let l = self.core.raw(0);
        let r = self.core.raw(self.intervals());
        let lb = left.sample(0);
        let rb = right.sample(0);
        let mut d = 0.0f64;
        for k in 0..l.len() {
            d = d.max((l[k] - lb[k]).abs()).max((r[k] - rb[k]).abs());
        }
        d
    }
}

/// Ordered blocks glued by integer numbers of background periods.
#[derive(Debug, Clone)]
pub struct GluedAssembly {
    pub blocks: Vec<Arc<PerturbationBlock>>,
    /// backgrounds[k] sits left of blocks[k]; backgrounds[n] is the right outer one.
    pub backgrounds: Vec<Arc<PeriodicBackground>>,
    pub spacings: Vec<(u32, u32)>,
    pub positions: Vec<f64>,
}

/// Glue `blocks` with `spacings` (one pair per connector). Backgrounds are
/// looked up by id in `catalog`.
pub fn build_assembly(
    blocks: Vec<Arc<PerturbationBlock>>,
    catalog: &BTreeMap<String, Arc<PeriodicBackground>>,
    spacings: &[(i64, i64)],
) -> Result<GluedAssembly> {
    if blocks.is_empty() {
        return Err(Error::InvalidModel("an assembly needs at least one block".into()));
    }
    if spacings.len() + 1 != blocks.len() {
        return Err(Error::InvalidModel(format!(
            "{} blocks need {} spacing pairs, got {}",
            blocks.len(),
            blocks.len() - 1,
            spacings.len()
        )));
    }
    for (k, &(m, p)) in spacings.iter().enumerate() {
        if m < 1 || p < 1 {
            return Err(Error::BadSpacing { index: k + 1, minus: m, plus: p });
        }
    }
    let lookup = |id: &str| {
        catalog
            .get(id)
            .cloned()
            .ok_or_else(|| Error::InvalidModel(format!("unknown background '{id}'")))
    };
    for w in blocks.windows(2) {
        if w[0].right_background != w[1].left_background {
            return Err(Error::IncompatibleBackgrounds {
                block: w[0].id.clone(),
                right: w[0].right_background.clone(),
                next: w[1].id.clone(),
                left: w[1].left_background.clone(),
            });
        }
    }
    let modes = blocks[0].modes();
    let mut backgrounds = vec![lookup(&blocks[0].left_background)?];
    for b in &blocks {
        if b.modes() != modes {
            return Err(Error::InvalidModel("all blocks must use the same number of modes".into()));
        }
        backgrounds.push(lookup(&b.right_background)?);
    }
    if backgrounds.iter().any(|bg| bg.modes() != modes) {
        return Err(Error::InvalidModel("backgrounds and blocks disagree on the number of modes".into()));
    }
    let spacings: Vec<(u32, u32)> = spacings.iter().map(|&(m, p)| (m as u32, p as u32)).collect();
    let mut positions = vec![0.0];
    for k in 0..spacings.len() {
        let (m, p) = spacings[k];
        let t = backgrounds[k + 1].period;
        let next = positions[k] + blocks[k + 1].a_minus + blocks[k].a_plus + (m + p) as f64 * t;
        positions.push(next);
    }
    Ok(GluedAssembly { blocks, backgrounds, spacings, positions })
}

/// Where a point of the line falls inside the glued structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// Left of the first core; offset measured from the left edge of block 0 (negative).
    LeftOuter(f64),
    /// Inside core k at block coordinate x.
    Core(usize, f64),
    /// Inside connector k (between blocks k and k+1), offset from block k's right edge.
    Connector(usize, f64),
    /// Right of the last core; offset from the right edge of the last block.
    RightOuter(f64),
}

impl GluedAssembly {
    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn modes(&self) -> usize {
        self.blocks[0].modes()
    }

    /// Physical distances X^(k+1) - X^(k).
    pub fn distances(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Connector lengths (l_- + l_+) T^(k), integer multiples of the period.
    pub fn shifts(&self) -> Vec<f64> {
        self.spacings
            .iter()
            .enumerate()
            .map(|(k, &(m, p))| (m + p) as f64 * self.backgrounds[k + 1].period)
            .collect()
    }

    pub fn left_edge(&self) -> f64 {
        self.positions[0] - self.blocks[0].a_minus
    }

    pub fn right_edge(&self) -> f64 {
        let n = self.n();
        self.positions[n - 1] + self.blocks[n - 1].a_plus
    }

    pub fn region(&self, x: f64) -> Region {
        let n = self.n();
        if x < self.left_edge() {
            return Region::LeftOuter(x - self.left_edge());
        }
        for k in 0..n {
            let lo = self.positions[k] - self.blocks[k].a_minus;
            let hi = self.positions[k] + self.blocks[k].a_plus;
            if x >= lo && x <= hi {
                return Region::Core(k, x - self.positions[k]);
            }
            if k + 1 < n {
                let next_lo = self.positions[k + 1] - self.blocks[k + 1].a_minus;
                if x > hi && x < next_lo {
                    return Region::Connector(k, x - hi);
                }
            }
        }
        Region::RightOuter(x - self.right_edge())
    }

    /// Potential of the glued operator as the sum over the partition of the
    /// line into block supports, each block evaluated in its own frame.
    pub fn value_at(&self, x: f64, out: &mut [f64]) {
        let n = self.n();
        let mut k = n - 1;
        for j in 0..n - 1 {
            let (_, p) = self.spacings[j];
            let split = self.positions[j] + self.blocks[j].a_plus + p as f64 * self.backgrounds[j + 1].period;
            if x <= split {
                k = j;
                break;
            }
        }
        self.blocks[k].value_extended(
            x - self.positions[k],
            &self.backgrounds[k],
            &self.backgrounds[k + 1],
            out,
        );
    }
}

/// Sampled potential on a window.
#[derive(Debug, Clone)]
pub struct SampledPotential {
    pub x: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
}

pub fn sample_glued_potential(assembly: &GluedAssembly, window: (f64, f64), step: f64) -> SampledPotential {
    let m = assembly.modes();
    let count = (((window.1 - window.0) / step).round() as usize).max(1);
    let h = (window.1 - window.0) / count as f64;
    let mut buf = vec![0.0; m * m];
    let mut x = Vec::with_capacity(count + 1);
    let mut values = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let t = window.0 + j as f64 * h;
        assembly.value_at(t, &mut buf);
        x.push(t);
        values.push(DMatrix::from_row_slice(m, m, &buf));
    }
    SampledPotential { x, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(m: usize) -> CrossSection {
        CrossSection::new(PI, m).unwrap()
    }

    fn free(id: &str, t: f64, m: usize) -> Arc<PeriodicBackground> {
        Arc::new(
            PeriodicBackground::from_potential(id, t, &ScalarPotential::expression("0").unwrap(), &cs(m), 32)
                .unwrap(),
        )
    }

    fn block(id: &str, l: &str, r: &str, a: f64, pot: &str) -> Arc<PerturbationBlock> {
        Arc::new(
            PerturbationBlock::from_potential(id, l, r, a, a, &ScalarPotential::expression(pot).unwrap(), &cs(1), 0.01)
                .unwrap(),
        )
    }

    fn catalog(bgs: &[Arc<PeriodicBackground>]) -> BTreeMap<String, Arc<PeriodicBackground>> {
        bgs.iter().map(|b| (b.id.clone(), b.clone())).collect()
    }

    #[test]
    fn transverse_spectrum_free() {
        let c = cs(2);
        let ev = c.transverse_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 4.0).abs() < 1e-14);
        let q = TransverseQuadrature::new(&c);
        let v = galerkin_project(&|_, _| 0.0, 0.0, &c, &q).unwrap();
        assert!((v[(0, 0)] - 1.0).abs() < 1e-13 && (v[(1, 1)] - 4.0).abs() < 1e-13);
        assert!(v[(0, 1)].abs() < 1e-13);
    }

    #[test]
    fn xp_independent_potential_is_diagonal_shift() {
        let c = cs(3);
        let q = TransverseQuadrature::new(&c);
        let v = galerkin_project(&|x1, _| 2.0 + x1, 0.5, &c, &q).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 2.5 + ((a + 1) as f64).powi(2) } else { 0.0 };
                assert!((v[(a, b)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_coupling_matches_closed_form() {
        // (2/pi) * int_0^pi sin^2(x) sin(2x) dx = 0: use the independent value
        // of int sin(x) sin(x) sin(2x) via Simpson on a fine grid.
        let c = cs(2);
        let q = TransverseQuadrature::new(&c);
        let v = galerkin_project(&|_, xp| xp.sin(), 0.0, &c, &q).unwrap();
        let n = 20000;
        let h = PI / n as f64;
        let f = |x: f64| 2.0 / PI * x.sin() * x.sin() * (2.0 * x).sin();
        let mut s = f(0.0) + f(PI);
        for j in 1..n {
            s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(j as f64 * h);
        }
        s *= h / 3.0;
        assert!((v[(0, 1)] - s).abs() < 1e-12);
        assert!((v[(0, 1)] - v[(1, 0)]).abs() < 1e-15);
        // diagonal: 2/pi int sin^3 = 8/(3 pi)
        assert!((v[(0, 0)] - 1.0 - 8.0 / (3.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_failure_reported() {
        let c = cs(1);
        let q = TransverseQuadrature::new(&c);
        let err = galerkin_project(&|_, _| f64::NAN, 0.0, &c, &q).unwrap_err();
        assert!(matches!(err, Error::QuadratureFailure(_)));
    }

    #[test]
    fn two_block_positions() {
        let bg = free("F", PI, 1);
        let b = block("W", "F", "F", 1.0, "0");
        let a = build_assembly(vec![b.clone(), b], &catalog(&[bg]), &[(2, 2)]).unwrap();
        assert!((a.positions[1] - (2.0 + 4.0 * PI)).abs() < 1e-12);
        assert!((a.positions[1] - 14.566370614359172).abs() < 1e-12);
    }

    #[test]
    fn three_block_positions() {
        let bg = free("F", 1.0, 1);
        let b = block("W", "F", "F", 1.0, "0");
        let a = build_assembly(vec![b.clone(), b.clone(), b], &catalog(&[bg]), &[(1, 1), (1, 1)]).unwrap();
        assert_eq!(a.positions, vec![0.0, 4.0, 8.0]);
    }

    #[test]
    fn incompatible_backgrounds() {
        let a = free("A", 1.0, 1);
        let b = free("B", 1.0, 1);
        let x = block("X", "A", "A", 1.0, "0");
        let y = block("Y", "B", "B", 1.0, "0");
        let err = build_assembly(vec![x, y], &catalog(&[a, b]), &[(1, 1)]).unwrap_err();
        assert!(matches!(err, Error::IncompatibleBackgrounds { .. }));
    }

    #[test]
    fn bad_spacing() {
        let bg = free("F", 1.0, 1);
        let b = block("W", "F", "F", 1.0, "0");
        let err = build_assembly(vec![b.clone(), b], &catalog(&[bg]), &[(0, 2)]).unwrap_err();
        assert!(matches!(err, Error::BadSpacing { index: 1, .. }));
    }

    #[test]
    fn zero_potential_samples_zero() {
        let c = CrossSection::new(1.0, 1).unwrap();
        let zero = ScalarPotential::expression("0").unwrap();
        let bg = Arc::new(PeriodicBackground::from_potential("F", 1.0, &zero, &c, 32).unwrap());
        let b = Arc::new(PerturbationBlock::from_potential("W", "F", "F", 1.0, 1.0, &zero, &c, 0.05).unwrap());
        let a = build_assembly(vec![b.clone(), b], &catalog(&[bg]), &[(1, 2)]).unwrap();
        let s = sample_glued_potential(&a, (-5.0, 12.0), 0.1);
        let shift = PI * PI;
        assert!(s.values.iter().all(|v| (v[(0, 0)] - shift).abs() < 1e-12));
    }

    #[test]
    fn partition_matches_region_evaluation() {
        let c = cs(1);
        let cos_bg = ScalarPotential::expression("cos(2*pi*x1)").unwrap();
        let bg = Arc::new(PeriodicBackground::from_potential("P", 1.0, &cos_bg, &c, 64).unwrap());
        let w1 = Arc::new(
            PerturbationBlock::from_potential(
                "W1", "P", "P", 1.0, 1.0,
                &ScalarPotential::expression("cos(2*pi*x1) - 3*exp(-4*x1^2)").unwrap(),
                &c, 0.01,
            )
            .unwrap(),
        );
        let w2 = Arc::new(
            PerturbationBlock::from_potential(
                "W2", "P", "P", 1.0, 1.0,
                &ScalarPotential::expression("cos(2*pi*x1) - 2*exp(-9*x1^2)").unwrap(),
                &c, 0.01,
            )
            .unwrap(),
        );
        let a = build_assembly(vec![w1.clone(), w2.clone()], &catalog(std::slice::from_ref(&bg)), &[(2, 3)]).unwrap();
        let mut got = [0.0];
        let mut want = [0.0];
        for j in 0..400 {
            let x = -6.0 + j as f64 * 0.05123;
            a.value_at(x, &mut got);
            match a.region(x) {
                Region::Core(k, xl) => a.blocks[k].core_value(xl, &mut want),
                Region::LeftOuter(off) | Region::Connector(_, off) | Region::RightOuter(off) => {
                    bg.value_at(off, &mut want)
                }
            }
            assert!((got[0] - want[0]).abs() < 1e-10, "x = {x}");
        }
        // midpoint between the blocks lies on the shared background
        let mid = 0.5 * (a.positions[0] + a.positions[1]);
        assert!(matches!(a.region(mid), Region::Connector(0, _)));
        // core point equals translated core sample
        a.value_at(a.positions[1] + w2.x_of(50), &mut got);
        assert!((got[0] - w2.core.raw(50)[0]).abs() < 1e-12);
    }

    #[test]
    fn seams_continuous_for_matching_inputs() {
        let c = cs(1);
        let bgp = ScalarPotential::expression("cos(2*pi*x1)").unwrap();
        let bg = PeriodicBackground::from_potential("P", 1.0, &bgp, &c, 64).unwrap();
        let blk = PerturbationBlock::from_potential(
            "W", "P", "P", 1.0, 1.0,
            &ScalarPotential::expression("cos(2*pi*x1) - exp(-8*x1^2)*0").unwrap(),
            &c, 0.01,
        )
        .unwrap();
        assert!(blk.seam_mismatch(&bg, &bg) < 1e-10);
    }

    #[test]
    fn table_potential_interpolates() {
        let t = ScalarPotential::table(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(t.eval(0.5, 0.0), 1.0);
        assert_eq!(t.eval(2.0, 9.0), 1.0);
        assert_eq!(t.eval(-1.0, 0.0), 0.0);
        assert!(ScalarPotential::table(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
    }
}
