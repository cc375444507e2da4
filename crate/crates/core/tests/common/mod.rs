#![allow(dead_code)]

use stripres::interaction::{assemble_interaction, coupling_table, InteractionMatrix, StateTails};
use stripres::model::GluedAssembly;
use stripres::pipeline::Prepared;
use stripres::C64;

/// Lowest eigenvalues of -u'' + V u on a Dirichlet grid by Sturm bisection.
pub fn dirichlet_levels(v: &dyn Fn(f64) -> f64, lo: f64, hi: f64, h: f64, count: usize) -> Vec<f64> {
    let n = ((hi - lo) / h).round() as usize - 1;
    let diag: Vec<f64> = (1..=n).map(|i| 2.0 / (h * h) + v(lo + i as f64 * h)).collect();
    let off2 = 1.0 / (h * h * h * h);
    let below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for (i, &a) in diag.iter().enumerate() {
            d = a - x - if i == 0 { 0.0 } else { off2 / d };
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    (0..count)
        .map(|k| {
            let (mut a, mut b) = (-20.0, 20.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if below(m) > k {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Richardson-extrapolated levels from grids h and h / 2.
pub fn extrapolated_levels(v: &dyn Fn(f64) -> f64, lo: f64, hi: f64, h: f64, count: usize) -> Vec<f64> {
    let coarse = dirichlet_levels(v, lo, hi, h, count);
    let fine = dirichlet_levels(v, lo, hi, 0.5 * h, count);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Interaction matrix after rescaling every level chain: `factor(connector, family, level)`,
/// family 0 for plus and 1 for minus.
pub fn regauged_interaction(
    p: &Prepared,
    layout: &GluedAssembly,
    factor: &mut dyn FnMut(usize, usize, usize) -> C64,
) -> InteractionMatrix {
    let mut levels = p.levels.clone();
    let mut cp = Vec::new();
    let mut cm = Vec::new();
    for (k, lv) in levels.iter_mut().enumerate() {
        cp.push(lv.plus.iter_mut().enumerate().map(|(i, e)| { let c = factor(k, 0, i); e.rescale(c); c }).collect::<Vec<_>>());
        cm.push(lv.minus.iter_mut().enumerate().map(|(i, e)| { let c = factor(k, 1, i); e.rescale(c); c }).collect::<Vec<_>>());
    }
    let rescaled = |alpha: &[Vec<C64>], c: &[C64]| -> Vec<Vec<C64>> {
        alpha.iter().zip(c).map(|(row, &c)| row.iter().map(|a| a / c).collect()).collect()
    };
    let n = layout.n();
    let tails: Vec<Vec<StateTails>> = (0..n)
        .map(|k| {
            p.tails[k]
                .iter()
                .map(|t| StateTails {
                    left: if k > 0 { rescaled(&t.left, &cm[k - 1]) } else { t.left.clone() },
                    right: if k + 1 < n { rescaled(&t.right, &cp[k]) } else { t.right.clone() },
                })
                .collect()
        })
        .collect();
    let tables: Vec<_> = levels.iter().map(coupling_table).collect();
    let decay = p.decay.as_ref().expect("decay scale");
    assemble_interaction(
        &tails,
        &levels,
        &tables,
        &layout.shifts(),
        &layout.distances(),
        decay,
        p.config.tolerances.cluster_factor,
    )
    .unwrap()
}

/// Largest entrywise change relative to the entry (or to the largest entry for zeros).
pub fn max_relative_change(a: &InteractionMatrix, b: &InteractionMatrix) -> f64 {
    let scale = a.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max);
    a.matrix
        .iter()
        .zip(b.matrix.iter())
        .map(|(x, y)| (x - y).norm() / if x.norm() > 0.0 { x.norm() } else { scale })
        .fold(0.0, f64::max)
}
