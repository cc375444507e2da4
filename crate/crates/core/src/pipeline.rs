//! End-to-end orchestration: band data, lambda0, bound states, tails,
//! coupling tables, interaction matrices and the direct resonance solve.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bound_states::{tail_coefficients, BoundState, BoundStateOptions, MatchingProblem, Side, TailExpansion};
use crate::config::{ExperimentConfig, Model};
use crate::error::{Error, Result};
use crate::floquet::{essential_spectrum_edges, EssentialSpectrum, FloquetCell, FloquetOptions, Location};
use crate::interaction::{
    assemble_interaction, coupling_pairing_at, coupling_table, ConnectorLevel, CouplingTable, InteractionMatrix, StateTails,
};
use crate::linalg::{self, C64};
use crate::model::{build_assembly, GluedAssembly, PeriodicBackground};
use crate::pencil::{decay_scale, floquet_exponents, level_pairs, DecayScale, Family, PencilEigen};
use crate::propagate::monodromy_matrix;
use crate::resonance::{disc_radius, predicted_resonances, rate_fit, DirectSolver, RateFit, ResonanceOptions, ResonanceResult};

/// Outcome of one built-in invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }
}

/// Tail fits of one bound state (None on sides without a connector).
#[derive(Debug, Clone)]
pub struct StateFits {
    pub left: Option<TailExpansion>,
    pub right: Option<TailExpansion>,
}

/// Everything that does not depend on the spacings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: Model,
    pub floquet: FloquetOptions,
    pub cells: BTreeMap<String, Arc<FloquetCell>>,
    pub spectrum: EssentialSpectrum,
    pub lambda0: f64,
    /// All block eigenvalues found in the search window.
    pub candidates: Vec<f64>,
    /// Bound states at lambda0 per assembly position.
    pub states: Vec<Vec<BoundState>>,
    /// Why a block contributes no states, per position.
    pub notes: Vec<Option<String>>,
    pub fits: Vec<Vec<StateFits>>,
    pub tails: Vec<Vec<StateTails>>,
    pub pencils: BTreeMap<String, Vec<PencilEigen>>,
    pub decay: Option<DecayScale>,
    pub levels: Vec<ConnectorLevel>,
    pub tables: Vec<CouplingTable>,
    pub checks: Vec<Check>,
}

impl Prepared {
    pub fn size(&self) -> usize {
        self.states.iter().map(|s| s.len()).sum()
    }

    pub fn assembly(&self, spacings: &[(i64, i64)]) -> Result<GluedAssembly> {
        build_assembly(self.model.blocks.clone(), &self.model.backgrounds, spacings)
    }

    fn resonance_options(&self) -> ResonanceOptions {
        let g = &self.config.grid;
        ResonanceOptions {
            substeps: g.substeps,
            radius_factor: self.config.tolerances.radius_factor,
            floquet: self.floquet,
            ..ResonanceOptions::default()
        }
    }
}

/// Results for one spacing entry.
#[derive(Debug, Clone, Serialize)]
pub struct SpacingResult {
    pub label: String,
    pub spacings: Vec<(u32, u32)>,
    pub distances: Vec<f64>,
    pub interaction: InteractionMatrix,
    pub resonance: ResonanceResult,
}

impl SpacingResult {
    /// Largest |lambda - lambda0| over the located roots.
    pub fn max_shift(&self, lambda0: f64) -> Option<f64> {
        self.resonance
            .located
            .iter()
            .map(|r| (r.value - lambda0).norm())
            .reduce(f64::max)
    }

    /// Largest relative deviation |lambda - lambda0 - Lambda| / |Lambda| over the roots.
    pub fn residual_ratio(&self) -> Option<f64> {
        let lam = self.interaction.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if lam == 0.0 || self.resonance.located.is_empty() {
            return None;
        }
        Some(self.resonance.located.iter().map(|r| r.residual / lam).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub results: Vec<SpacingResult>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_note: Option<String>,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn verdict(&self) -> &'static str {
        if self.prepared.size() == 0 {
            "no bound states at lambda0: no resonances in its vicinity"
        } else if self.checks.iter().all(|c| c.passed) {
            "all checks passed"
        } else {
            "some checks failed"
        }
    }
}

fn bound_options(cfg: &ExperimentConfig) -> BoundStateOptions {
    let t = &cfg.tolerances;
    BoundStateOptions {
        substeps: cfg.grid.substeps,
        accept: t.accept,
        band_margin: t.band_margin,
        max_condition: t.max_condition,
        ..BoundStateOptions::default()
    }
}

fn location_of(spectrum: &EssentialSpectrum, id: &str) -> Option<Location> {
    spectrum.per_background.iter().find(|b| b.id == id).and_then(|b| b.location)
}

/// Reject lambda0 in or at the edge of a connecting background's spectrum,
/// and at a band edge of the outer backgrounds.
fn check_lambda0(model_bgs: &[Arc<PeriodicBackground>], spectrum: &EssentialSpectrum, lambda0: f64) -> Result<()> {
    let n = model_bgs.len() - 1;
    for (k, bg) in model_bgs.iter().enumerate() {
        let inner = k > 0 && k < n;
        match location_of(spectrum, &bg.id) {
            Some(Location::Edge) => {
                return Err(Error::BandEdgeAt { background: bg.id.clone(), tau: f64::NAN, derivative: 0.0 });
            }
            Some(Location::Inside) if inner => {
                return Err(Error::Lambda0InMiddleEssentialSpectrum { background: bg.id.clone(), lambda0 });
            }
            _ => {}
        }
    }
    Ok(())
}

fn spectrum_at(cells: &[&FloquetCell], cfg: &ExperimentConfig, lambda0: f64) -> Result<EssentialSpectrum> {
    let [lo, hi] = cfg.search_window;
    essential_spectrum_edges(cells, (lo.min(lambda0), hi.max(lambda0)), Some(lambda0))
}

/// Spacing-independent stages.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    if config.assembly.block_ids.len() < 2 {
        return Err(Error::Config("the assembly needs at least two blocks".into()));
    }
    let model = config.build_model()?;
    let spacings = config.spacing_list()?;
    let layout = build_assembly(model.blocks.clone(), &model.backgrounds, &spacings[0])?;
    let tol = &config.tolerances;
    let floquet = FloquetOptions {
        plane_waves: config.grid.plane_waves,
        degeneracy_floor: tol.degeneracy_floor,
        derivative_floor: tol.derivative_floor,
        band_margin: tol.band_margin,
        substeps: config.grid.substeps,
        ..FloquetOptions::default()
    };
    let cells: BTreeMap<String, Arc<FloquetCell>> = model
        .backgrounds
        .iter()
        .map(|(id, bg)| (id.clone(), Arc::new(FloquetCell::new(bg, &floquet))))
        .collect();
    let used: Vec<&FloquetCell> = {
        let mut ids: Vec<&str> = layout.backgrounds.iter().map(|b| b.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        ids.iter().map(|id| cells[*id].as_ref()).collect()
    };
    if let Some(h) = config.lambda0.hint() {
        check_lambda0(&layout.backgrounds, &spectrum_at(&used, config, h)?, h)?;
    }

    // bound states of every distinct block over the search window
    let window = (config.search_window[0], config.search_window[1]);
    let opts = bound_options(config);
    let n = layout.n();
    let mut by_id: BTreeMap<String, Option<Arc<MatchingProblem>>> = BTreeMap::new();
    let mut found: BTreeMap<String, Vec<BoundState>> = BTreeMap::new();
    let mut notes: Vec<Option<String>> = vec![None; n];
    for (k, blk) in layout.blocks.iter().enumerate() {
        if by_id.contains_key(&blk.id) {
            if by_id[&blk.id].is_none() {
                notes[k] = Some("search window overlaps an outer band".into());
            }
            continue;
        }
        let (left, right) = (&layout.backgrounds[k], &layout.backgrounds[k + 1]);
        let bs = essential_spectrum_edges(&[cells[&left.id].as_ref(), cells[&right.id].as_ref()], window, None)?;
        let touches = bs.intervals.iter().any(|&(a, b)| a <= window.1 + tol.band_margin && b >= window.0 - tol.band_margin);
        if touches {
            // only an outer background may carry continuous spectrum here
            let inner_touch = [(k, left), (k + 1, right)].iter().any(|(pos, bg)| {
                *pos > 0 && *pos < n && {
                    let s = essential_spectrum_edges(&[cells[&bg.id].as_ref()], window, None);
                    s.map(|s| !s.intervals.is_empty()).unwrap_or(true)
                }
            });
            if inner_touch {
                let edge = bs.intervals[0].0;
                return Err(Error::WindowTouchesBand { block: blk.id.clone(), edge });
            }
            by_id.insert(blk.id.clone(), None);
            notes[k] = Some("search window overlaps an outer band".into());
            continue;
        }
        let reference = 0.5 * (window.0 + window.1);
        let p = MatchingProblem::new(blk.clone(), left.clone(), right.clone(), reference, opts.clone())?;
        let st = p.discrete_eigenvalues(window, Some(&bs))?;
        found.insert(blk.id.clone(), st);
        by_id.insert(blk.id.clone(), Some(Arc::new(p)));
    }
    let mut candidates: Vec<f64> = found.values().flatten().map(|s| s.eigenvalue).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let chosen = match config.lambda0.hint() {
        Some(h) => candidates.iter().copied().min_by(|a, b| (a - h).abs().partial_cmp(&(b - h).abs()).unwrap()),
        None => candidates.first().copied(),
    };
    let same = |x: f64, y: f64| (x - y).abs() <= tol.lambda0_cluster * (1.0 + y.abs());
    let lambda0 = match chosen {
        Some(c) => {
            let members: Vec<f64> = candidates.iter().copied().filter(|&x| same(x, c)).collect();
            members.iter().sum::<f64>() / members.len() as f64
        }
        None => config.lambda0.hint().unwrap_or(0.5 * (window.0 + window.1)),
    };
    let spectrum = spectrum_at(&used, config, lambda0)?;
    check_lambda0(&layout.backgrounds, &spectrum, lambda0)?;
    let states: Vec<Vec<BoundState>> = layout
        .blocks
        .iter()
        .map(|b| {
            found
                .get(&b.id)
                .map(|v| v.iter().filter(|s| same(s.eigenvalue, lambda0)).cloned().collect())
                .unwrap_or_default()
        })
        .collect();

    // Floquet exponents of every background at lambda0
    let mut pencils: BTreeMap<String, Vec<PencilEigen>> = BTreeMap::new();
    for bg in &layout.backgrounds {
        if !pencils.contains_key(&bg.id) {
            let e = floquet_exponents(bg, lambda0, tol.strip_height, config.grid.substeps)?;
            pencils.insert(bg.id.clone(), e);
        }
    }
    let mut checks = model_checks(&layout, &pencils, lambda0, config.grid.substeps)?;

    let size: usize = states.iter().map(|s| s.len()).sum();
    let mut prepared = Prepared {
        config: config.clone(),
        model,
        floquet,
        cells,
        spectrum,
        lambda0,
        candidates,
        states,
        notes,
        fits: Vec::new(),
        tails: Vec::new(),
        pencils,
        decay: None,
        levels: Vec::new(),
        tables: Vec::new(),
        checks: Vec::new(),
    };
    if size == 0 {
        prepared.checks = checks;
        return Ok(prepared);
    }

    let connector_pencils: Vec<Vec<PencilEigen>> =
        (1..n).map(|k| prepared.pencils[&layout.backgrounds[k].id].clone()).collect();
    let decay = decay_scale(&layout, &connector_pencils, lambda0)?;
    let mut levels = Vec::with_capacity(n - 1);
    for (k, eigs) in connector_pencils.iter().enumerate() {
        let pairs = level_pairs(eigs, decay.mhat);
        levels.push(ConnectorLevel {
            background: layout.backgrounds[k + 1].id.clone(),
            period: layout.backgrounds[k + 1].period,
            plus: pairs.iter().map(|&(i, _)| eigs[i].clone()).collect(),
            minus: pairs.iter().map(|&(_, j)| eigs[j].clone()).collect(),
        });
    }
    let tables: Vec<CouplingTable> = levels.iter().map(coupling_table).collect();
    checks.push(translate_check(&levels));

    let mut fits = Vec::with_capacity(n);
    let mut tails = Vec::with_capacity(n);
    for k in 0..n {
        let mut f_k = Vec::new();
        let mut t_k = Vec::new();
        for st in &prepared.states[k] {
            let left = if k > 0 {
                side_fit(st, Side::Left, &connector_pencils[k - 1], &levels[k - 1], &decay, &opts)?
            } else {
                None
            };
            let right = if k + 1 < n {
                side_fit(st, Side::Right, &connector_pencils[k], &levels[k], &decay, &opts)?
            } else {
                None
            };
            t_k.push(StateTails {
                left: left.as_ref().map(|f| f.alpha.clone()).unwrap_or_default(),
                right: right.as_ref().map(|f| f.alpha.clone()).unwrap_or_default(),
            });
            f_k.push(StateFits { left, right });
        }
        fits.push(f_k);
        tails.push(t_k);
    }
    prepared.decay = Some(decay);
    prepared.levels = levels;
    prepared.tables = tables;
    prepared.fits = fits;
    prepared.tails = tails;
    checks.push(gauge_check(&prepared, &layout)?);
    prepared.checks = checks;
    Ok(prepared)
}

fn side_fit(
    st: &BoundState,
    side: Side,
    eigs: &[PencilEigen],
    level: &ConnectorLevel,
    decay: &DecayScale,
    opts: &BoundStateOptions,
) -> Result<Option<TailExpansion>> {
    let family = match side {
        Side::Left => Family::Minus,
        Side::Right => Family::Plus,
    };
    let chains: Vec<PencilEigen> = eigs.iter().filter(|e| e.family == family).cloned().collect();
    let wanted = match side {
        Side::Left => &level.minus,
        Side::Right => &level.plus,
    };
    if wanted.is_empty() {
        return Ok(None);
    }
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            chains
                .iter()
                .position(|c| c.exponent == w.exponent && c.cell[0][0] == w.cell[0][0])
                .ok_or_else(|| Error::Numerical("level chain missing from the exponent list".into()))
        })
        .collect::<Result<_>>()?;
    tail_coefficients(st, side, &chains, &idx, decay.gamma, decay.mhat, opts).map(Some)
}

fn model_checks(
    layout: &GluedAssembly,
    pencils: &BTreeMap<String, Vec<PencilEigen>>,
    lambda0: f64,
    substeps: usize,
) -> Result<Vec<Check>> {
    let mut det_err: f64 = 0.0;
    let mut conj_err: f64 = 0.0;
    let mut chain_err: f64 = 0.0;
    let mut seen: Vec<&str> = Vec::new();
    for bg in &layout.backgrounds {
        if seen.contains(&bg.id.as_str()) {
            continue;
        }
        seen.push(&bg.id);
        let m = monodromy_matrix(bg, C64::new(lambda0, 0.0), substeps)?;
        det_err = det_err.max((m.determinant() - 1.0).norm());
        let eigs = &pencils[&bg.id];
        for p in eigs.iter().filter(|e| e.family == Family::Plus) {
            let d = eigs
                .iter()
                .filter(|e| e.family == Family::Minus)
                .map(|e| (e.exponent - p.exponent.conj()).norm())
                .fold(f64::INFINITY, f64::min);
            conj_err = conj_err.max(d);
        }
        for e in eigs {
            chain_err = chain_err.max(e.chain_residual);
        }
    }
    Ok(vec![
        Check::new("monodromy_unimodular", det_err <= 1e-9, format!("max |det M - 1| = {det_err:.3e}")),
        Check::new("exponent_conjugacy", conj_err <= 1e-9, format!("max |r- - conj(r+)| = {conj_err:.3e}")),
        Check::new("chain_residuals", chain_err <= 1e-7, format!("max chain residual = {chain_err:.3e}")),
    ])
}

fn translate_check(levels: &[ConnectorLevel]) -> Check {
    let mut spread: f64 = 0.0;
    for lv in levels {
        for p in &lv.plus {
            for q in &lv.minus {
                for s in 0..p.chain_length() {
                    for t in 0..q.chain_length() {
                        let k1 = coupling_pairing_at(p, s, q, t, 1);
                        let scale = k1.norm().max(1e-300);
                        for cells in [2, 3] {
                            let kc = coupling_pairing_at(p, s, q, t, cells);
                            if k1.norm() > 0.0 || kc.norm() > 0.0 {
                                spread = spread.max((kc - k1).norm() / scale);
                            }
                        }
                    }
                }
            }
        }
    }
    Check::new("coupling_translate_independence", spread <= 1e-8, format!("max relative spread = {spread:.3e}"))
}

/// Rescale every level chain by a random complex factor and compare the
/// interaction matrices built before and after.
fn gauge_check(p: &Prepared, layout: &GluedAssembly) -> Result<Check> {
    let decay = p.decay.as_ref().expect("decay scale");
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed);
    let mut factor = || {
        let r = 0.5 + 1.5 * rng.random::<f64>();
        C64::from_polar(r, 2.0 * std::f64::consts::PI * rng.random::<f64>())
    };
    let mut levels = p.levels.clone();
    let mut plus_c = Vec::new();
    let mut minus_c = Vec::new();
    for lv in &mut levels {
        let pc: Vec<C64> = lv.plus.iter_mut().map(|e| {
            let c = factor();
            e.rescale(c);
            c
        }).collect();
        let mc: Vec<C64> = lv.minus.iter_mut().map(|e| {
            let c = factor();
            e.rescale(c);
            c
        }).collect();
        plus_c.push(pc);
        minus_c.push(mc);
    }
    let n = layout.n();
    let tails: Vec<Vec<StateTails>> = (0..n)
        .map(|k| {
            p.tails[k]
                .iter()
                .map(|t| StateTails {
                    left: t.left.iter().enumerate().map(|(i, row)| row.iter().map(|a| a / minus_c[k - 1][i]).collect()).collect(),
                    right: t.right.iter().enumerate().map(|(i, row)| row.iter().map(|a| a / plus_c[k][i]).collect()).collect(),
                })
                .collect()
        })
        .collect();
    let tables: Vec<CouplingTable> = levels.iter().map(coupling_table).collect();
    let f = p.config.tolerances.cluster_factor;
    let (gaps, dist) = (layout.shifts(), layout.distances());
    let a = assemble_interaction(&p.tails, &p.levels, &p.tables, &gaps, &dist, decay, f)?;
    let b = assemble_interaction(&tails, &levels, &tables, &gaps, &dist, decay, f)?;
    let scale = linalg::max_abs(&a.matrix);
    let diff = linalg::max_abs(&(&a.matrix - &b.matrix));
    let rel = if scale > 0.0 { diff / scale } else { diff };
    Ok(Check::new("gauge_invariance", rel <= 1e-10, format!("max relative entry change = {rel:.3e}")))
}

fn label(spacings: &[(i64, i64)]) -> String {
    spacings.iter().map(|(m, p)| format!("{m},{p}")).collect::<Vec<_>>().join(";")
}

/// Interaction matrix for one spacing entry.
pub fn interaction_at(p: &Prepared, assembly: &GluedAssembly) -> Result<InteractionMatrix> {
    let decay = p.decay.as_ref().ok_or(Error::EmptyProblem)?;
    assemble_interaction(
        &p.tails,
        &p.levels,
        &p.tables,
        &assembly.shifts(),
        &assembly.distances(),
        decay,
        p.config.tolerances.cluster_factor,
    )
}

/// Interaction matrix, predictions and direct solve for one spacing entry.
pub fn solve_spacing(p: &Prepared, spacings: &[(i64, i64)]) -> Result<SpacingResult> {
    let assembly = p.assembly(spacings)?;
    let matrix = interaction_at(p, &assembly)?;
    let predicted = predicted_resonances(&matrix, p.lambda0);
    let radius = disc_radius(&matrix, p.config.tolerances.radius_factor);
    let distances = assembly.distances();
    let stored = assembly.spacings.clone();
    let solver = DirectSolver::new(assembly, p.lambda0, p.resonance_options())?;
    let resonance = solver.locate_resonances(p.lambda0, radius, &predicted, matrix.size)?;
    Ok(SpacingResult { label: label(spacings), spacings: stored, distances, interaction: matrix, resonance })
}

/// Full run over the configured sweep with at most `jobs` parallel entries.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    let prepared = prepare(config)?;
    let spacings = config.spacing_list()?;
    if prepared.size() == 0 {
        log::info!("no bound states at lambda0 = {}: no resonances in its vicinity", prepared.lambda0);
        let checks = prepared.checks.clone();
        return Ok(RunOutput { prepared, results: Vec::new(), rate_fit: None, rate_fit_note: None, checks });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let results: Vec<SpacingResult> =
        pool.install(|| spacings.par_iter().map(|s| solve_spacing(&prepared, s)).collect::<Result<Vec<_>>>())?;
    let mut checks = prepared.checks.clone();
    checks.extend(sweep_checks(&prepared, &results));
    let (rate_fit, rate_fit_note) = if results.len() >= 3 {
        let series: Vec<(f64, f64, f64)> = results
            .iter()
            .filter_map(|r| {
                let s = &r.interaction.scales;
                r.max_shift(prepared.lambda0).map(|d| (s.min_spacing, s.max_spacing, d))
            })
            .collect();
        match rate_fit(&series) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    if let (Some(f), Some(d)) = (&rate_fit, &prepared.decay) {
        let nonzero = results.iter().all(|r| r.interaction.eigenvalues.iter().any(|z| z.norm() > 0.0));
        if nonzero {
            let rel = (f.slope + d.mhat).abs() / d.mhat;
            checks.push(Check::new(
                "rate_fit_slope",
                rel <= config.tolerances.rate_slope,
                format!("slope {:.6} vs -mhat = {:.6} (relative {rel:.3e})", f.slope, -d.mhat),
            ));
        }
    }
    Ok(RunOutput { prepared, results, rate_fit, rate_fit_note, checks })
}

fn sweep_checks(p: &Prepared, results: &[SpacingResult]) -> Vec<Check> {
    let mut out = Vec::new();
    let over = results.iter().filter(|r| r.resonance.contour_count > r.interaction.size).count();
    out.push(Check::new("count_bound", over == 0, format!("{over} contours exceed N")));
    let im = results
        .iter()
        .flat_map(|r| r.resonance.located.iter().map(|x| x.value.im))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::new(
        "half_plane",
        im <= 1e-10,
        if im.is_finite() { format!("max Im lambda = {im:.3e}") } else { "no roots".into() },
    ));
    let factor = p.config.tolerances.prediction_factor;
    if let Some(last) = results.iter().max_by(|a, b| a.interaction.scales.min_spacing.partial_cmp(&b.interaction.scales.min_spacing).unwrap()) {
        let bound = factor * last.interaction.scales.remainder(last.interaction.size);
        let worst = last.resonance.located.iter().map(|r| r.residual).fold(0.0, f64::max);
        out.push(Check::new(
            "prediction_agreement",
            worst <= bound,
            format!("largest spacing {}: residual {worst:.3e} vs bound {bound:.3e}", last.label),
        ));
    }
    let ratios: Vec<f64> = results.iter().filter_map(|r| r.residual_ratio()).collect();
    if ratios.len() >= 2 && ratios.len() == results.len() {
        let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
        out.push(Check::new("residual_ratio_decreasing", decreasing, format!("ratios {}", ratios.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(", "))));
    }
    let scale: Vec<f64> = results
        .iter()
        .map(|r| r.interaction.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max) / r.interaction.scales.eta)
        .filter(|v| *v > 0.0)
        .collect();
    if scale.len() >= 2 {
        let (lo, hi) = scale.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        out.push(Check::new("scale_law", hi <= 4.0 * lo, format!("max|Lambda|/eta in [{lo:.3e}, {hi:.3e}]")));
    }
    out
}
