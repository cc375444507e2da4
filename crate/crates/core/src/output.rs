//! Output tables, JSON dumps and serde helpers for complex data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;

use crate::bound_states::BoundStateRecord;
use crate::error::Result;
use crate::interaction::MatrixBlock;
use crate::linalg::{CMat, C64};
use crate::pencil::Family;
use crate::pipeline::{Check, Prepared, RunOutput, SpacingResult};
use crate::resonance::{RateFit, Root};

/// [re, im] pair.
pub fn ser_c64<S: Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(2))?;
    seq.serialize_element(&z.re)?;
    seq.serialize_element(&z.im)?;
    seq.end()
}

struct Pair(C64);

impl serde::Serialize for Pair {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ser_c64(&self.0, s)
    }
}

/// List of [re, im] pairs.
pub fn ser_cvec<S: Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&Pair(*z))?;
    }
    seq.end()
}

/// Nested list of [re, im] pairs, one inner list per row of a triangular table.
pub fn ser_cvec2<S: Serializer>(v: &[Vec<C64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for row in v {
        let row: Vec<Pair> = row.iter().map(|z| Pair(*z)).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Row-major list of rows of [re, im] pairs.
pub fn ser_cmat<S: Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<Pair> = (0..m.ncols()).map(|c| Pair(m[(r, c)])).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Version tag written in the first line of every CSV file.
pub const SCHEMA_VERSION: u32 = 1;

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut out = format!("# stripres {name} v{SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Plus => "plus",
        Family::Minus => "minus",
        Family::Real => "real",
    }
}

pub fn bands_csv(p: &Prepared) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (id, cell) in &p.cells {
        let Some(info) = p.spectrum.per_background.iter().find(|b| &b.id == id) else {
            continue;
        };
        let count = info.bands.len().clamp(1, cell.capacity());
        for (band, tau, e) in cell.band_table(count, p.config.grid.band_points)? {
            rows.push(vec![id.clone(), band.to_string(), num(tau), num(e)]);
        }
    }
    csv_bytes("bands.csv", &["background", "band", "tau", "energy"], rows)
}

pub fn exponents_csv(p: &Prepared) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (id, eigs) in &p.pencils {
        for (i, e) in eigs.iter().enumerate() {
            let level = p
                .levels
                .iter()
                .filter(|l| &l.background == id)
                .any(|l| l.plus.iter().chain(&l.minus).any(|x| x.exponent == e.exponent && x.cell[0][0] == e.cell[0][0]));
            rows.push(vec![
                id.clone(),
                family_name(e.family).into(),
                i.to_string(),
                e.chain_length().to_string(),
                num(e.exponent.re),
                num(e.exponent.im),
                num(e.multiplier.re),
                num(e.multiplier.im),
                num(e.chain_residual),
                level.to_string(),
            ]);
        }
    }
    csv_bytes(
        "exponents.csv",
        &[
            "background",
            "family",
            "index",
            "chain_length",
            "re_exponent",
            "im_exponent",
            "re_multiplier",
            "im_multiplier",
            "chain_residual",
            "level",
        ],
        rows,
    )
}

#[derive(Serialize)]
struct PositionedState {
    position: usize,
    #[serde(flatten)]
    record: BoundStateRecord,
}

pub fn bound_states_json(p: &Prepared) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (k, states) in p.states.iter().enumerate() {
        for (i, st) in states.iter().enumerate() {
            let fit = p.fits.get(k).and_then(|f| f.get(i));
            let left = fit.and_then(|f| f.left.as_ref());
            let right = fit.and_then(|f| f.right.as_ref());
            out.push(PositionedState {
                position: k,
                record: BoundStateRecord {
                    block: st.block.clone(),
                    eigenvalue: st.eigenvalue,
                    multiplicity: st.multiplicity,
                    index: st.index,
                    residual: st.residual,
                    alpha_left: left.map(|t| t.alpha.clone()).unwrap_or_default(),
                    alpha_right: right.map(|t| t.alpha.clone()).unwrap_or_default(),
                    rate_left: left.and_then(|t| finite(t.residual_rate)),
                    rate_right: right.and_then(|t| finite(t.residual_rate)),
                },
            });
        }
    }
    Ok(serde_json::to_vec_pretty(&out)?)
}

#[derive(Serialize)]
struct MatrixDump<'a> {
    spacings: &'a str,
    #[serde(rename = "N")]
    size: usize,
    counts: &'a [usize],
    blocks: &'a [MatrixBlock],
    #[serde(serialize_with = "ser_cvec")]
    eigenvalues: &'a [C64],
    clusters: &'a [Vec<usize>],
    cluster_threshold: f64,
    eta: f64,
    mhat: f64,
    gamma: f64,
    kappa: usize,
    min_spacing: f64,
    max_spacing: f64,
}

pub fn interaction_json(results: &[SpacingResult]) -> Result<Vec<u8>> {
    let dumps: Vec<MatrixDump> = results
        .iter()
        .map(|r| {
            let m = &r.interaction;
            MatrixDump {
                spacings: &r.label,
                size: m.size,
                counts: &m.counts,
                blocks: &m.blocks,
                eigenvalues: &m.eigenvalues,
                clusters: &m.clusters,
                cluster_threshold: m.cluster_threshold,
                eta: m.scales.eta,
                mhat: m.scales.mhat,
                gamma: m.scales.gamma,
                kappa: m.scales.kappa,
                min_spacing: m.scales.min_spacing,
                max_spacing: m.scales.max_spacing,
            }
        })
        .collect();
    Ok(serde_json::to_vec_pretty(&dumps)?)
}

/// One row of the resonance table.
#[derive(Debug, Clone, Serialize)]
pub struct ResonanceRow {
    pub spacings: String,
    pub spacing_min: f64,
    pub spacing_max: f64,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub multiplicity: usize,
    pub predicted_re: f64,
    pub predicted_im: f64,
    pub residual: f64,
    pub eta: f64,
}

pub const RESONANCE_COLUMNS: [&str; 10] = [
    "spacings",
    "spacing_min",
    "spacing_max",
    "re_lambda",
    "im_lambda",
    "multiplicity",
    "predicted_re",
    "predicted_im",
    "residual",
    "eta",
];

pub fn resonance_rows(results: &[SpacingResult]) -> Vec<ResonanceRow> {
    let mut rows = Vec::new();
    for r in results {
        let s = &r.interaction.scales;
        for root in &r.resonance.located {
            let pred = r
                .resonance
                .predicted
                .iter()
                .min_by(|a, b| (a.value - root.value).norm().partial_cmp(&(b.value - root.value).norm()).unwrap())
                .map(|p| p.value)
                .unwrap_or(C64::new(f64::NAN, f64::NAN));
            rows.push(ResonanceRow {
                spacings: r.label.clone(),
                spacing_min: s.min_spacing,
                spacing_max: s.max_spacing,
                re_lambda: root.value.re,
                im_lambda: root.value.im,
                multiplicity: root.multiplicity,
                predicted_re: pred.re,
                predicted_im: pred.im,
                residual: root.residual,
                eta: s.eta,
            });
        }
    }
    rows
}

pub fn resonances_csv(rows: &[ResonanceRow]) -> Result<Vec<u8>> {
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.spacings.clone(),
                num(r.spacing_min),
                num(r.spacing_max),
                num(r.re_lambda),
                num(r.im_lambda),
                r.multiplicity.to_string(),
                num(r.predicted_re),
                num(r.predicted_im),
                num(r.residual),
                num(r.eta),
            ]
        })
        .collect();
    csv_bytes("resonances.csv", &RESONANCE_COLUMNS, body)
}

#[derive(Serialize)]
struct SpacingSummary<'a> {
    spacings: &'a str,
    distances: &'a [f64],
    min_spacing: f64,
    max_spacing: f64,
    eta: f64,
    remainder: f64,
    disc_radius: f64,
    contour_count: usize,
    contour_points: usize,
    #[serde(serialize_with = "ser_cvec")]
    interaction_eigenvalues: &'a [C64],
    roots: &'a [Root],
    residual_ratio: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    version: u32,
    lambda0: f64,
    #[serde(rename = "N")]
    size: usize,
    counts: Vec<usize>,
    notes: Vec<String>,
    mhat: Option<f64>,
    gamma: Option<f64>,
    kappa: Option<usize>,
    verdict: &'a str,
    spacings: Vec<SpacingSummary<'a>>,
    rate_fit: Option<&'a RateFit>,
    rate_fit_note: Option<&'a str>,
    checks: &'a [Check],
}

pub fn summary_json(out: &RunOutput) -> Result<Vec<u8>> {
    let p = &out.prepared;
    let spacings = out
        .results
        .iter()
        .map(|r| {
            let s = &r.interaction.scales;
            SpacingSummary {
                spacings: &r.label,
                distances: &r.distances,
                min_spacing: s.min_spacing,
                max_spacing: s.max_spacing,
                eta: s.eta,
                remainder: s.remainder(r.interaction.size),
                disc_radius: r.resonance.radius,
                contour_count: r.resonance.contour_count,
                contour_points: r.resonance.contour_points,
                interaction_eigenvalues: &r.interaction.eigenvalues,
                roots: &r.resonance.located,
                residual_ratio: r.residual_ratio().and_then(finite),
            }
        })
        .collect();
    let summary = Summary {
        version: SCHEMA_VERSION,
        lambda0: p.lambda0,
        size: p.size(),
        counts: p.states.iter().map(|s| s.len()).collect(),
        notes: p
            .notes
            .iter()
            .enumerate()
            .filter_map(|(k, n)| n.as_ref().map(|n| format!("block {k} ({}): {n}", p.model.blocks[k].id)))
            .collect(),
        mhat: p.decay.as_ref().map(|d| d.mhat),
        gamma: p.decay.as_ref().map(|d| d.gamma),
        kappa: p.decay.as_ref().map(|d| d.kappa),
        verdict: out.verdict(),
        spacings,
        rate_fit: out.rate_fit.as_ref(),
        rate_fit_note: out.rate_fit_note.as_deref(),
        checks: &out.checks,
    };
    Ok(serde_json::to_vec_pretty(&summary)?)
}

pub fn plot_script() -> &'static str {
    "# gnuplot script for the CSV tables in this directory\n\
set datafile separator ','\n\
set key autotitle columnhead\n\
set terminal pngcairo size 900,600\n\
set output 'bands.png'\n\
set xlabel 'tau'\n\
set ylabel 'E'\n\
plot 'bands.csv' using 3:4 with points pt 7 ps 0.4 title 'bands'\n\
set output 'resonances.png'\n\
set xlabel 'Re lambda'\n\
set ylabel 'Im lambda'\n\
plot 'resonances.csv' using 4:5 with points pt 7 title 'located', \\\n\
     'resonances.csv' using 7:8 with points pt 6 title 'predicted'\n\
set output 'residuals.png'\n\
set logscale y\n\
set xlabel 'min spacing'\n\
set ylabel 'size'\n\
plot 'resonances.csv' using 2:9 with points pt 7 title 'residual', \\\n\
     'resonances.csv' using 2:10 with linespoints title 'eta'\n"
}

/// Write every artifact of a run into `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let p = &out.prepared;
    let rows = resonance_rows(&out.results);
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("bands.csv", bands_csv(p)?),
        ("exponents.csv", exponents_csv(p)?),
        ("bound_states.json", bound_states_json(p)?),
        ("interaction.json", interaction_json(&out.results)?),
        ("resonances.csv", resonances_csv(&rows)?),
        ("resonances.json", serde_json::to_vec_pretty(&rows)?),
        ("summary.json", summary_json(out)?),
        ("plots.gp", plot_script().as_bytes().to_vec()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
