//! Experiment configuration (JSON) and model construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CrossSection, PerturbationBlock, PeriodicBackground, ScalarPotential};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CrossSectionConfig {
    pub width: f64,
    pub modes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialConfig {
    Expression { text: String },
    Table { x: Vec<f64>, values: Vec<f64> },
}

impl PotentialConfig {
    pub fn build(&self) -> Result<ScalarPotential> {
        match self {
            PotentialConfig::Expression { text } => ScalarPotential::expression(text),
            PotentialConfig::Table { x, values } => ScalarPotential::table(x.clone(), values.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub id: String,
    pub period: f64,
    pub potential: PotentialConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub id: String,
    pub left: String,
    pub right: String,
    pub a_minus: f64,
    pub a_plus: f64,
    pub potential: PotentialConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AssemblyConfig {
    pub block_ids: Vec<String>,
    #[serde(default)]
    pub spacings: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Samples per background period.
    pub cell_points: usize,
    /// Target sample spacing inside the cores.
    pub core_step: f64,
    /// RK4 substeps per sample interval.
    pub substeps: usize,
    /// Plane-wave cutoff of the cell problem.
    pub plane_waves: usize,
    /// Quasimomentum points per band in bands.csv.
    pub band_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { cell_points: 256, core_step: 0.005, substeps: 2, plane_waves: 32, band_points: 65 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance for block eigenvalues to count as the same lambda0.
    pub lambda0_cluster: f64,
    /// Single-linkage factor on the remainder scale.
    pub cluster_factor: f64,
    /// Disc radius constant c.
    pub radius_factor: f64,
    /// Allowed multiple of the remainder scale between prediction and root.
    pub prediction_factor: f64,
    pub derivative_floor: f64,
    pub degeneracy_floor: f64,
    pub band_margin: f64,
    /// Smallest matching singular value accepted as an eigenvalue.
    pub accept: f64,
    /// Largest |Im r| of exponents used in tail fits.
    pub strip_height: f64,
    pub max_condition: f64,
    /// Relative tolerance of the rate-fit slope against -mhat.
    pub rate_slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lambda0_cluster: 1e-9,
            cluster_factor: 10.0,
            radius_factor: 8.0,
            prediction_factor: 10.0,
            derivative_floor: 1e-6,
            degeneracy_floor: 1e-8,
            band_margin: 1e-6,
            accept: 1e-6,
            strip_height: 50.0,
            max_condition: 1e10,
            rate_slope: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Lambda0 {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for Lambda0 {
    fn default() -> Self {
        Lambda0::Auto(AutoTag::Auto)
    }
}

impl Lambda0 {
    pub fn hint(&self) -> Option<f64> {
        match self {
            Lambda0::Value(v) => Some(*v),
            Lambda0::Auto(_) => None,
        }
    }
}

/// One sweep entry: a single pair used for every connector, or one pair per connector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum SweepEntry {
    Uniform([i64; 2]),
    PerConnector(Vec<[i64; 2]>),
}

impl SweepEntry {
    pub fn expand(&self, connectors: usize) -> Result<Vec<(i64, i64)>> {
        match self {
            SweepEntry::Uniform([m, p]) => Ok(vec![(*m, *p); connectors]),
            SweepEntry::PerConnector(v) if v.len() == connectors => Ok(v.iter().map(|[m, p]| (*m, *p)).collect()),
            SweepEntry::PerConnector(v) => Err(Error::Config(format!(
                "sweep entry has {} spacing pairs, the assembly has {connectors} connectors",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cross_section: CrossSectionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub backgrounds: Vec<BackgroundConfig>,
    pub blocks: Vec<BlockConfig>,
    pub assembly: AssemblyConfig,
    #[serde(default)]
    pub lambda0: Lambda0,
    pub search_window: [f64; 2],
    #[serde(default)]
    pub sweep: Vec<SweepEntry>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> String {
    "out".into()
}

/// Parse "2,2;4,4" (one pair per entry for every connector) or
/// "2,2,3,3;4,4,5,5" (one pair per connector).
pub fn parse_spacings(text: &str) -> Result<Vec<SweepEntry>> {
    let mut out = Vec::new();
    for entry in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let nums = entry
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad spacing entry '{entry}': {e}")))?;
        if nums.len() % 2 != 0 || nums.is_empty() {
            return Err(Error::Config(format!("spacing entry '{entry}' needs an even number of integers")));
        }
        if nums.len() == 2 {
            out.push(SweepEntry::Uniform([nums[0], nums[1]]));
        } else {
            out.push(SweepEntry::PerConnector(nums.chunks(2).map(|c| [c[0], c[1]]).collect()));
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty spacing list".into()));
    }
    Ok(out)
}

/// Model objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Model {
    pub cross_section: CrossSection,
    pub backgrounds: BTreeMap<String, Arc<PeriodicBackground>>,
    pub blocks: Vec<Arc<PerturbationBlock>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn connectors(&self) -> usize {
        self.assembly.block_ids.len().saturating_sub(1)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.cross_section.width > 0.0) || self.cross_section.modes == 0 {
            return bad("cross_section needs width > 0 and modes >= 1".into());
        }
        let g = &self.grid;
        if g.cell_points < 16 || g.substeps == 0 || g.plane_waves == 0 || g.band_points < 2 || !(g.core_step > 0.0) {
            return bad("grid needs cell_points >= 16, core_step > 0, substeps, plane_waves >= 1, band_points >= 2".into());
        }
        let t = &self.tolerances;
        let positive = [
            t.lambda0_cluster,
            t.cluster_factor,
            t.radius_factor,
            t.prediction_factor,
            t.derivative_floor,
            t.degeneracy_floor,
            t.band_margin,
            t.accept,
            t.strip_height,
            t.max_condition,
            t.rate_slope,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("tolerances must be positive and finite".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.backgrounds {
            if !ids.insert(b.id.as_str()) {
                return bad(format!("duplicate background id '{}'", b.id));
            }
        }
        let mut bids = BTreeSet::new();
        for b in &self.blocks {
            if !bids.insert(b.id.as_str()) {
                return bad(format!("duplicate block id '{}'", b.id));
            }
            for side in [&b.left, &b.right] {
                if !ids.contains(side.as_str()) {
                    return bad(format!("block '{}' refers to unknown background '{side}'", b.id));
                }
            }
        }
        if self.assembly.block_ids.is_empty() {
            return bad("assembly.block_ids must not be empty".into());
        }
        for id in &self.assembly.block_ids {
            if !bids.contains(id.as_str()) {
                return bad(format!("assembly refers to unknown block '{id}'"));
            }
        }
        let [lo, hi] = self.search_window;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return bad("search_window must be an increasing pair of finite numbers".into());
        }
        if let Lambda0::Value(v) = self.lambda0 {
            if !v.is_finite() {
                return bad("lambda0 must be finite or \"auto\"".into());
            }
        }
        if self.sweep_entries().is_empty() {
            return bad("no spacings: give assembly.spacings or a nonempty sweep".into());
        }
        for e in self.sweep_entries() {
            e.expand(self.connectors())?;
        }
        Ok(())
    }

    /// The sweep, falling back to assembly.spacings as a single entry.
    pub fn sweep_entries(&self) -> Vec<SweepEntry> {
        if !self.sweep.is_empty() {
            self.sweep.clone()
        } else if self.assembly.spacings.len() == self.connectors() && (self.connectors() > 0 || self.assembly.block_ids.len() == 1) {
            vec![SweepEntry::PerConnector(self.assembly.spacings.clone())]
        } else {
            Vec::new()
        }
    }

    /// Expanded spacing lists, duplicates removed (first occurrence kept).
    pub fn spacing_list(&self) -> Result<Vec<Vec<(i64, i64)>>> {
        let mut out: Vec<Vec<(i64, i64)>> = Vec::new();
        for e in self.sweep_entries() {
            let s = e.expand(self.connectors())?;
            if out.contains(&s) {
                log::warn!("duplicate spacing entry {s:?} ignored");
                continue;
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn build_model(&self) -> Result<Model> {
        let cs = CrossSection::new(self.cross_section.width, self.cross_section.modes)?;
        let mut backgrounds = BTreeMap::new();
        for b in &self.backgrounds {
            let pot = b.potential.build()?;
            let bg = PeriodicBackground::from_potential(b.id.clone(), b.period, &pot, &cs, self.grid.cell_points)?;
            backgrounds.insert(b.id.clone(), Arc::new(bg));
        }
        let mut catalog: BTreeMap<&str, Arc<PerturbationBlock>> = BTreeMap::new();
        for b in &self.blocks {
            let pot = b.potential.build()?;
            let blk = PerturbationBlock::from_potential(
                b.id.clone(),
                b.left.clone(),
                b.right.clone(),
                b.a_minus,
                b.a_plus,
                &pot,
                &cs,
                self.grid.core_step,
            )?;
            let mismatch = blk.seam_mismatch(&backgrounds[&b.left], &backgrounds[&b.right]);
            if mismatch > 1e-6 {
                log::warn!("block {}: core and background values differ by {mismatch:.3e} at a seam", b.id);
            }
            catalog.insert(b.id.as_str(), Arc::new(blk));
        }
        let blocks = self.assembly.block_ids.iter().map(|id| catalog[id.as_str()].clone()).collect();
        Ok(Model { cross_section: cs, backgrounds, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "cross_section": {"width": 3.141592653589793, "modes": 1},
        "backgrounds": [{"id": "F", "period": 1.0, "potential": {"kind": "expression", "text": "0"}}],
        "blocks": [{"id": "W", "left": "F", "right": "F", "a_minus": 3, "a_plus": 3,
                    "potential": {"kind": "expression", "text": "-3*exp(-2*x1^2)"}}],
        "assembly": {"block_ids": ["W", "W"], "spacings": [[2, 2]]},
        "search_window": [-1.9, 0.99]
    }"#;

    #[test]
    fn defaults_and_fallback_sweep() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.lambda0, Lambda0::Auto(AutoTag::Auto));
        assert_eq!(c.grid, GridConfig::default());
        assert_eq!(c.spacing_list().unwrap(), vec![vec![(2, 2)]]);
        assert_eq!(c.output_dir, "out");
    }

    #[test]
    fn lambda0_number_and_sweep_forms() {
        let text = BASE.replace(
            "\"search_window\"",
            "\"lambda0\": 0.25, \"sweep\": [[2, 2], [[3, 3]], [2, 2]], \"search_window\"",
        );
        let c = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(c.lambda0.hint(), Some(0.25));
        assert_eq!(c.spacing_list().unwrap(), vec![vec![(2, 2)], vec![(3, 3)]]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
        let unknown = BASE.replace("\"W\", \"W\"", "\"W\", \"X\"");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config(_))));
        let typo = BASE.replace("\"search_window\"", "\"serch\": 1, \"search_window\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
        let wrong_len = BASE.replace("\"search_window\"", "\"sweep\": [[[2, 2], [3, 3]]], \"search_window\"");
        assert!(ExperimentConfig::from_json(&wrong_len).is_err());
    }

    #[test]
    fn spacing_strings() {
        assert_eq!(
            parse_spacings("2,2;4,4").unwrap(),
            vec![SweepEntry::Uniform([2, 2]), SweepEntry::Uniform([4, 4])]
        );
        assert_eq!(parse_spacings("1,2,3,4").unwrap(), vec![SweepEntry::PerConnector(vec![[1, 2], [3, 4]])]);
        assert!(parse_spacings("2,x").is_err());
        assert!(parse_spacings("2,2,2").is_err());
        assert!(parse_spacings(" ; ").is_err());
    }

    #[test]
    fn builds_model() {
        let m = ExperimentConfig::from_json(BASE).unwrap().build_model().unwrap();
        assert_eq!(m.blocks.len(), 2);
        assert_eq!(m.backgrounds["F"].n_grid(), 256);
    }
}
