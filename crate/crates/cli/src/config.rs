//! TOML run configuration shared by all subcommands, with strict unknown-key
//! rejection and `section.key=value` command-line overrides.

use les_core::analysis::{Axis, WaterCharges};
use les_core::descriptor::DescriptorConfig;
use les_core::md::MdProtocol;
use les_core::model::LrSettings;
use les_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for model parameter initialization.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    /// Required by `train`; `eval`/`md` read it from the checkpoint.
    pub descriptor: Option<DescriptorConfig>,
    #[serde(default)]
    pub lr: LrSettings,
    #[serde(default)]
    pub heads: HeadsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub md: Option<MdProtocol>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled training set (extxyz).
    pub train: Option<PathBuf>,
    /// Labeled held-out set for `eval`.
    pub test: Option<PathBuf>,
    /// Initial configuration for `md`.
    pub init: Option<PathBuf>,
    /// Trajectory input for `analyze`.
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadsConfig {
    /// Hidden layer widths of the energy head.
    pub sr_hidden: Vec<usize>,
    /// Hidden layer widths of the charge head.
    pub lr_hidden: Vec<usize>,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        HeadsConfig { sr_hidden: vec![32, 16], lr_hidden: vec![16] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Species pair for `analyze rdf`.
    pub pair: [String; 2],
    pub r_max: f64,
    pub n_bins: usize,
    /// Axis for profiles and the k-space correlation.
    pub axis: Axis,
    /// Number of wavenumbers for `analyze dipolecorr`.
    pub n_kmax: usize,
    /// Hydrogen point charge (e) for dipole assignment.
    pub q_h: f64,
    /// Oxygen point charge (e).
    pub q_o: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let charges = WaterCharges::default();
        AnalysisConfig {
            pair: ["O".to_string(), "O".to_string()],
            r_max: 5.0,
            n_bins: 100,
            axis: Axis::Z,
            n_kmax: 8,
            q_h: charges.q_h,
            q_o: charges.q_o,
        }
    }
}

impl AnalysisConfig {
    pub fn charges(&self) -> WaterCharges {
        WaterCharges { q_h: self.q_h, q_o: self.q_o }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory all output files are written to.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Load the TOML file, apply `section.key=value` overrides in order, and
/// deserialize strictly (unknown keys anywhere are an error).
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut table: toml::Table =
        text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    RunConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not of the form key.path=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override {spec:?} has an empty key segment"));
    }
    let mut cur = root;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override {spec:?}: {k} is not a table"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Interpret the right-hand side as a TOML value (numbers, booleans, arrays,
/// quoted strings); anything that does not parse is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    if let Ok(t) = format!("x = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("x") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}
