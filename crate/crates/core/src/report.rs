//! Run configuration, stage orchestration and artifact emission.
//!
//! Tables are written as CSV with four decimals (round-half-even), UTF-8 and
//! LF line endings; JSON companions keep full precision. Every run ends with
//! `manifest.json`, listing input and artifact SHA-256 checksums.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::convergence::{
    fit_sar, fit_sem, lm_diagnostics, ols_fe, panel_from_coupling, ControlSeries, ConvergenceFit,
    ConvergencePanel,
};
use crate::coupling::{couple, CouplingTable, StageTaxonomy};
use crate::error::{Error, Result};
use crate::panel::{build_weight_matrix, parse_panel_csv, PanelDataset, Schema, WeightKind, WeightMatrix};
use crate::preprocess::{prepare_scores, subsystem_scores, PreparedScores, ScoreOptions, ScoreTable, WeightMethod};
use crate::shortboard::{
    analyze, county_rows, decompose_by_group, decompose_by_indicator, threshold_sweep, CountyMatrix,
    ShortboardConfig,
};
use crate::spatial::{lisa_classify, moran_permutation_test, GlobalMoranResult, LisaResult};
use crate::theil::{theil_by_dimension, theil_for_year, TheilDecomposition};

fn yes() -> bool {
    true
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    #[serde(default = "yes")]
    pub score: bool,
    #[serde(default = "yes")]
    pub coupling: bool,
    #[serde(default = "yes")]
    pub moran: bool,
    #[serde(default = "yes")]
    pub lisa: bool,
    #[serde(default = "yes")]
    pub theil: bool,
    #[serde(default = "yes")]
    pub shortboard: bool,
    #[serde(default = "yes")]
    pub converge: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            score: true,
            coupling: true,
            moran: true,
            lisa: true,
            theil: true,
            shortboard: true,
            converge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub public_service: Vec<String>,
    pub modernization: Vec<String>,
    #[serde(default = "ScoreSection::default_weighting")]
    pub weighting: WeightMethod,
    #[serde(default = "ScoreSection::default_lower")]
    pub lower_quantile: f64,
    #[serde(default = "ScoreSection::default_upper")]
    pub upper_quantile: f64,
}

impl ScoreSection {
    fn default_weighting() -> WeightMethod {
        WeightMethod::Entropy
    }
    fn default_lower() -> f64 {
        0.05
    }
    fn default_upper() -> f64 {
        0.95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    #[serde(default = "CouplingSection::default_alpha")]
    pub alpha: f64,
    /// Threshold for the per-year "below" count.
    #[serde(default = "CouplingSection::default_threshold")]
    pub count_below: f64,
}

impl CouplingSection {
    fn default_alpha() -> f64 {
        0.5
    }
    fn default_threshold() -> f64 {
        0.8
    }
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            alpha: 0.5,
            count_below: 0.8,
        }
    }
}

/// Attribute analysed by the spatial stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialVariable {
    PublicService,
    Modernization,
    Coupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoranSection {
    #[serde(default = "MoranSection::default_weights")]
    pub weights: WeightKind,
    #[serde(default = "yes")]
    pub row_standardize: bool,
    #[serde(default = "MoranSection::default_permutations")]
    pub permutations: usize,
    #[serde(default = "MoranSection::default_variable")]
    pub variable: SpatialVariable,
}

impl MoranSection {
    fn default_weights() -> WeightKind {
        WeightKind::BinaryContiguity
    }
    fn default_permutations() -> usize {
        999
    }
    fn default_variable() -> SpatialVariable {
        SpatialVariable::PublicService
    }
}

impl Default for MoranSection {
    fn default() -> Self {
        MoranSection {
            weights: WeightKind::BinaryContiguity,
            row_standardize: true,
            permutations: 999,
            variable: SpatialVariable::PublicService,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LisaSection {
    #[serde(default = "LisaSection::default_alpha")]
    pub alpha: f64,
}

impl LisaSection {
    fn default_alpha() -> f64 {
        0.05
    }
}

impl Default for LisaSection {
    fn default() -> Self {
        LisaSection { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TheilSection {
    /// Year of the per-dimension breakdown; defaults to the last year.
    #[serde(default)]
    pub dimension_year: Option<i32>,
}

fn default_sweep() -> Vec<f64> {
    vec![
        0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortboardSection {
    /// Per-indicator thresholds `X`; column medians when absent.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    /// Explicit indicator weights `Y`.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "ShortboardSection::default_weighting")]
    pub weighting: WeightMethod,
    #[serde(default = "ShortboardSection::default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
}

impl ShortboardSection {
    fn default_weighting() -> WeightMethod {
        WeightMethod::Blended
    }
    fn default_cutoff() -> f64 {
        0.5
    }
}

impl Default for ShortboardSection {
    fn default() -> Self {
        ShortboardSection {
            thresholds: None,
            weights: None,
            weighting: WeightMethod::Blended,
            cutoff: 0.5,
            sweep: default_sweep(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    #[serde(default = "ConvergeSection::default_weights")]
    pub weights: WeightKind,
    #[serde(default = "yes")]
    pub row_standardize: bool,
    /// Indicator ids whose efficacy scores (rescaled to `[0, 1]`) enter as controls.
    #[serde(default)]
    pub controls: Vec<String>,
    /// Significance level for declaring convergence.
    #[serde(default = "ConvergeSection::default_level")]
    pub level: f64,
}

impl ConvergeSection {
    fn default_weights() -> WeightKind {
        WeightKind::InverseDistance
    }
    fn default_level() -> f64 {
        0.05
    }
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            weights: WeightKind::InverseDistance,
            row_standardize: true,
            controls: Vec::new(),
            level: 0.05,
        }
    }
}

/// Strictly parsed run configuration. Input paths are relative to the
/// configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub panel: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub counties: Option<PathBuf>,
    /// GeoJSON feature collection keyed by `region_id`.
    #[serde(default)]
    pub geometry: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub stages: Stages,
    pub score: ScoreSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub moran: MoranSection,
    #[serde(default)]
    pub lisa: LisaSection,
    #[serde(default)]
    pub theil: TheilSection,
    #[serde(default)]
    pub shortboard: ShortboardSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Apply `key.path=value` to a TOML table. The value is parsed as TOML and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config("--set with empty key"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            cur.insert(part.to_string(), value);
            break;
        }
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::config(format!("--set {key}: `{part}` is not a table"))
        })?;
    }
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides and validate.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config error: {}", e.message())))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_toml(&text, base, overrides)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.score;
        if s.public_service.is_empty() || s.modernization.is_empty() {
            return Err(Error::config("score.public_service and score.modernization must list dimensions"));
        }
        if !(0.0 <= s.lower_quantile && s.lower_quantile < s.upper_quantile && s.upper_quantile <= 1.0) {
            return Err(Error::config("score quantiles must satisfy 0 <= lower < upper <= 1"));
        }
        if matches!(s.weighting, WeightMethod::Explicit) {
            return Err(Error::config("score.weighting = explicit is not supported"));
        }
        if !(0.0..=1.0).contains(&self.coupling.alpha) {
            return Err(Error::config(format!("coupling.alpha {} outside [0, 1]", self.coupling.alpha)));
        }
        if self.moran.permutations == 0 {
            return Err(Error::config("moran.permutations must be positive"));
        }
        if !(self.lisa.alpha > 0.0 && self.lisa.alpha < 1.0) {
            return Err(Error::config(format!("lisa.alpha {} outside (0, 1)", self.lisa.alpha)));
        }
        let sb = &self.shortboard;
        if !(sb.cutoff > 0.0 && sb.cutoff <= 1.0) {
            return Err(Error::config(format!("shortboard.cutoff {} outside (0, 1]", sb.cutoff)));
        }
        if sb.sweep.is_empty() || sb.sweep.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(Error::config("shortboard.sweep must hold values in (0, 1]"));
        }
        if let (Some(x), Some(y)) = (&sb.thresholds, &sb.weights) {
            if x.len() != y.len() {
                return Err(Error::config(format!(
                    "shortboard.thresholds has {} entries but shortboard.weights has {}",
                    x.len(),
                    y.len()
                )));
            }
        }
        if sb.weights.is_none() && matches!(sb.weighting, WeightMethod::Explicit) {
            return Err(Error::config("shortboard.weighting = explicit needs shortboard.weights"));
        }
        if !(self.converge.level > 0.0 && self.converge.level < 1.0) {
            return Err(Error::config("converge.level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Score,
    Coupling,
    Moran,
    Lisa,
    Theil,
    Shortboard,
    Converge,
}

impl Stage {
    pub const ANALYSIS: [Stage; 7] = [
        Stage::Score,
        Stage::Coupling,
        Stage::Moran,
        Stage::Lisa,
        Stage::Theil,
        Stage::Shortboard,
        Stage::Converge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Coupling => "coupling",
            Stage::Moran => "moran",
            Stage::Lisa => "lisa",
            Stage::Theil => "theil",
            Stage::Shortboard => "shortboard",
            Stage::Converge => "converge",
        }
    }

    fn enabled(&self, s: &Stages) -> bool {
        match self {
            Stage::Ingest => true,
            Stage::Score => s.score,
            Stage::Coupling => s.coupling,
            Stage::Moran => s.moran,
            Stage::Lisa => s.lisa,
            Stage::Theil => s.theil,
            Stage::Shortboard => s.shortboard,
            Stage::Converge => s.converge,
        }
    }
}

/// A hard error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

trait InStage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Four decimals, ties to even, no negative zero.
pub fn fmt4(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// In-memory CSV table.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEntry {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<InputEntry>,
    pub config: Value,
    pub stages: Vec<StageEntry>,
}

impl Manifest {
    pub fn read(out_dir: impl AsRef<Path>) -> Result<Self> {
        let path = out_dir.as_ref().join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest: {e}")))
    }

    /// Files listed across all stages.
    pub fn artifact_count(&self) -> usize {
        self.stages.iter().map(|s| s.files.len()).sum()
    }

    /// Recompute every artifact checksum under `out_dir`.
    pub fn verify(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        for s in &self.stages {
            for f in &s.files {
                let path = out_dir.as_ref().join(&f.file);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if sha256_hex(&bytes) != f.sha256 || bytes.len() != f.bytes {
                    return Err(Error::data(format!("checksum mismatch for {}", f.file)));
                }
            }
        }
        Ok(())
    }
}

/// Write files and collect their checksums.
struct Emitter {
    out: PathBuf,
    stages: Vec<StageEntry>,
}

impl Emitter {
    fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Emitter {
            out: out.to_path_buf(),
            stages: Vec::new(),
        })
    }

    fn write(&mut self, stage: Stage, file: &str, body: String) -> Result<()> {
        let path = self.out.join(file);
        std::fs::write(&path, body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        let entry = FileEntry {
            file: file.to_string(),
            bytes: body.len(),
            sha256: sha256_hex(body.as_bytes()),
        };
        match self.stages.iter_mut().find(|s| s.stage == stage.name()) {
            Some(s) => s.files.push(entry),
            None => self.stages.push(StageEntry {
                stage: stage.name().to_string(),
                files: vec![entry],
            }),
        }
        Ok(())
    }

    fn write_json(&mut self, stage: Stage, file: &str, v: &impl Serialize) -> Result<()> {
        let mut body = serde_json::to_string_pretty(v).map_err(|e| Error::data(format!("json: {e}")))?;
        body.push('\n');
        self.write(stage, file, body)
    }
}

/// Everything computed by one pipeline run, for callers that want results
/// without re-reading the artifacts.
#[derive(Debug, Default)]
pub struct RunOutputs {
    pub public_service: Option<ScoreTable>,
    pub modernization: Option<ScoreTable>,
    pub coupling: Option<CouplingTable>,
    pub moran: Vec<(i32, GlobalMoranResult)>,
    pub lisa: Vec<(i32, LisaResult)>,
    pub theil_years: Vec<(i32, TheilDecomposition)>,
    pub convergence: Vec<ConvergenceFit>,
    pub manifest: Option<Manifest>,
}

struct Inputs {
    schema: Schema,
    panel: PanelDataset,
    unparseable: usize,
    counties: Option<CountyMatrix>,
    geometry: Option<Value>,
    hashes: Vec<InputEntry>,
}

fn read_input(cfg: &RunConfig, role: &str, p: &Path, hashes: &mut Vec<InputEntry>) -> Result<String> {
    let path = cfg.resolve(p);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    hashes.push(InputEntry {
        role: role.to_string(),
        path: p.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
    });
    Ok(text)
}

fn load_inputs(cfg: &RunConfig, need_counties: bool) -> Result<Inputs> {
    let mut hashes = Vec::new();
    let schema_text = read_input(cfg, "schema", &cfg.schema, &mut hashes)?;
    let schema = Schema::from_json(&schema_text)?;
    let panel_text = read_input(cfg, "panel", &cfg.panel, &mut hashes)?;
    let loaded = parse_panel_csv(&panel_text, &schema)?;
    let counties = match (&cfg.counties, need_counties) {
        (Some(p), true) => {
            let m = CountyMatrix::from_csv(&read_input(cfg, "counties", p, &mut hashes)?)?;
            check_shortboard_shape(cfg, &m)?;
            Some(m)
        }
        (None, true) => return Err(Error::config("shortboard stage needs `counties`")),
        _ => None,
    };
    let geometry = match &cfg.geometry {
        Some(p) => {
            let text = read_input(cfg, "geometry", p, &mut hashes)?;
            Some(serde_json::from_str(&text).map_err(|e| Error::data(format!("geometry: {e}")))?)
        }
        None => None,
    };
    Ok(Inputs {
        schema,
        panel: loaded.panel,
        unparseable: loaded.unparseable_cells,
        counties,
        geometry,
        hashes,
    })
}

fn check_shortboard_shape(cfg: &RunConfig, m: &CountyMatrix) -> Result<()> {
    let n = m.indicators.len();
    for (key, v) in [
        ("shortboard.thresholds", &cfg.shortboard.thresholds),
        ("shortboard.weights", &cfg.shortboard.weights),
    ] {
        if let Some(v) = v {
            if v.len() != n {
                return Err(Error::config(format!(
                    "{key} has {} entries but the county matrix has {n} indicators",
                    v.len()
                )));
            }
        }
    }
    Ok(())
}

fn score_tables(cfg: &RunConfig, prepared: &PreparedScores) -> Result<(ScoreTable, ScoreTable)> {
    let ps = subsystem_scores(prepared, &cfg.score.public_service, cfg.score.weighting)?;
    let md = subsystem_scores(prepared, &cfg.score.modernization, cfg.score.weighting)?;
    Ok((ps, md))
}

fn score_csv(tables: &[&ScoreTable]) -> String {
    let mut t = Table::new(["region_id", "year", "indicator_or_dimension", "score"]);
    let first = tables[0];
    for (r, id) in first.region_ids.iter().enumerate() {
        for (y, year) in first.years.iter().enumerate() {
            for (name, table) in ["public_service", "modernization"].iter().zip(tables) {
                for (k, ind) in table.indicator_ids.iter().enumerate() {
                    t.push(vec![id.clone(), year.to_string(), ind.clone(), fmt4(table.indicator_score(r, y, k))]);
                }
                for (d, dim) in table.dimensions.iter().enumerate() {
                    t.push(vec![id.clone(), year.to_string(), dim.clone(), fmt4(table.dimension_score(r, y, d))]);
                }
                t.push(vec![id.clone(), year.to_string(), name.to_string(), fmt4(table.composite_at(r, y))]);
            }
        }
    }
    t.to_csv()
}

fn coupling_csv(c: &CouplingTable) -> String {
    let mut t = Table::new(["region_id", "year", "S1", "S2", "C", "T", "D", "type", "stage"]);
    for r in &c.records {
        t.push(vec![
            r.region_id.clone(),
            r.year.to_string(),
            fmt4(r.s1),
            fmt4(r.s2),
            fmt4(r.c),
            fmt4(r.t),
            fmt4(r.d),
            r.coupling_type.clone(),
            r.stage.clone(),
        ]);
    }
    t.to_csv()
}

fn moran_csv(rows: &[(i32, GlobalMoranResult)]) -> String {
    let mut t = Table::new([
        "year", "I", "expected", "z", "p_value", "z_normal", "p_normal", "permutations", "seed",
    ]);
    for (year, m) in rows {
        t.push(vec![
            year.to_string(),
            fmt4(m.i),
            fmt4(m.expected),
            fmt4(m.z_score),
            fmt4(m.p_value),
            fmt4(m.z_normal),
            fmt4(m.p_normal),
            m.n_permutations.to_string(),
            m.seed.to_string(),
        ]);
    }
    t.to_csv()
}

fn lisa_csv(rows: &[(i32, LisaResult)]) -> String {
    let mut t = Table::new(["region_id", "year", "local_i", "quadrant", "p_value", "significant"]);
    for (year, l) in rows {
        for (id, r) in l.region_ids.iter().zip(&l.regions) {
            t.push(vec![
                id.clone(),
                year.to_string(),
                fmt4(r.local_i),
                r.quadrant.as_str().to_string(),
                fmt4(r.p_value),
                r.significant.to_string(),
            ]);
        }
    }
    t.to_csv()
}

/// Copy `geometry` with LISA properties added to features whose
/// `properties.region_id` (or feature `id`) matches.
pub fn inject_lisa(geometry: &Value, rows: &[(i32, LisaResult)]) -> Result<Value> {
    let mut out = geometry.clone();
    let features = out
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::data("geometry is not a GeoJSON feature collection"))?;
    for f in features {
        let id = f
            .get("properties")
            .and_then(|p| p.get("region_id"))
            .or_else(|| f.get("id"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let Some(id) = id else { continue };
        if !f.get("properties").is_some_and(Value::is_object) {
            f["properties"] = json!({});
        }
        let props = f["properties"].as_object_mut().expect("object");
        for (year, l) in rows {
            if let Some(p) = l.region_ids.iter().position(|r| *r == id) {
                let r = &l.regions[p];
                props.insert(format!("lisa_{year}_local_i"), json!(r.local_i));
                props.insert(format!("lisa_{year}_quadrant"), json!(r.quadrant.as_str()));
                props.insert(format!("lisa_{year}_p_value"), json!(r.p_value));
                props.insert(format!("lisa_{year}_significant"), json!(r.significant));
            }
        }
    }
    Ok(out)
}

fn group_labels(decomps: &[(String, TheilDecomposition)]) -> Vec<String> {
    decomps
        .first()
        .map(|(_, d)| d.groups.iter().map(|g| g.group.clone()).collect())
        .unwrap_or_default()
}

/// Rows in the by-year / by-dimension layout.
pub fn theil_csv(rows: &[(String, TheilDecomposition)]) -> String {
    let groups = group_labels(rows);
    let mut header = vec!["year_or_dimension".to_string(), "T".to_string()];
    header.extend(groups.iter().map(|g| format!("within_{g}")));
    header.extend(
        ["within_value", "between_value", "within_contrib_pct", "between_contrib_pct"]
            .map(String::from),
    );
    let mut t = Table::new(header);
    for (label, d) in rows {
        let mut row = vec![label.clone(), fmt4(d.total)];
        for g in &groups {
            let term = d.groups.iter().find(|x| &x.group == g);
            row.push(term.map(|x| fmt4(x.theil)).unwrap_or_default());
        }
        row.push(fmt4(d.within));
        row.push(fmt4(d.between));
        row.push(fmt4(100.0 * d.within_contribution));
        row.push(fmt4(100.0 * d.between_contribution));
        t.push(row);
    }
    t.to_csv()
}

fn fit_column(fit: Option<&ConvergenceFit>, f: impl Fn(&ConvergenceFit) -> Option<f64>) -> String {
    fit.and_then(f).map(fmt4).unwrap_or_default()
}

/// Models as columns, estimates and diagnostics as rows.
pub fn convergence_csv(fits: &[ConvergenceFit]) -> String {
    let by = |m: &str| fits.iter().find(|f| f.model.as_str() == m);
    let cols = [by("OLS_FE"), by("SAR"), by("SEM")];
    let mut t = Table::new(["statistic", "OLS_FE", "SAR", "SEM"]);
    let mut row = |name: String, f: &dyn Fn(&ConvergenceFit) -> Option<f64>| {
        let mut r = vec![name];
        r.extend(cols.iter().map(|c| fit_column(*c, f)));
        t.push(r);
    };
    let names: Vec<String> = fits
        .first()
        .map(|f| f.coefficients.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    for (j, name) in names.iter().enumerate() {
        let label = if j == 0 { "beta".to_string() } else { name.clone() };
        row(label.clone(), &|f| Some(f.coefficients[j].estimate));
        row(format!("{label}_se"), &|f| Some(f.coefficients[j].std_error));
        row(format!("{label}_p"), &|f| Some(f.coefficients[j].p_value));
    }
    row("rho".into(), &|f| f.rho.as_ref().map(|c| c.estimate));
    row("rho_se".into(), &|f| f.rho.as_ref().map(|c| c.std_error));
    row("lambda".into(), &|f| f.lambda.as_ref().map(|c| c.estimate));
    row("lambda_se".into(), &|f| f.lambda.as_ref().map(|c| c.std_error));
    row("s".into(), &|f| Some(f.speed));
    row("log_likelihood".into(), &|f| Some(f.log_likelihood));
    row("R2".into(), &|f| Some(f.r_squared));
    for k in 0..4 {
        let label = ["LM_lag", "LM_error", "robust_LM_lag", "robust_LM_error"][k];
        row(label.into(), &|f| f.diagnostics.map(|d| d.all()[k].1.statistic));
        row(format!("{label}_p"), &|f| f.diagnostics.map(|d| d.all()[k].1.p_value));
    }
    t.to_csv()
}

fn spatial_series(cfg: &RunConfig, ps: &ScoreTable, md: &ScoreTable, c: Option<&CouplingTable>, t: usize) -> Result<Vec<f64>> {
    let n = ps.n_regions();
    Ok(match cfg.moran.variable {
        SpatialVariable::PublicService => ps.composite_year(t),
        SpatialVariable::Modernization => md.composite_year(t),
        SpatialVariable::Coupling => {
            let c = c.ok_or_else(|| Error::config("moran.variable = coupling needs the coupling stage"))?;
            (0..n).map(|r| c.d(r, t)).collect()
        }
    })
}

fn control_series(cfg: &RunConfig, prepared: &PreparedScores) -> Result<Vec<ControlSeries>> {
    let scores = &prepared.scores;
    cfg.converge
        .controls
        .iter()
        .map(|id| {
            let k = scores
                .indicator_index(id)
                .ok_or_else(|| Error::config(format!("converge.controls names unknown indicator {id}")))?;
            let values = (0..scores.n_regions())
                .flat_map(|r| (0..scores.n_years()).map(move |t| (r, t)))
                .map(|(r, t)| scores.get(r, t, k).map(|v| v / 100.0).unwrap_or(f64::NAN))
                .collect();
            Ok(ControlSeries {
                name: id.clone(),
                values,
            })
        })
        .collect()
}

fn fit_all(panel: &ConvergencePanel, w: &WeightMatrix) -> Result<Vec<ConvergenceFit>> {
    let mut ols = ols_fe(panel)?;
    ols.diagnostics = Some(lm_diagnostics(panel, &ols, w)?);
    let sar = fit_sar(panel, w)?;
    let sem = fit_sem(panel, w)?;
    Ok(vec![ols, sar, sem])
}

/// Run `stages` (dependencies are computed in memory) and write artifacts
/// plus `manifest.json` into `out_dir`.
pub fn run_pipeline(
    cfg: &RunConfig,
    out_dir: &Path,
    stages: &[Stage],
) -> std::result::Result<RunOutputs, StageError> {
    let wanted = |s: Stage| stages.contains(&s) && s.enabled(&cfg.stages);
    let inputs = load_inputs(cfg, wanted(Stage::Shortboard)).stage("ingest")?;
    let mut em = Emitter::new(out_dir).stage("ingest")?;
    let mut outputs = RunOutputs::default();

    if wanted(Stage::Ingest) {
        let summary = json!({
            "regions": inputs.panel.n_regions(),
            "years": inputs.panel.years(),
            "dimensions": inputs.schema.dimensions,
            "indicators": inputs.panel.n_indicators(),
            "missing_cells": inputs.panel.missing_count(),
            "unparseable_cells": inputs.unparseable,
        });
        em.write_json(Stage::Ingest, "ingest.json", &summary).stage("ingest")?;
    }

    let needs_scores = [Stage::Score, Stage::Coupling, Stage::Moran, Stage::Lisa, Stage::Theil, Stage::Converge]
        .into_iter()
        .any(wanted);
    if needs_scores {
        let opts = ScoreOptions {
            lower_q: cfg.score.lower_quantile,
            upper_q: cfg.score.upper_quantile,
        };
        let prepared = prepare_scores(&inputs.panel, opts).stage("score")?;
        for w in &prepared.warnings {
            log::warn!("{w}");
        }
        let (ps, md) = score_tables(cfg, &prepared).stage("score")?;
        if wanted(Stage::Score) {
            em.write(Stage::Score, "scores.csv", score_csv(&[&ps, &md])).stage("score")?;
            let doc = json!({
                "public_service": { "weights": ps.weights, "bounds": ps.bounds },
                "modernization": { "weights": md.weights, "bounds": md.bounds },
                "quantile_method": ps.quantile_method,
                "shifts": prepared.shifts,
                "imputed_cells": prepared.imputed_cells,
            });
            em.write_json(Stage::Score, "scores.json", &doc).stage("score")?;
        }

        let needs_coupling = wanted(Stage::Coupling)
            || wanted(Stage::Converge)
            || (cfg.moran.variable == SpatialVariable::Coupling && (wanted(Stage::Moran) || wanted(Stage::Lisa)));
        let coupling = if needs_coupling {
            Some(couple(&ps, &md, cfg.coupling.alpha, &StageTaxonomy::default()).stage("coupling")?)
        } else {
            None
        };
        if wanted(Stage::Coupling) {
            let c = coupling.as_ref().expect("computed");
            em.write(Stage::Coupling, "coupling.csv", coupling_csv(c)).stage("coupling")?;
            let counts: Vec<Value> = c
                .count_below(cfg.coupling.count_below)
                .into_iter()
                .map(|(y, n)| json!({"year": y, "count": n}))
                .collect();
            let doc = json!({
                "alpha": c.alpha,
                "count_below": { "threshold": cfg.coupling.count_below, "years": counts },
                "taxonomy": StageTaxonomy::default().bands(),
            });
            em.write_json(Stage::Coupling, "coupling.json", &doc).stage("coupling")?;
        }

        if wanted(Stage::Moran) || wanted(Stage::Lisa) {
            let w = build_weight_matrix(&inputs.schema.regions, cfg.moran.weights, cfg.moran.row_standardize)
                .stage("moran")?;
            w.ensure_order(&ps.region_ids).stage("moran")?;
            for (t, &year) in ps.years.iter().enumerate() {
                let y = spatial_series(cfg, &ps, &md, coupling.as_ref(), t).stage("moran")?;
                if wanted(Stage::Moran) {
                    let m = moran_permutation_test(&y, &w, cfg.moran.permutations, cfg.seed).stage("moran")?;
                    outputs.moran.push((year, m));
                }
                if wanted(Stage::Lisa) {
                    let l = lisa_classify(&y, &w, cfg.moran.permutations, cfg.seed, cfg.lisa.alpha).stage("lisa")?;
                    outputs.lisa.push((year, l));
                }
            }
            if wanted(Stage::Moran) {
                em.write(Stage::Moran, "moran.csv", moran_csv(&outputs.moran)).stage("moran")?;
                let doc: Vec<Value> = outputs.moran.iter().map(|(y, m)| json!({"year": y, "result": m})).collect();
                em.write_json(Stage::Moran, "moran.json", &doc).stage("moran")?;
            }
            if wanted(Stage::Lisa) {
                em.write(Stage::Lisa, "lisa.csv", lisa_csv(&outputs.lisa)).stage("lisa")?;
                if let Some(g) = &inputs.geometry {
                    let injected = inject_lisa(g, &outputs.lisa).stage("lisa")?;
                    em.write_json(Stage::Lisa, "lisa.geojson", &injected).stage("lisa")?;
                }
            }
        }

        if wanted(Stage::Theil) {
            let groups: Vec<String> = ps
                .region_ids
                .iter()
                .map(|id| {
                    inputs
                        .schema
                        .regions
                        .iter()
                        .find(|r| &r.id == id)
                        .map(|r| r.group.clone())
                        .unwrap_or_default()
                })
                .collect();
            let mut rows = Vec::new();
            for &year in &ps.years {
                let d = theil_for_year(&ps, year, &groups).stage("theil")?;
                outputs.theil_years.push((year, d.clone()));
                rows.push((year.to_string(), d));
            }
            let dim_year = cfg.theil.dimension_year.unwrap_or(*ps.years.last().expect("non-empty years"));
            let by_dim = theil_by_dimension(&ps, dim_year, &groups).stage("theil")?;
            rows.extend(by_dim.iter().filter(|(n, _)| n != "overall").cloned());
            em.write(Stage::Theil, "theil.csv", theil_csv(&rows)).stage("theil")?;
            let doc = json!({
                "by_year": outputs.theil_years.iter().map(|(y, d)| json!({"year": y, "decomposition": d})).collect::<Vec<_>>(),
                "by_dimension": { "year": dim_year, "rows": by_dim.iter().map(|(n, d)| json!({"dimension": n, "decomposition": d})).collect::<Vec<_>>() },
            });
            em.write_json(Stage::Theil, "theil.json", &doc).stage("theil")?;
        }

        if wanted(Stage::Converge) {
            let controls = control_series(cfg, &prepared).stage("converge")?;
            let panel = panel_from_coupling(coupling.as_ref().expect("computed"), &controls).stage("converge")?;
            let regions: Vec<_> = inputs
                .schema
                .regions
                .iter()
                .filter(|r| panel.region_ids.contains(&r.id))
                .cloned()
                .collect();
            let w = build_weight_matrix(&regions, cfg.converge.weights, cfg.converge.row_standardize)
                .and_then(|w| w.select(&panel.region_ids))
                .stage("converge")?;
            let fits = fit_all(&panel, &w).stage("converge")?;
            em.write(Stage::Converge, "convergence.csv", convergence_csv(&fits)).stage("converge")?;
            let doc = json!({
                "regions": panel.n_regions(),
                "transitions": panel.n_transitions(),
                "dropped": panel.dropped,
                "level": cfg.converge.level,
                "fits": fits.iter().map(|f| json!({
                    "fit": f,
                    "converges": f.declares_convergence(cfg.converge.level),
                })).collect::<Vec<_>>(),
            });
            em.write_json(Stage::Converge, "convergence.json", &doc).stage("converge")?;
            outputs.convergence = fits;
        }

        outputs.public_service = Some(ps);
        outputs.modernization = Some(md);
        outputs.coupling = coupling;
    }

    if wanted(Stage::Shortboard) {
        let m = inputs.counties.as_ref().expect("loaded when wanted");
        let (sweep, result, county, by_ind, by_group) = shortboard_stage(cfg, m).stage("shortboard")?;
        em.write(Stage::Shortboard, "shortboard_sweep.csv", sweep).stage("shortboard")?;
        em.write(Stage::Shortboard, "shortboard_counties.csv", county).stage("shortboard")?;
        let doc = json!({
            "config": result.config,
            "incidence": result.indices.incidence,
            "intensity": result.indices.intensity,
            "index": result.indices.index,
            "weak_count": result.indices.weak_count(),
            "weak_counties": result.counties.iter().zip(&result.indices.weak).filter(|(_, &f)| f).map(|(c, _)| c).collect::<Vec<_>>(),
            "indicator_contributions": by_ind.map(|v| result.indicators.iter().cloned().zip(v).collect::<Vec<_>>()),
            "group_contributions": by_group,
        });
        em.write_json(Stage::Shortboard, "shortboard.json", &doc).stage("shortboard")?;
    }

    let config_json = serde_json::to_value(cfg).map_err(|e| Error::data(e.to_string())).stage("manifest")?;
    let manifest = Manifest {
        tool: "regeq".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        inputs: inputs.hashes,
        config: config_json,
        stages: em.stages.clone(),
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e)).stage("manifest")?;
    outputs.manifest = Some(manifest);
    Ok(outputs)
}

type ShortboardArtifacts = (
    String,
    crate::shortboard::ShortboardResult,
    String,
    Option<Vec<f64>>,
    Option<Vec<(String, f64)>>,
);

fn shortboard_stage(cfg: &RunConfig, m: &CountyMatrix) -> Result<ShortboardArtifacts> {
    let sb = &cfg.shortboard;
    let thresholds = sb.thresholds.clone().unwrap_or_else(|| m.column_medians());
    let weights = match &sb.weights {
        Some(w) => w.clone(),
        None => m.weights(sb.weighting)?,
    };
    let config = ShortboardConfig::new(thresholds, weights, sb.cutoff)
        .map_err(|e| Error::config(format!("shortboard: {e}")))?;
    let result = analyze(m, &config)?;

    let mut sweep_t = Table::new(["threshold", "U", "weak_count", "T", "M"]);
    for r in threshold_sweep(&m.rows, &config.thresholds, &config.weights, &sb.sweep)? {
        sweep_t.push(vec![
            fmt4(r.cutoff),
            fmt4(r.incidence),
            r.weak_count.to_string(),
            fmt4(r.intensity),
            fmt4(r.index),
        ]);
    }

    let mut header = vec!["county".to_string(), "ocr".into(), "deg".into(), "ind".into()];
    header.extend(m.indicators.iter().cloned());
    let mut county_t = Table::new(header);
    for row in county_rows(&result) {
        let mut r = vec![row.county, fmt4(row.ocr), fmt4(row.deg), fmt4(row.ind)];
        r.extend(row.contributions.into_iter().map(fmt4));
        county_t.push(r);
    }
    let by_ind = decompose_by_indicator(&result);
    let by_group = m.groups.as_ref().and_then(|g| decompose_by_group(&result, g));
    Ok((sweep_t.to_csv(), result, county_t.to_csv(), by_ind, by_group))
}

/// Run `f` on a dedicated rayon pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
