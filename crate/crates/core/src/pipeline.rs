//! Stage orchestration for the 3 x 3 experiment matrix (models x input
//! representations): config, on-disk stage artifacts, run manifest and the
//! cross-representation comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate, roc_auc, EvalError, EvalInput, MetricReport, RocCurve};
use crate::grid::{
    format_ascii_grid, parse_ascii_grid, resample, stack, Grid, GridError, GridStack, Resampling,
};
use crate::map::{classify, infer_raster, jenks_breaks, occupancy, MapError, OccupancyReport};
use crate::nn::{
    build_cnn1d, build_cnn2d, build_vit, predict_batch, train, Arch, Checkpoint, Dataset, ModelSpec, NnError,
    TrainConfig,
};
use crate::reduce::{
    collinearity, fit_standardizer, pca_fit, pca_hash, select_k, standardize_stack, transform_stack, PcaModel,
    ReduceError,
};
use crate::sampling::{
    model_input, parse_inventory, sample_negatives, split, window_feasible, FeatureMatrix, InventoryPoint,
    SampleSet, SamplingError, Split,
};
use crate::synth::{gen_scene, is_categorical, SceneConfig, SynthError};
use crate::util::{derive_seed, rng, sha256_hex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Validation(String),
    #[error("missing {artifact}; run `{stage}` first")]
    Missing { artifact: String, stage: Stage },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("incomplete experiment matrix: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// 2 for invalid configuration, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Synth(SynthError::Config(_)) => 2,
            _ => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn invalid(key: &str, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Validation(format!("{key}: {msg}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Diagnose,
    Sample,
    Train,
    Evaluate,
    Map,
    Report,
    Synth,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Diagnose,
        Stage::Sample,
        Stage::Train,
        Stage::Evaluate,
        Stage::Map,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Diagnose => "diagnose",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Map => "map",
            Stage::Report => "report",
            Stage::Synth => "synth",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Lcf,
    EmbedPca,
    EmbedFull,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Representation::Lcf, Representation::EmbedPca, Representation::EmbedFull];

    pub fn name(&self) -> &'static str {
        match self {
            Representation::Lcf => "lcf",
            Representation::EmbedPca => "embed_pca",
            Representation::EmbedFull => "embed_full",
        }
    }

    pub fn source(&self) -> StackSource {
        match self {
            Representation::Lcf => StackSource::Lcf,
            _ => StackSource::Embed,
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The two input stacks a run can ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackSource {
    Lcf,
    Embed,
}

impl StackSource {
    pub fn name(&self) -> &'static str {
        match self {
            StackSource::Lcf => "lcf",
            StackSource::Embed => "embed",
        }
    }
}

fn order_key(rep: Representation, arch: Arch) -> (usize, usize) {
    (
        Arch::ALL.iter().position(|a| *a == arch).unwrap(),
        Representation::ALL.iter().position(|r| *r == rep).unwrap(),
    )
}

/// Identifier of one matrix cell, used for artifact names.
pub fn cell_id(rep: Representation, arch: Arch) -> String {
    format!("{}_{}", rep.name(), arch.name())
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackEntry {
    pub name: String,
    pub path: PathBuf,
    pub kind: BandKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub lcf_manifest: Option<PathBuf>,
    pub embed_manifest: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            lcf_manifest: None,
            embed_manifest: None,
            inventory: None,
            mask: None,
            output_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub buffer_m: f64,
    /// Negatives per landslide.
    pub ratio: f64,
    pub train_fraction: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            buffer_m: 150.0,
            ratio: 1.0,
            train_fraction: 0.7,
            window: 11,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub threshold: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub permutations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            permutations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub n_classes: usize,
    pub jenks_cap: usize,
    /// Matrix cells to map; both default to the full matrix.
    pub models: Vec<Arch>,
    pub representations: Vec<Representation>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            jenks_cap: 10_000,
            models: Arch::ALL.to_vec(),
            representations: Representation::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub representations: Vec<Representation>,
    pub models: Vec<Arch>,
    pub sampling: SamplingConfig,
    pub pca: PcaConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
    pub map: MapConfig,
    pub synth: SceneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            representations: Representation::ALL.to_vec(),
            models: Arch::ALL.to_vec(),
            sampling: SamplingConfig::default(),
            pca: PcaConfig::default(),
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
            map: MapConfig::default(),
            synth: SceneConfig::default(),
        }
    }
}

/// Where each protocol default comes from.
pub const DEFAULT_SOURCES: [(&str, &str); 7] = [
    ("sampling.buffer_m", "150 m: published study design, negatives drawn outside a buffer around landslides"),
    ("sampling.ratio", "1:1: published study design, balanced landslide / non-landslide samples"),
    ("sampling.train_fraction", "0.7: published study design, 7:3 training / validation split"),
    ("sampling.window", "11: published study design, 11 x 11 patches for spatial models"),
    ("pca.threshold", "0.90: published study design, cumulative explained variance cut-off"),
    ("eval.threshold", "0.5: decisions ledger, probability threshold for confusion metrics"),
    ("map.n_classes", "5: published study design, natural-breaks susceptibility classes"),
];

fn check_unique<T: PartialEq + std::fmt::Debug>(key: &str, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(invalid(key, "must not be empty"));
    }
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(invalid(key, format!("duplicate entry {a:?}")));
        }
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses a JSON document; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            PipelineError::Validation(format!("{path}: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.lcf_manifest,
            &mut paths.embed_manifest,
            &mut paths.inventory,
            &mut paths.mask,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut paths.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        check_unique("representations", &self.representations)?;
        check_unique("models", &self.models)?;
        let s = &self.sampling;
        if !(s.buffer_m >= 0.0 && s.buffer_m.is_finite()) {
            return Err(invalid("sampling.buffer_m", "must be a finite value >= 0"));
        }
        if s.ratio != 1.0 {
            return Err(invalid("sampling.ratio", "only balanced 1:1 sampling (ratio 1) is supported"));
        }
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(invalid("sampling.train_fraction", "must lie in (0, 1)"));
        }
        if s.window % 2 == 0 {
            return Err(invalid("sampling.window", "must be odd"));
        }
        if s.window < 3 && self.models.iter().any(|m| m.uses_patches()) {
            return Err(invalid("sampling.window", "patch models need a window of at least 3"));
        }
        if !(self.pca.threshold > 0.0 && self.pca.threshold <= 1.0) {
            return Err(invalid("pca.threshold", "must lie in (0, 1]"));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be >= 1"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(invalid("training.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(invalid("training.beta1/beta2", "must lie in [0, 1)"));
        }
        if !(t.eps > 0.0) {
            return Err(invalid("training.eps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(invalid("eval.threshold", "must lie in [0, 1]"));
        }
        if self.eval.permutations < 2 {
            return Err(invalid("eval.permutations", "need at least 2"));
        }
        let m = &self.map;
        if m.n_classes == 0 {
            return Err(invalid("map.n_classes", "must be >= 1"));
        }
        if m.jenks_cap < m.n_classes {
            return Err(invalid("map.jenks_cap", "must be at least n_classes"));
        }
        for r in &m.representations {
            if !self.representations.contains(r) {
                return Err(invalid("map.representations", format!("{r} is not in representations")));
            }
        }
        for a in &m.models {
            if !self.models.contains(a) {
                return Err(invalid("map.models", format!("{a} is not in models")));
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// The config as JSON plus the provenance of each protocol default.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let sources: BTreeMap<&str, &str> = DEFAULT_SOURCES.iter().cloned().collect();
        v["default_sources"] = serde_json::to_value(sources).unwrap();
        v
    }

    fn uses(&self, source: StackSource) -> bool {
        self.representations.iter().any(|r| r.source() == source)
    }

    pub fn cells(&self) -> Vec<(Representation, Arch)> {
        let mut cells: Vec<_> = self
            .representations
            .iter()
            .flat_map(|&r| self.models.iter().map(move |&a| (r, a)))
            .collect();
        cells.sort_by_key(|&(r, a)| order_key(r, a));
        cells
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(out: &Path) -> Result<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map(Some).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// File access for one stage, recording content hashes of everything read and written.
struct StageCtx<'a> {
    out: &'a Path,
    record: StageRecord,
}

impl<'a> StageCtx<'a> {
    fn new(out: &'a Path) -> Self {
        Self {
            out,
            record: StageRecord::default(),
        }
    }

    fn label(&self, path: &Path) -> String {
        path.strip_prefix(self.out)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| path.display().to_string())
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.record.inputs.insert(self.label(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Reads an upstream artifact, naming the stage that produces it when missing.
    fn artifact(&mut self, rel: &str, stage: Stage) -> Result<String> {
        let path = self.out.join(rel);
        if !path.exists() {
            return Err(PipelineError::Missing {
                artifact: rel.to_string(),
                stage,
            });
        }
        self.read_text(&path)
    }

    fn artifact_json<T: for<'de> Deserialize<'de>>(&mut self, rel: &str, stage: Stage) -> Result<T> {
        let text = self.artifact(rel, stage)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: rel.to_string(),
            msg: e.to_string(),
        })
    }

    fn read_grid(&mut self, path: &Path) -> Result<Grid> {
        let text = self.read_text(path)?;
        parse_ascii_grid(&text).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.record.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        self.write(rel, to_json(v).as_bytes())
    }

    fn write_grid(&mut self, rel: &str, g: &Grid) -> Result<()> {
        self.write(rel, format_ascii_grid(g).as_bytes())
    }

    fn save_checkpoint(&mut self, rel: &str, ckpt: &Checkpoint) -> Result<()> {
        let base = self.out.join(rel);
        if let Some(dir) = base.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        ckpt.save(&base)?;
        for ext in ["json", "bin"] {
            let p = base.with_extension(ext);
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            self.record.outputs.insert(self.label(&p), sha256_hex(&bytes));
        }
        Ok(())
    }

    fn load_checkpoint(&mut self, rel: &str) -> Result<Checkpoint> {
        let base = self.out.join(rel);
        for ext in ["json", "bin"] {
            let p = base.with_extension(ext);
            if !p.exists() {
                return Err(PipelineError::Missing {
                    artifact: self.label(&p),
                    stage: Stage::Train,
                });
            }
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            self.record.inputs.insert(self.label(&p), sha256_hex(&bytes));
        }
        Ok(Checkpoint::load(&base)?)
    }
}

// ---------------------------------------------------------------------------
// Stack manifests

pub fn parse_stack_manifest(text: &str, path: &Path) -> Result<Vec<StackEntry>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let entries: Vec<StackEntry> = serde_path_to_error::deserialize(de).map_err(|e| {
        PipelineError::Validation(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
    })?;
    if entries.is_empty() {
        return Err(PipelineError::Validation(format!("{}: stack manifest is empty", path.display())));
    }
    Ok(entries)
}

/// Reads every band of a manifest, resampling onto `template` where needed
/// (nearest for categorical bands, bilinear otherwise). Without a template
/// the first band's grid defines it.
fn load_manifest_stack(
    ctx: &mut StageCtx,
    manifest: &Path,
    template: Option<&crate::grid::GridHeader>,
) -> Result<(GridStack, Vec<StackEntry>)> {
    let text = ctx.read_text(manifest)?;
    let mut entries = parse_stack_manifest(&text, manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut grids = Vec::with_capacity(entries.len());
    let mut tmpl = template.copied();
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
        let g = ctx.read_grid(&e.path)?;
        let t = *tmpl.get_or_insert(g.header);
        let g = if g.header.is_aligned(&t) {
            g
        } else {
            let method = match e.kind {
                BandKind::Categorical => Resampling::Nearest,
                BandKind::Continuous => Resampling::Bilinear,
            };
            log::info!("resampling {} onto the reference grid ({method:?})", e.name);
            resample(&g, &t, method)?
        };
        grids.push(g);
    }
    let names = entries.iter().map(|e| e.name.clone()).collect();
    Ok((stack(grids, names)?, entries))
}

fn ingested_rel(source: StackSource) -> String {
    format!("ingest/{}_manifest.json", source.name())
}

/// Loads an ingested stack.
fn load_ingested(ctx: &mut StageCtx, source: StackSource) -> Result<GridStack> {
    let rel = ingested_rel(source);
    let path = ctx.out.join(&rel);
    if !path.exists() {
        return Err(PipelineError::Missing {
            artifact: rel,
            stage: Stage::Ingest,
        });
    }
    Ok(load_manifest_stack(ctx, &path, None)?.0)
}

fn load_valid(ctx: &mut StageCtx) -> Result<GridStack> {
    let rel = "ingest/valid.asc";
    let text = ctx.artifact(rel, Stage::Ingest)?;
    let g = parse_ascii_grid(&text)?;
    Ok(stack(vec![g], vec!["valid".into()])?)
}

// ---------------------------------------------------------------------------
// Samples

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub inventory_loaded: usize,
    pub dropped_outside: usize,
    pub dropped_invalid: usize,
    pub merged_duplicates: usize,
    pub dropped_window: usize,
    pub positives: usize,
    pub negatives: usize,
    pub train: usize,
    pub validation: usize,
    pub buffer_m: f64,
    pub window: usize,
    pub seed: u64,
}

pub fn samples_to_csv(set: &SampleSet) -> String {
    let mut out = String::from("x,y,label,split\n");
    for (p, s) in set.points.iter().zip(&set.split) {
        let s = match s {
            Split::Train => "train",
            Split::Validation => "validation",
        };
        let _ = writeln!(out, "{},{},{},{s}", p.x, p.y, p.label);
    }
    out
}

pub fn samples_from_csv(text: &str, seed: u64) -> Result<SampleSet> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut splits = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Parse {
            path: "sample/samples.csv".into(),
            msg: e.to_string(),
        })?;
        let bad = |m: &str| PipelineError::Parse {
            path: "sample/samples.csv".into(),
            msg: m.to_string(),
        };
        let num = |i: usize| rec.get(i).and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| bad("bad coordinate"));
        let label = rec.get(2).and_then(|t| t.parse::<u8>().ok()).ok_or_else(|| bad("bad label"))?;
        let split = match rec.get(3) {
            Some("train") => Split::Train,
            Some("validation") => Split::Validation,
            _ => return Err(bad("bad split")),
        };
        points.push(InventoryPoint {
            x: num(0)?,
            y: num(1)?,
            label,
        });
        splits.push(split);
    }
    Ok(SampleSet {
        points,
        split: splits,
        seed,
    })
}

fn cells_of(stack: &GridStack, points: &[InventoryPoint]) -> Vec<(usize, usize)> {
    points
        .iter()
        .map(|p| stack.header.cell_of(p.x, p.y).expect("sample lies on the grid"))
        .collect()
}

// ---------------------------------------------------------------------------
// Representations

/// Band-space transform feeding a model: optional PCA, then per-band standardization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stack: GridStack,
    pub pca: Option<PcaModel>,
    pub standardizer: crate::reduce::Standardizer,
}

fn center_matrix(stack: &GridStack, cells: &[(usize, usize)]) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = cells.iter().map(|&(r, c)| stack.cell_vector(r, c)).collect();
    FeatureMatrix::from_rows(&rows)
}

/// Fits the representation's transforms on training-sample cells and applies
/// them to the whole stack.
pub fn prepare_representation(
    rep: Representation,
    raw: &GridStack,
    train_cells: &[(usize, usize)],
    pca_threshold: f64,
) -> Result<Prepared> {
    let (reduced, pca) = if rep == Representation::EmbedPca {
        let x = center_matrix(raw, train_cells);
        let s = fit_standardizer(&x)?;
        let model = pca_fit(&x, &s)?;
        let k = select_k(&model, pca_threshold);
        let model = model.with_k(k)?;
        log::info!("{rep}: keeping {k} of {} components", model.p());
        (transform_stack(raw, &model), Some(model))
    } else {
        (raw.clone(), None)
    };
    let standardizer = fit_standardizer(&center_matrix(&reduced, train_cells))?;
    Ok(Prepared {
        stack: standardize_stack(&reduced, &standardizer),
        pca,
        standardizer,
    })
}

/// Applies the transforms stored with a checkpoint to a raw stack.
pub fn apply_checkpoint_transform(ckpt: &Checkpoint, raw: &GridStack, pca: Option<&PcaModel>) -> GridStack {
    let reduced = match pca {
        Some(m) if ckpt.pca_ref.is_some() => transform_stack(raw, m),
        _ => raw.clone(),
    };
    match &ckpt.standardizer {
        Some(s) => standardize_stack(&reduced, s),
        None => reduced,
    }
}

pub fn build_model(arch: Arch, window: usize, p: usize, seed: u64) -> Result<ModelSpec> {
    Ok(match arch {
        Arch::Cnn1d => build_cnn1d(p, seed),
        Arch::Cnn2d => build_cnn2d(window, window, p, seed)?,
        Arch::Vit => build_vit(window, window, p, seed),
    })
}

pub fn dataset(stack: &GridStack, spec: &ModelSpec, cells: &[(usize, usize)], labels: Vec<u8>) -> Dataset {
    Dataset {
        inputs: cells
            .iter()
            .map(|&(r, c)| model_input(stack, &spec.input_shape, r, c))
            .collect(),
        labels,
    }
}

// ---------------------------------------------------------------------------
// Evaluation records and comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub permutations: usize,
    pub mean: f64,
    pub std: f64,
    pub aucs: Vec<f64>,
}

/// AUCs of the fixed scores against seeded label permutations.
pub fn permutation_null(input: &EvalInput, permutations: usize, seed: u64) -> Result<PermutationNull> {
    let mut r = rng(seed);
    let mut labels = input.y.clone();
    let mut aucs = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        labels.shuffle(&mut r);
        let perm = EvalInput::new(labels.clone(), input.y_hat.clone())?;
        aucs.push(roc_auc(&perm)?.auc);
    }
    Ok(PermutationNull {
        permutations,
        mean: crate::util::mean(&aucs),
        std: crate::util::sample_std(&aucs),
        aucs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub representation: Representation,
    pub model: Arch,
    pub n_validation: usize,
    pub report: MetricReport,
    pub null: PermutationNull,
}

impl CellReport {
    /// Validation AUC clears the permutation null by three standard deviations.
    pub fn beats_null(&self) -> bool {
        self.report.auc > 0.5 + 3.0 * self.null.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: Arch,
    pub representation: Representation,
    pub n_validation: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub auc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub null_auc_mean: f64,
    pub null_auc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: Arch,
    pub representation: Representation,
    pub delta_f1: Option<f64>,
    pub delta_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Each embedding representation relative to `lcf`, per model.
    pub deltas: Vec<DeltaRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "model,representation,n_validation,accuracy,precision,recall,specificity,f1,auc,mae,rmse,null_auc_mean,null_auc_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model,
                r.representation,
                r.n_validation,
                opt(r.accuracy),
                opt(r.precision),
                opt(r.recall),
                opt(r.specificity),
                opt(r.f1),
                r.auc,
                r.mae,
                r.rmse,
                r.null_auc_mean,
                r.null_auc_std
            );
        }
        out
    }

    pub fn deltas_csv(&self) -> String {
        let mut out = String::from("model,representation,delta_f1,delta_auc\n");
        for d in &self.deltas {
            let _ = writeln!(out, "{},{},{},{}", d.model, d.representation, opt(d.delta_f1), d.delta_auc);
        }
        out
    }
}

/// Comparison table over a complete matrix, plus ΔF1 and ΔAUC of each
/// embedding representation over `lcf` for every model.
pub fn compare_representations(reports: &[CellReport]) -> Result<Comparison> {
    let mut models: Vec<Arch> = Vec::new();
    let mut reps: Vec<Representation> = Vec::new();
    for r in reports {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
        if !reps.contains(&r.representation) {
            reps.push(r.representation);
        }
    }
    if reports.is_empty() {
        return Err(PipelineError::Incomplete("no reports".into()));
    }
    if !reps.contains(&Representation::Lcf) {
        return Err(PipelineError::Incomplete("the lcf baseline is missing".into()));
    }
    let find = |rep: Representation, m: Arch| reports.iter().find(|r| r.representation == rep && r.model == m);
    for &m in &models {
        for &rep in &reps {
            if find(rep, m).is_none() {
                return Err(PipelineError::Incomplete(format!("no report for {}", cell_id(rep, m))));
            }
        }
    }
    if reports.len() != models.len() * reps.len() {
        return Err(PipelineError::Incomplete("duplicate reports".into()));
    }
    let mut sorted: Vec<&CellReport> = reports.iter().collect();
    sorted.sort_by_key(|r| order_key(r.representation, r.model));
    let rows = sorted
        .iter()
        .map(|c| ComparisonRow {
            model: c.model,
            representation: c.representation,
            n_validation: c.n_validation,
            accuracy: c.report.metrics.accuracy,
            precision: c.report.metrics.precision,
            recall: c.report.metrics.recall,
            specificity: c.report.metrics.specificity,
            f1: c.report.metrics.f1,
            auc: c.report.auc,
            mae: c.report.mae,
            rmse: c.report.rmse,
            null_auc_mean: c.null.mean,
            null_auc_std: c.null.std,
        })
        .collect();
    let mut deltas = Vec::new();
    for c in &sorted {
        if c.representation == Representation::Lcf {
            continue;
        }
        let base = find(Representation::Lcf, c.model).unwrap();
        deltas.push(DeltaRow {
            model: c.model,
            representation: c.representation,
            delta_f1: match (c.report.metrics.f1, base.report.metrics.f1) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
            delta_auc: c.report.auc - base.report.auc,
        });
    }
    Ok(Comparison { rows, deltas })
}

// ---------------------------------------------------------------------------
// Stages

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Self { cfg, out: out.into() }
    }

    /// Runs one pipeline stage and records it in the run manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord> {
        self.cfg.validate()?;
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let start = Instant::now();
        let mut ctx = StageCtx::new(&self.out);
        log::info!("stage {stage}: start");
        match stage {
            Stage::Ingest => self.ingest(&mut ctx)?,
            Stage::Diagnose => self.diagnose(&mut ctx)?,
            Stage::Sample => self.sample(&mut ctx)?,
            Stage::Train => self.train(&mut ctx)?,
            Stage::Evaluate => self.evaluate(&mut ctx)?,
            Stage::Map => self.map(&mut ctx)?,
            Stage::Report => self.report(&mut ctx)?,
            Stage::Synth => {
                return Err(PipelineError::Validation(
                    "synth writes a scene directory; call write_scene instead".into(),
                ))
            }
        }
        let mut record = ctx.record;
        record.seconds = start.elapsed().as_secs_f64();
        log::info!("stage {stage}: done in {:.2}s", record.seconds);
        let mut manifest = RunManifest::load(&self.out)?.unwrap_or_default();
        manifest.config = self.cfg.echo();
        manifest
            .versions
            .insert("lsm-core".into(), env!("CARGO_PKG_VERSION").into());
        manifest
            .versions
            .insert("checkpoint-format".into(), crate::nn::FORMAT_VERSION.to_string());
        manifest.stages.insert(stage.name().into(), record.clone());
        let path = self.out.join(MANIFEST_FILE);
        fs::write(&path, to_json(&manifest)).map_err(io_err(&path))?;
        Ok(record)
    }

    /// Runs the given stages in order.
    pub fn run_stages(&self, stages: &[Stage]) -> Result<()> {
        for &s in stages {
            self.run_stage(s)?;
        }
        Ok(())
    }

    fn ingest(&self, ctx: &mut StageCtx) -> Result<()> {
        let p = &self.cfg.paths;
        let need = |path: &Option<PathBuf>, key: &str| {
            path.clone()
                .ok_or_else(|| invalid(key, "required by the configured representations"))
        };
        let mut loaded: Vec<(StackSource, GridStack, Vec<StackEntry>)> = Vec::new();
        let mut template = None;
        for (source, path, key) in [
            (StackSource::Lcf, &p.lcf_manifest, "paths.lcf_manifest"),
            (StackSource::Embed, &p.embed_manifest, "paths.embed_manifest"),
        ] {
            if !self.cfg.uses(source) {
                continue;
            }
            let manifest = need(path, key)?;
            let (s, entries) = load_manifest_stack(ctx, &manifest, template.as_ref())?;
            template.get_or_insert(s.header);
            loaded.push((source, s, entries));
        }
        let header = template.expect("at least one representation");
        let mut valid: Vec<bool> = vec![true; header.len()];
        for (_, s, _) in &loaded {
            for (v, ok) in valid.iter_mut().zip(s.valid_mask()) {
                *v &= ok;
            }
        }
        if let Some(mask_path) = &p.mask {
            let mask = ctx.read_grid(mask_path)?;
            let mask = if mask.header.is_aligned(&header) {
                mask
            } else {
                resample(&mask, &header, Resampling::Nearest)?
            };
            for (v, &m) in valid.iter_mut().zip(&mask.values) {
                *v &= mask.is_valid_value(m) && m != 0.0;
            }
        }
        let valid_grid = Grid {
            header,
            values: valid.iter().map(|&v| if v { 1.0 } else { header.nodata }).collect(),
        };
        let valid_count = valid.iter().filter(|&&v| v).count();
        if valid_count == 0 {
            return Err(PipelineError::Validation("no cell is valid in every band".into()));
        }
        ctx.write_grid("ingest/valid.asc", &valid_grid)?;
        let mut summary = BTreeMap::new();
        for (source, s, entries) in loaded {
            let mut out_entries = Vec::new();
            for (band, e) in s.bands.iter().zip(&entries) {
                let mut g = band.clone();
                for (i, &ok) in valid.iter().enumerate() {
                    if !ok {
                        g.values[i] = g.header.nodata;
                    }
                }
                let rel = format!("{}/{}.asc", source.name(), e.name);
                ctx.write_grid(&format!("ingest/{rel}"), &g)?;
                out_entries.push(StackEntry {
                    name: e.name.clone(),
                    path: PathBuf::from(rel),
                    kind: e.kind,
                });
            }
            ctx.write_json(&ingested_rel(source), &out_entries)?;
            summary.insert(source.name().to_string(), s.band_names.clone());
        }
        ctx.write_json(
            "ingest/ingest.json",
            &serde_json::json!({
                "header": header,
                "valid_cells": valid_count,
                "bands": summary,
            }),
        )?;
        Ok(())
    }

    fn diagnose(&self, ctx: &mut StageCtx) -> Result<()> {
        for source in [StackSource::Lcf, StackSource::Embed] {
            if !self.cfg.uses(source) {
                continue;
            }
            let s = load_ingested(ctx, source)?;
            let mask = s.valid_mask();
            let rows: Vec<Vec<f64>> = (0..s.header.len())
                .filter(|&i| mask[i])
                .map(|i| s.bands.iter().map(|b| b.values[i]).collect())
                .collect();
            let x = FeatureMatrix::from_rows(&rows);
            let st = fit_standardizer(&x)?;
            let model = pca_fit(&x, &st)?;
            let k = select_k(&model, self.cfg.pca.threshold);
            let total: f64 = model.eigenvalues.iter().sum();
            let mut csv = String::from("component,eigenvalue,explained,cumulative\n");
            for (j, (&l, &c)) in model.eigenvalues.iter().zip(&model.cum_explained).enumerate() {
                let share = if total > 0.0 { l / total } else { 0.0 };
                let _ = writeln!(csv, "{},{l},{share},{c}", j + 1);
            }
            let name = source.name();
            ctx.write(&format!("diagnose/{name}_pca.csv"), csv.as_bytes())?;
            ctx.write_json(
                &format!("diagnose/{name}_pca.json"),
                &serde_json::json!({
                    "threshold": self.cfg.pca.threshold,
                    "k": k,
                    "n_cells": x.n,
                    "eigenvalues": model.eigenvalues,
                    "cumulative": model.cum_explained,
                }),
            )?;
            if source == StackSource::Lcf {
                let report = collinearity(&x)?.with_names(&s.band_names);
                ctx.write(&format!("diagnose/{name}_collinearity.csv"), report.to_csv().as_bytes())?;
                ctx.write_json(&format!("diagnose/{name}_collinearity.json"), &report)?;
            }
        }
        Ok(())
    }

    fn sample(&self, ctx: &mut StageCtx) -> Result<()> {
        let sc = &self.cfg.sampling;
        let valid = load_valid(ctx)?;
        let inv_path = self
            .cfg
            .paths
            .inventory
            .clone()
            .ok_or_else(|| invalid("paths.inventory", "required by the sample stage"))?;
        let text = ctx.read_text(&inv_path)?;
        let (landslides, load) = parse_inventory(&text, &valid)?;
        let feasible: Vec<InventoryPoint> = landslides
            .iter()
            .filter(|p| {
                let (r, c) = valid.header.cell_of(p.x, p.y).unwrap();
                window_feasible(&valid, r, c, sc.window)
            })
            .copied()
            .collect();
        let dropped_window = landslides.len() - feasible.len();
        if dropped_window > 0 {
            log::warn!("{dropped_window} landslides lack a full {0}x{0} window and are not sampled", sc.window);
        }
        let negatives = sample_negatives(
            &feasible,
            &valid,
            sc.buffer_m,
            sc.window,
            derive_seed(sc.seed, "negatives"),
        )?;
        let mut points = feasible.clone();
        points.extend(negatives);
        let set = split(points, sc.train_fraction, derive_seed(sc.seed, "split"))?;
        let n_train = set.split.iter().filter(|s| **s == Split::Train).count();
        let summary = SampleSummary {
            inventory_loaded: load.loaded,
            dropped_outside: load.dropped_outside,
            dropped_invalid: load.dropped_invalid,
            merged_duplicates: load.merged_duplicates,
            dropped_window,
            positives: feasible.len(),
            negatives: feasible.len(),
            train: n_train,
            validation: set.points.len() - n_train,
            buffer_m: sc.buffer_m,
            window: sc.window,
            seed: sc.seed,
        };
        ctx.write("sample/samples.csv", samples_to_csv(&set).as_bytes())?;
        let mut inv = String::from("x,y\n");
        for p in &landslides {
            let _ = writeln!(inv, "{},{}", p.x, p.y);
        }
        ctx.write("sample/landslides.csv", inv.as_bytes())?;
        ctx.write_json("sample/sample.json", &summary)?;
        Ok(())
    }

    fn load_samples(&self, ctx: &mut StageCtx) -> Result<SampleSet> {
        let text = ctx.artifact("sample/samples.csv", Stage::Sample)?;
        samples_from_csv(&text, self.cfg.sampling.seed)
    }

    fn raw_stack(&self, ctx: &mut StageCtx, rep: Representation) -> Result<GridStack> {
        load_ingested(ctx, rep.source())
    }

    fn train(&self, ctx: &mut StageCtx) -> Result<()> {
        let set = self.load_samples(ctx)?;
        let train_pts = set.partition(Split::Train);
        let val_pts = set.partition(Split::Validation);
        let window = self.cfg.sampling.window;
        let mut jobs = Vec::new();
        for &rep in &self.cfg.representations {
            let raw = self.raw_stack(ctx, rep)?;
            let train_cells = cells_of(&raw, &train_pts);
            let val_cells = cells_of(&raw, &val_pts);
            let prep = prepare_representation(rep, &raw, &train_cells, self.cfg.pca.threshold)?;
            if let Some(m) = &prep.pca {
                ctx.write_json(&format!("train/pca_{}.json", rep.name()), m)?;
            }
            for &arch in &self.cfg.models {
                jobs.push((rep, arch, prep.clone(), train_cells.clone(), val_cells.clone()));
            }
        }
        let train_labels: Vec<u8> = train_pts.iter().map(|p| p.label).collect();
        let val_labels: Vec<u8> = val_pts.iter().map(|p| p.label).collect();
        let seed = self.cfg.sampling.seed;
        let results: Vec<Result<(String, Checkpoint)>> = jobs
            .into_par_iter()
            .map(|(rep, arch, prep, tc, vc)| {
                let id = cell_id(rep, arch);
                let spec = build_model(arch, window, prep.stack.band_count(), derive_seed(seed, &id))?;
                let tr = dataset(&prep.stack, &spec, &tc, train_labels.clone());
                let va = dataset(&prep.stack, &spec, &vc, val_labels.clone());
                let start = Instant::now();
                let outcome = train(&spec, &tr, &va, &self.cfg.training)?;
                log::info!(
                    "trained {id}: {} epochs, best {} ({:.1}s)",
                    outcome.history.len(),
                    outcome.best_epoch,
                    start.elapsed().as_secs_f64()
                );
                Ok((
                    id,
                    Checkpoint {
                        spec,
                        standardizer: Some(prep.standardizer.clone()),
                        pca_ref: prep.pca.as_ref().map(pca_hash),
                        train_config: self.cfg.training.clone(),
                        weights: outcome.weights,
                        history: outcome.history,
                        best_epoch: outcome.best_epoch,
                    },
                ))
            })
            .collect();
        for r in results {
            let (id, ckpt) = r?;
            ctx.save_checkpoint(&format!("train/{id}"), &ckpt)?;
        }
        Ok(())
    }

    /// Checkpoint and PCA model of one trained cell.
    fn trained_cell(&self, ctx: &mut StageCtx, rep: Representation, arch: Arch) -> Result<(Checkpoint, Option<PcaModel>)> {
        let ckpt = ctx.load_checkpoint(&format!("train/{}", cell_id(rep, arch)))?;
        let pca = if ckpt.pca_ref.is_some() {
            let m: PcaModel = ctx.artifact_json(&format!("train/pca_{}.json", rep.name()), Stage::Train)?;
            Some(m)
        } else {
            None
        };
        Ok((ckpt, pca))
    }

    fn evaluate(&self, ctx: &mut StageCtx) -> Result<()> {
        let set = self.load_samples(ctx)?;
        let val_pts = set.partition(Split::Validation);
        let labels: Vec<u8> = val_pts.iter().map(|p| p.label).collect();
        for &rep in &self.cfg.representations {
            let raw = self.raw_stack(ctx, rep)?;
            let cells = cells_of(&raw, &val_pts);
            for &arch in &self.cfg.models {
                let id = cell_id(rep, arch);
                let (ckpt, pca) = self.trained_cell(ctx, rep, arch)?;
                let prepared = apply_checkpoint_transform(&ckpt, &raw, pca.as_ref());
                let data = dataset(&prepared, &ckpt.spec, &cells, labels.clone());
                let scores = predict_batch(&ckpt.spec, &ckpt.weights, &data.inputs)?;
                let input = EvalInput::new(labels.clone(), scores)?;
                let report = evaluate(&input, self.cfg.eval.threshold)?;
                let null = permutation_null(
                    &input,
                    self.cfg.eval.permutations,
                    derive_seed(self.cfg.sampling.seed, &format!("permutation_{id}")),
                )?;
                let cell = CellReport {
                    representation: rep,
                    model: arch,
                    n_validation: input.len(),
                    report,
                    null,
                };
                log::info!(
                    "{id}: auc {:.4} f1 {:?} null {:.4}±{:.4}",
                    cell.report.auc,
                    cell.report.metrics.f1,
                    cell.null.mean,
                    cell.null.std
                );
                let roc = RocCurve {
                    points: cell.report.roc.clone(),
                    auc: cell.report.auc,
                };
                ctx.write_json(&format!("evaluate/{id}.json"), &cell)?;
                ctx.write(&format!("evaluate/{id}_roc.csv"), roc.to_csv().as_bytes())?;
                ctx.write(&format!("evaluate/{id}_roc.svg"), roc.to_svg(&id).as_bytes())?;
            }
        }
        Ok(())
    }

    fn map(&self, ctx: &mut StageCtx) -> Result<()> {
        let inv = ctx.artifact("sample/landslides.csv", Stage::Sample)?;
        let mc = &self.cfg.map;
        for &rep in &mc.representations {
            let raw = self.raw_stack(ctx, rep)?;
            let (landslides, _) = parse_inventory(&inv, &raw)?;
            for &arch in &mc.models {
                let id = cell_id(rep, arch);
                let (ckpt, pca) = self.trained_cell(ctx, rep, arch)?;
                let start = Instant::now();
                let scores = infer_raster(&ckpt, &raw, pca.as_ref())?;
                let valid = scores.valid_values();
                let jenks = jenks_breaks(
                    &valid,
                    mc.n_classes,
                    mc.jenks_cap,
                    derive_seed(self.cfg.sampling.seed, &format!("jenks_{id}")),
                )?;
                let classes = classify(&scores, &jenks.breaks)?;
                let occ = occupancy(&classes, &landslides, mc.n_classes);
                log::info!("mapped {id} in {:.1}s", start.elapsed().as_secs_f64());
                ctx.write_grid(&format!("map/{id}/scores.asc"), &scores)?;
                ctx.write_grid(&format!("map/{id}/classes.asc"), &classes)?;
                ctx.write_json(&format!("map/{id}/breaks.json"), &jenks)?;
                ctx.write_json(&format!("map/{id}/occupancy.json"), &occ)?;
                ctx.write(&format!("map/{id}/occupancy.csv"), occ.to_csv().as_bytes())?;
            }
        }
        Ok(())
    }

    fn report(&self, ctx: &mut StageCtx) -> Result<()> {
        let mut reports = Vec::new();
        for (rep, arch) in self.cfg.cells() {
            let r: CellReport = ctx.artifact_json(&format!("evaluate/{}.json", cell_id(rep, arch)), Stage::Evaluate)?;
            reports.push(r);
        }
        let cmp = compare_representations(&reports)?;
        ctx.write("report/comparison.csv", cmp.rows_csv().as_bytes())?;
        ctx.write_json("report/comparison.json", &cmp)?;
        ctx.write("report/deltas.csv", cmp.deltas_csv().as_bytes())?;
        let mut occ_csv = String::from("model,representation,class,name,count,percent\n");
        let mut any = false;
        for (rep, arch) in self.cfg.cells() {
            let rel = format!("map/{}/occupancy.json", cell_id(rep, arch));
            if !self.out.join(&rel).exists() {
                continue;
            }
            any = true;
            let occ: OccupancyReport = ctx.artifact_json(&rel, Stage::Map)?;
            for row in &occ.classes {
                let _ = writeln!(
                    occ_csv,
                    "{arch},{rep},{},{},{},{}",
                    row.class, row.name, row.count, row.percent
                );
            }
        }
        if any {
            ctx.write("report/occupancy.csv", occ_csv.as_bytes())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic scene directory

/// Writes a generated scene as a self-contained pipeline input directory and
/// returns the content hashes of everything written.
pub fn write_scene(cfg: &SceneConfig, dir: &Path) -> Result<StageRecord> {
    let start = Instant::now();
    let scene = gen_scene(cfg)?;
    if scene.config.seed != cfg.seed {
        log::warn!("scene seed {} replaced by {} to satisfy plantedness", cfg.seed, scene.config.seed);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut ctx = StageCtx::new(dir);
    ctx.write_grid("dem.asc", &scene.dem)?;
    ctx.write_grid("latent.asc", &scene.latent)?;
    for (source, s) in [(StackSource::Lcf, &scene.lcf_stack), (StackSource::Embed, &scene.embed_stack)] {
        let mut entries = Vec::new();
        for (name, band) in s.band_names.iter().zip(&s.bands) {
            let rel = format!("{}/{name}.asc", source.name());
            ctx.write_grid(&rel, band)?;
            entries.push(StackEntry {
                name: name.clone(),
                path: PathBuf::from(rel),
                kind: if is_categorical(name) {
                    BandKind::Categorical
                } else {
                    BandKind::Continuous
                },
            });
        }
        ctx.write_json(&format!("{}_manifest.json", source.name()), &entries)?;
    }
    let mut inv = String::from("x,y\n");
    for p in &scene.inventory {
        let _ = writeln!(inv, "{},{}", p.x, p.y);
    }
    ctx.write("inventory.csv", inv.as_bytes())?;
    ctx.write_json(
        "scene.json",
        &serde_json::json!({
            "config": scene.config,
            "requested_seed": scene.requested_seed,
            "latent": scene.summary,
            "n_landslides": scene.inventory.len(),
        }),
    )?;
    let pipeline = PipelineConfig {
        paths: PathsConfig {
            lcf_manifest: Some("lcf_manifest.json".into()),
            embed_manifest: Some("embed_manifest.json".into()),
            inventory: Some("inventory.csv".into()),
            mask: None,
            output_dir: "run".into(),
        },
        synth: scene.config.clone(),
        ..Default::default()
    };
    ctx.write_json("config.json", &pipeline)?;
    let mut record = ctx.record;
    record.seconds = start.elapsed().as_secs_f64();
    Ok(record)
}
