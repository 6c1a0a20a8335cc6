//! The four pipeline commands plus manifest replay. Each command renders all
//! of its outputs in memory, then writes them together with a manifest that
//! records their hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use catgen_core::crossfit::{build_pseudo_outcomes, cross_fit, NuisanceFits, PseudoTarget, TreatmentFit};
use catgen_core::data::{diagnose_overlap, load_cohort, Cohort};
use catgen_core::learners::{EnsembleModel, LearnerSpec};
use catgen_core::rng::{derive_seed, stream};
use catgen_core::simulation::run_study;
use catgen_core::smoother::{default_bandwidth_grid, estimate_cate_curve, select_bandwidth_cv, BandwidthSpec, SortedPairs};
use catgen_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{resolve, Format, Needs, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Simulate,
    Diagnose,
    Bandwidth,
}

impl Command {
    fn needs(self) -> Needs {
        match self {
            Command::Simulate => Needs::Simulation,
            _ => Needs::Cohort,
        }
    }
}

/// A config document and the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub text: String,
}

impl ConfigSource {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base_dir = parent
            .canonicalize()
            .map_err(|e| Error::config("--config", format!("cannot resolve {}: {e}", parent.display())))?;
        Ok(ConfigSource { path: path.to_path_buf(), base_dir, text })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWeight {
    pub learner: LearnerSpec,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub fold: usize,
    pub nuisance: String,
    pub members: Vec<MemberWeight>,
}

/// Everything needed to reproduce and verify a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config_path: String,
    pub base_dir: String,
    pub config_sha256: String,
    pub config_text: String,
    pub data_path: Option<String>,
    pub data_sha256: Option<String>,
    pub bandwidth: Option<f64>,
    pub ensemble_weights: Vec<EnsembleWeights>,
    /// SHA-256 of every output file, by file name.
    pub outputs: BTreeMap<String, String>,
}

/// Rendered outputs of one command.
#[derive(Debug, Clone)]
pub struct Run {
    pub files: Vec<(String, Vec<u8>)>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.manifest)? + "\n")
    }

    /// Writes every output and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.manifest_json()?)?;
        written.push(path);
        Ok(written)
    }
}

fn weights_of(fold: usize, nuisance: &str, model: &EnsembleModel) -> EnsembleWeights {
    EnsembleWeights {
        fold,
        nuisance: nuisance.into(),
        members: model.library.iter().zip(&model.weights).map(|(l, &w)| MemberWeight { learner: l.clone(), weight: w }).collect(),
    }
}

fn ensemble_weights(fits: &NuisanceFits) -> Vec<EnsembleWeights> {
    let mut out = Vec::new();
    for m in fits.models() {
        if let Some(sel) = &m.selection {
            out.push(weights_of(m.fold, "selection", sel));
        }
        if let TreatmentFit::Logistic { model } = &m.treatment {
            out.push(EnsembleWeights {
                fold: m.fold,
                nuisance: "treatment".into(),
                members: vec![MemberWeight { learner: model.spec.clone(), weight: 1.0 }],
            });
        }
        out.push(weights_of(m.fold, "outcome_treated", &m.outcome_treated));
        out.push(weights_of(m.fold, "outcome_control", &m.outcome_control));
    }
    out
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

struct Context {
    config: RunConfig,
    seed: u64,
    data_path: Option<PathBuf>,
    data_sha256: Option<String>,
}

impl Context {
    fn load_cohort(&self) -> Result<Cohort> {
        let path = self.data_path.as_ref().expect("validated config has a data path");
        load_cohort(path, self.config.schema.as_ref().expect("validated config has a schema"))
    }

    fn bandwidth_seed(&self) -> u64 {
        derive_seed(self.seed, &[stream::BANDWIDTH])
    }
}

struct Rendered {
    files: Vec<(String, Vec<u8>)>,
    bandwidth: Option<f64>,
    weights: Vec<EnsembleWeights>,
}

fn estimate(ctx: &Context) -> Result<Rendered> {
    let cohort = ctx.load_cohort()?;
    let fits = cross_fit(&cohort, &ctx.config.nuisance(), ctx.seed)?;
    let pseudo = build_pseudo_outcomes(&cohort, &fits, PseudoTarget::Cate)?;
    let grid = ctx.config.smoother.grid.resolve(&cohort.effect_modifier())?;
    let curve = estimate_cate_curve(&pseudo, &grid, &ctx.config.smoother.bandwidth, ctx.bandwidth_seed())?;
    let mut files = Vec::new();
    if ctx.config.output.wants(Format::Csv) {
        files.push(("curve.csv".into(), csv_bytes(|b| curve.write_csv(b))?));
        files.push(("pseudo_outcomes.csv".into(), csv_bytes(|b| pseudo.write_csv(b))?));
    }
    if ctx.config.output.wants(Format::Json) {
        files.push(("curve.json".into(), (curve.to_json()? + "\n").into_bytes()));
    }
    files.push(("nuisance.json".into(), (fits.to_json()? + "\n").into_bytes()));
    Ok(Rendered { files, bandwidth: curve.bandwidth, weights: ensemble_weights(&fits) })
}

fn diagnose(ctx: &Context) -> Result<Rendered> {
    let cohort = ctx.load_cohort()?;
    let fits = cross_fit(&cohort, &ctx.config.nuisance(), ctx.seed)?;
    let report = diagnose_overlap(&cohort, &fits)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    Ok(Rendered { files: vec![("diagnostics.json".into(), json.into_bytes())], bandwidth: None, weights: ensemble_weights(&fits) })
}

fn bandwidth(ctx: &Context) -> Result<Rendered> {
    let cohort = ctx.load_cohort()?;
    let fits = cross_fit(&cohort, &ctx.config.nuisance(), ctx.seed)?;
    let pseudo = build_pseudo_outcomes(&cohort, &fits, PseudoTarget::Cate)?;
    let (grid, folds) = match &ctx.config.smoother.bandwidth {
        BandwidthSpec::Cv { grid: Some(g), folds } => (g.clone(), *folds),
        BandwidthSpec::Cv { grid: None, folds } => (default_bandwidth_grid(&pseudo.v)?, *folds),
        BandwidthSpec::Fixed { .. } => (default_bandwidth_grid(&pseudo.v)?, 5),
    };
    let data = SortedPairs::new(&pseudo.v, &pseudo.xi)?;
    let selection = select_bandwidth_cv(&data, &grid, folds, ctx.bandwidth_seed())?;
    let table = csv_bytes(|b| selection.write_csv(b))?;
    Ok(Rendered { files: vec![("bandwidth.csv".into(), table)], bandwidth: Some(selection.selected), weights: ensemble_weights(&fits) })
}

fn simulate(ctx: &Context) -> Result<Rendered> {
    let sim = ctx.config.simulation.as_ref().expect("validated config has a simulation block");
    let study = sim.study(&ctx.config.smoother.bandwidth, ctx.config.nuisance.as_ref());
    let (report, outcomes) = run_study(&sim.designs(), &study, ctx.seed)?;
    let mut files = Vec::new();
    if ctx.config.output.wants(Format::Json) {
        files.push(("simulation.json".into(), (report.to_json()? + "\n").into_bytes()));
    }
    if ctx.config.output.wants(Format::Csv) {
        files.push(("simulation.csv".into(), csv_bytes(|b| report.write_csv(b))?));
    }
    if sim.replicate_curves {
        for outcome in &outcomes {
            for (name, bytes) in outcome.replicate_curve_files()? {
                files.push((format!("replicates/{name}"), bytes));
            }
        }
    }
    Ok(Rendered { files, bandwidth: None, weights: Vec::new() })
}

/// Parses, validates and runs `command`; nothing is written.
pub fn execute(command: Command, source: &ConfigSource, seed: Option<u64>, out: Option<&Path>) -> Result<Run> {
    let config = RunConfig::parse(&source.text)?;
    config.validate(command.needs())?;
    let seed = seed.unwrap_or(config.seed);
    let data_path = match command.needs() {
        Needs::Cohort => config.data.as_deref().map(|d| resolve(&source.base_dir, d)),
        Needs::Simulation => None,
    };
    let data_sha256 = match &data_path {
        Some(p) => Some(sha256_hex(&std::fs::read(p)?)),
        None => None,
    };
    let out_dir = match out {
        Some(o) => o.to_path_buf(),
        None => resolve(&source.base_dir, &config.output.dir),
    };
    let ctx = Context { config, seed, data_path, data_sha256 };
    let rendered = match command {
        Command::Estimate => estimate(&ctx)?,
        Command::Simulate => simulate(&ctx)?,
        Command::Diagnose => diagnose(&ctx)?,
        Command::Bandwidth => bandwidth(&ctx)?,
    };
    let outputs = rendered.files.iter().map(|(name, bytes)| (name.clone(), sha256_hex(bytes))).collect();
    let manifest = Manifest {
        tool: "catgen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        seed,
        config_path: source.path.display().to_string(),
        base_dir: source.base_dir.display().to_string(),
        config_sha256: sha256_hex(source.text.as_bytes()),
        config_text: source.text.clone(),
        data_path: ctx.data_path.as_ref().map(|p| p.display().to_string()),
        data_sha256: ctx.data_sha256,
        bandwidth: rendered.bandwidth,
        ensemble_weights: rendered.weights,
        outputs,
    };
    Ok(Run { files: rendered.files, manifest, out_dir })
}

/// Re-runs the command recorded in a manifest and checks that the config,
/// the input data and every output hash agree with the recording.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<Run> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::config("--manifest", format!("cannot read {}: {e}", manifest_path.display())))?;
    let recorded: Manifest = serde_json::from_str(&text).map_err(|e| Error::config("--manifest", e.to_string()))?;
    if sha256_hex(recorded.config_text.as_bytes()) != recorded.config_sha256 {
        return Err(Error::config("manifest.config_sha256", "embedded config does not match its recorded hash"));
    }
    if let (Some(path), Some(expected)) = (&recorded.data_path, &recorded.data_sha256) {
        let actual = sha256_hex(&std::fs::read(path)?);
        if &actual != expected {
            return Err(Error::Data { row: 0, message: format!("{path} changed since the recorded run") });
        }
    }
    let source = ConfigSource {
        path: PathBuf::from(&recorded.config_path),
        base_dir: PathBuf::from(&recorded.base_dir),
        text: recorded.config_text.clone(),
    };
    let run = execute(recorded.command, &source, Some(recorded.seed), out)?;
    if run.manifest.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|(name, hash)| run.manifest.outputs.get(*name) != Some(*hash))
            .map(|(name, _)| name.as_str())
            .collect();
        return Err(Error::Fit(format!("replay produced different outputs: {}", differing.join(", "))));
    }
    Ok(run)
}
