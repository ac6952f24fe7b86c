//! End-to-end orchestration: ingest, explore/exploit, label matrix,
//! aggregation, metrics, downstream training and evaluation, plus the
//! `run`, `sweep` and `eval` commands built on top.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidate::{synthesize_candidates, FeaturizerBank, ProbClassifier, Synthesized};
use crate::config::{PipelineConfig, ProviderConfig};
use crate::corpus::{infer_label_space, load_dataset, Dataset, Format, LabelSpace, LabeledExample};
use crate::downstream::{evaluate_e2e, predict_docs, train_downstream, write_predictions, Checkpoint, MlpClassifier};
use crate::error::{Error, Result};
use crate::exploitation::{run_exploitation_loop, ExploitationOutcome, FilterReport, Generator, RoundContext};
use crate::features::{fit_tfidf_with, FeatureSpec, Featurizer};
use crate::label_model::{aggregate, write_labels_jsonl, LabelModelKind, ProbabilisticLabel};
use crate::lf::{build_label_matrix, LabelFunction, LabelMatrix, LfCategory, LfRule};
use crate::metrics::{append_ledger_row, evaluate_labeling, evaluate_labels, EvalReport, LedgerRow};
use crate::surface::{
    generate_surface_lfs, GenerationRequest, LfProvider, OfflineProvider, RemoteLlmConfig,
    RemoteLlmProvider, RuleFile,
};

/// A pipeline failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "stage": self.stage, "error": self.error.to_string() })
    }

    /// 3 for id alignment failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::IdAlignment(_) => 3,
            _ => 2,
        }
    }
}

fn at(stage: &'static str) -> impl FnOnce(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn surface_provider(config: &ProviderConfig, rng_seed: u64, tokenizer: crate::features::Tokenizer) -> Result<Box<dyn LfProvider>> {
    Ok(match config {
        ProviderConfig::OfflineSeeded { top_t } => {
            let mut p = OfflineProvider::new(rng_seed).with_top_t(*top_t);
            p.tokenizer = tokenizer;
            Box::new(p)
        }
        ProviderConfig::RemoteLlm { timeout_secs, retries } => {
            let mut cfg = RemoteLlmConfig::from_env(*timeout_secs)?;
            cfg.retries = *retries;
            Box::new(RemoteLlmProvider::new(cfg))
        }
    })
}

/// Surface candidates for one round. The offline provider is reseeded with
/// `base_seed + round`; `prompt_examples` draws a fresh seed sample per round.
pub fn surface_generator<'a>(dataset: &'a Dataset, config: &'a PipelineConfig) -> Result<Generator<'a>> {
    let remote = match &config.surface.provider {
        p @ ProviderConfig::RemoteLlm { .. } => Some(surface_provider(p, 0, config.tokenizer)?),
        ProviderConfig::OfflineSeeded { .. } => None,
    };
    Ok(Box::new(move |ctx: &RoundContext| {
        let round_seed = config.base_seed + ctx.round as u64;
        let mut examples: Vec<&LabeledExample> = dataset.seed.iter().collect();
        if let Some(n) = config.surface.prompt_examples {
            if n < examples.len() {
                examples.shuffle(&mut ChaCha8Rng::seed_from_u64(round_seed));
                examples.truncate(n.max(1));
            }
        }
        let request = GenerationRequest {
            task_description: config.task_description.clone(),
            class_names: dataset.labels.names().to_vec(),
            examples: examples
                .iter()
                .map(|e| (e.doc.text.clone(), dataset.labels.name(e.gold).to_string()))
                .collect(),
            count: config.candidates_per_round,
            hint: (ctx.round > 1).then(|| ctx.hint.describe(dataset.labels.names())),
        };
        let generated = match &remote {
            Some(p) => generate_surface_lfs(p.as_ref(), &request)?,
            None => {
                let p = surface_provider(&config.surface.provider, round_seed, config.tokenizer)?;
                generate_surface_lfs(p.as_ref(), &request)?
            }
        };
        if generated.warnings > 0 {
            log::warn!("surface provider: {} invalid entries dropped", generated.warnings);
        }
        let lfs = generated
            .rules
            .into_iter()
            .enumerate()
            .map(|(k, rule)| LabelFunction::surface(format!("surface-r{:02}-k{:02}", ctx.round, k + 1), rule))
            .collect();
        Ok(Synthesized {
            lfs,
            curves: BTreeMap::new(),
            skipped: Vec::new(),
        })
    }))
}

/// Classifier candidates for one round; round `r` uses candidate seeds
/// `base_seed + (r - 1) * m + k` for `k = 1..=m`.
pub fn classifier_generator<'a>(
    category: LfCategory,
    dataset: &'a Dataset,
    config: &'a PipelineConfig,
    bank: &'a FeaturizerBank,
) -> Generator<'a> {
    Box::new(move |ctx: &RoundContext| {
        let m = config.candidates_per_round;
        let base = config.base_seed + ((ctx.round - 1) * m) as u64;
        synthesize_candidates(
            category,
            dataset,
            m,
            config,
            bank,
            base,
            &format!("{category}-r{:02}", ctx.round),
        )
    })
}

/// Explore/exploit with the generators implied by `config`.
pub fn explore_and_exploit(dataset: &Dataset, config: &PipelineConfig) -> Result<ExploitationOutcome> {
    config.validate()?;
    let bank = FeaturizerBank::new(dataset, config)?;
    let mut generators: BTreeMap<LfCategory, Generator> = BTreeMap::new();
    for &c in &config.categories {
        let g = match c {
            LfCategory::Surface => surface_generator(dataset, config)?,
            _ => classifier_generator(c, dataset, config, &bank),
        };
        generators.insert(c, g);
    }
    Ok(run_exploitation_loop(dataset, config, &mut generators))
}

/// Fills in default weighted-vote weights from the LFs' estimated accuracy.
pub fn resolve_label_model(kind: &LabelModelKind, lfs: &[LabelFunction]) -> LabelModelKind {
    match kind {
        LabelModelKind::WeightedMajorityVote { weights: None } => LabelModelKind::WeightedMajorityVote {
            weights: Some(lfs.iter().map(|lf| lf.est_accuracy).collect()),
        },
        other => other.clone(),
    }
}

/// Everything a run produces, in memory.
pub struct PipelineResult {
    pub config_hash: String,
    pub labels: LabelSpace,
    pub lfs: Vec<LabelFunction>,
    pub exploitation: ExploitationOutcome,
    pub matrix: LabelMatrix,
    pub probs: Vec<ProbabilisticLabel>,
    /// Present when the unlabeled pool carries hidden gold labels.
    pub labeling: Option<EvalReport>,
    pub downstream: Option<(MlpClassifier, Arc<Featurizer>)>,
    /// Present when a test split exists.
    pub e2e: Option<EvalReport>,
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStages {
    /// Skip downstream training and E2E evaluation.
    pub skip_downstream: bool,
}

/// Runs every stage after ingestion.
pub fn run_pipeline(
    dataset: &Dataset,
    config: &PipelineConfig,
    stages: RunStages,
) -> std::result::Result<PipelineResult, StageError> {
    config.validate().map_err(at("config"))?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let exploitation = explore_and_exploit(dataset, config).map_err(at("explore"))?;
    lap("explore_exploit", &mut timings);
    let lfs = exploitation.pool.all();
    let matrix = build_label_matrix(&lfs, &dataset.unlabeled).map_err(at("label_matrix"))?;
    lap("label_matrix", &mut timings);
    let kind = resolve_label_model(&config.label_model, &lfs);
    let probs = aggregate(&matrix, &kind, &dataset.labels).map_err(at("aggregate"))?;
    lap("aggregate", &mut timings);
    let labeling = match dataset.unlabeled_gold() {
        Some(gold) => Some(evaluate_labeling(&matrix, &probs, &gold).map_err(at("metrics"))?),
        None => None,
    };
    lap("metrics", &mut timings);

    let mut downstream = None;
    let mut e2e = None;
    if !stages.skip_downstream {
        let ds_cfg = &config.downstream;
        let model = fit_tfidf_with(&dataset.unlabeled, &config.tokenizer, ds_cfg.tfidf)
            .map_err(at("downstream"))?;
        let featurizer = Arc::new(Featurizer::tfidf(model));
        let train_cfg = crate::downstream::MlpTrainConfig {
            seed: config.base_seed,
            ..ds_cfg.train.clone()
        };
        let (clf, _) = train_downstream(&probs, &dataset.unlabeled, &featurizer, &train_cfg, ds_cfg.include_uncovered)
            .map_err(at("downstream"))?;
        lap("downstream_train", &mut timings);
        if !dataset.test.is_empty() {
            e2e = Some(evaluate_e2e(&clf, &dataset.test, &featurizer).map_err(at("e2e_eval"))?);
        }
        lap("e2e_eval", &mut timings);
        downstream = Some((clf, featurizer));
    }

    Ok(PipelineResult {
        config_hash: config.hash(),
        labels: dataset.labels.clone(),
        lfs,
        exploitation,
        matrix,
        probs,
        labeling,
        downstream,
        e2e,
        timings,
    })
}

/// One LF as written to `lf_pool.json`.
#[derive(Debug, Clone, Serialize)]
pub struct LfRecord {
    pub id: String,
    pub category: LfCategory,
    pub threshold: f64,
    pub est_accuracy: f64,
    pub est_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ProbClassifier>,
}

impl LfRecord {
    pub fn new(lf: &LabelFunction, labels: &LabelSpace) -> Self {
        let (rule, features, classifier) = match &lf.rule {
            LfRule::Surface(r) => (Some(r.to_file(&lf.id, labels)), None, None),
            LfRule::Classifier(c) => (
                None,
                Some(c.featurizer.spec().clone()),
                Some(c.classifier.as_ref().clone()),
            ),
        };
        Self {
            id: lf.id.clone(),
            category: lf.category,
            threshold: lf.threshold(),
            est_accuracy: lf.est_accuracy,
            est_coverage: lf.est_coverage,
            rule,
            features,
            classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// SHA-256 of each input file, keyed by role.
    pub input_digests: BTreeMap<String, String>,
    pub timings_secs: BTreeMap<String, f64>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub lf_count: usize,
    pub rounds: usize,
    pub hit_round_limit: bool,
    pub finished_at: u64,
}

#[derive(Debug, Clone, Serialize)]
struct EvalArtifact<'a> {
    label_model: &'a str,
    labeling: Option<&'a EvalReport>,
    e2e: Option<&'a EvalReport>,
    downstream_features: Option<&'a FeatureSpec>,
    config_hash: &'a str,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file and renames it into place.
pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, value)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes every run artifact into `out_dir` and returns their paths.
pub fn write_artifacts(
    result: &PipelineResult,
    dataset: &Dataset,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<BTreeMap<String, PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = BTreeMap::new();
    let mut add = |name: &str, file: &str| {
        let p = out_dir.join(file);
        paths.insert(name.to_string(), p.clone());
        p
    };

    write_json(&add("config", "config.json"), config)?;
    let records: Vec<LfRecord> = result.lfs.iter().map(|lf| LfRecord::new(lf, &result.labels)).collect();
    write_json(&add("lf_pool", "lf_pool.json"), &records)?;
    write_json::<[FilterReport]>(&add("filter_reports", "filter_reports.json"), &result.exploitation.reports)?;
    write_json(&add("skip_reports", "skip_reports.json"), &result.exploitation.pool.skip_reports)?;

    let matrix_path = add("label_matrix", "label_matrix.csv");
    result.matrix.write_csv(create(&matrix_path)?)?;

    let labels_path = add("labels", "labels.jsonl");
    let mut w = create(&labels_path)?;
    write_labels_jsonl(&mut w, &result.matrix.row_ids, &result.probs, &result.labels)?;
    w.flush().map_err(|e| Error::io(&labels_path, e))?;

    let curves_dir = add("curves", "curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    for lf in &result.lfs {
        if let Some(curve) = result.exploitation.curves.get(&lf.id) {
            let p = curves_dir.join(format!("{}.csv", lf.id));
            curve.write_csv(create(&p)?)?;
        }
    }

    let kind = resolve_label_model(&config.label_model, &result.lfs);
    let downstream_spec = result.downstream.as_ref().map(|(_, f)| f.spec().clone());
    write_json(
        &add("eval_report", "eval_report.json"),
        &EvalArtifact {
            label_model: kind.name(),
            labeling: result.labeling.as_ref(),
            e2e: result.e2e.as_ref(),
            downstream_features: downstream_spec.as_ref(),
            config_hash: &result.config_hash,
        },
    )?;

    if let Some((clf, featurizer)) = &result.downstream {
        write_json(
            &add("downstream_model", "downstream_model.json"),
            &Checkpoint {
                config_hash: result.config_hash.clone(),
                model: clf.clone(),
            },
        )?;
        if !dataset.test.is_empty() {
            let docs: Vec<_> = dataset.test.iter().map(|e| e.doc.clone()).collect();
            let dists = predict_docs(clf, &docs, featurizer)?;
            let p = add("predictions", "predictions.jsonl");
            let mut w = create(&p)?;
            write_predictions(&mut w, &docs, &dists, result.labels.names())?;
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(paths)
}

pub fn ledger_row(result: &PipelineResult, dataset_name: &str, config: &PipelineConfig) -> LedgerRow {
    let labeling = result.labeling.as_ref();
    LedgerRow {
        dataset: dataset_name.to_string(),
        label_model: config.label_model.name().to_string(),
        coverage: labeling.map_or_else(|| crate::metrics::coverage(&result.matrix), |r| r.coverage),
        weighted_f1: labeling.map_or(f64::NAN, |r| r.weighted_f1),
        label_quality: labeling.map_or(f64::NAN, |r| r.label_quality),
        e2e_f1: result.e2e.as_ref().map(|r| r.weighted_f1),
        config_hash: result.config_hash.clone(),
        timestamp: now_secs(),
    }
}

/// Loads a dataset file, using the config's class order or the sorted
/// label names found in the file.
pub fn load_for_config(data: &Path, config: &PipelineConfig) -> Result<Dataset> {
    if !data.exists() {
        return Err(Error::io(data, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found")));
    }
    let format = Format::from_path(data);
    let labels = match &config.class_names {
        Some(names) => LabelSpace::new(names.clone())?,
        None => infer_label_space(data, format)?,
    };
    load_dataset(data, format, &labels)
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
    /// Ledger location; `out/results_ledger.csv` when absent.
    pub ledger: Option<PathBuf>,
}

/// Full `run` command. Returns the manifest written to `out/manifest.json`.
pub fn cmd_run(args: &RunArgs) -> std::result::Result<(RunManifest, PipelineResult), StageError> {
    let mut config = load_config(args.config.as_deref()).map_err(at("config"))?;
    if let Some(seed) = args.seed_override {
        config.base_seed = seed;
    }
    run_with_config(&config, args)
}

fn run_with_config(
    config: &PipelineConfig,
    args: &RunArgs,
) -> std::result::Result<(RunManifest, PipelineResult), StageError> {
    let started = Instant::now();
    let dataset = load_for_config(&args.data, config).map_err(at("ingest"))?;
    let ingest_secs = started.elapsed().as_secs_f64();
    let result = run_pipeline(&dataset, config, RunStages::default())?;
    let mut artifacts = write_artifacts(&result, &dataset, config, &args.out).map_err(at("write"))?;

    let ledger = args.ledger.clone().unwrap_or_else(|| args.out.join("results_ledger.csv"));
    let name = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    append_ledger_row(&ledger, &ledger_row(&result, &name, config)).map_err(at("write"))?;
    artifacts.insert("results_ledger".into(), ledger);

    let mut digests = BTreeMap::new();
    digests.insert("dataset".into(), file_digest(&args.data).map_err(at("write"))?);
    if let Some(c) = &args.config {
        digests.insert("config".into(), file_digest(c).map_err(at("write"))?);
    }
    let mut timings = result.timings.clone();
    timings.insert("ingest".into(), ingest_secs);
    let manifest_path = args.out.join("manifest.json");
    artifacts.insert("manifest".into(), manifest_path.clone());
    let manifest = RunManifest {
        config_hash: result.config_hash.clone(),
        input_digests: digests,
        timings_secs: timings,
        artifacts,
        lf_count: result.lfs.len(),
        rounds: result.exploitation.reports.len(),
        hit_round_limit: result.exploitation.hit_round_limit,
        finished_at: now_secs(),
    };
    write_json_atomic(&manifest_path, &manifest).map_err(at("write"))?;
    Ok((manifest, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Beta,
    K,
    Abstain,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            "k" | "k_c" => Ok(SweepParam::K),
            "abstain" => Ok(SweepParam::Abstain),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// A copy of `config` with one parameter set from its textual value.
pub fn apply_sweep_value(config: &PipelineConfig, param: SweepParam, value: &str) -> Result<PipelineConfig> {
    let bad = |e: String| Error::Config(format!("bad {param:?} value {value:?}: {e}"));
    let mut c = config.clone();
    match param {
        SweepParam::Alpha => c.alpha = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        SweepParam::Beta => c.beta = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        SweepParam::K => {
            let k: usize = value.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            c = c.with_k(k);
        }
        SweepParam::Abstain => {
            c.abstain_enabled = match value.trim().to_ascii_lowercase().as_str() {
                "on" | "true" | "1" | "yes" => true,
                "off" | "false" | "0" | "no" => false,
                _ => return Err(bad("expected on/off".into())),
            }
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub coverage: Option<f64>,
    pub label_quality: Option<f64>,
    pub e2e_f1: Option<f64>,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

/// One run per value under `out/<param>-<value>/`, sharing
/// `out/results_ledger.csv`; writes `out/sweep.csv`. Failures of single
/// values are recorded and the sweep continues.
pub fn cmd_sweep(
    config_path: Option<&Path>,
    data: &Path,
    param: SweepParam,
    values: &[String],
    out: &Path,
    seed_override: Option<u64>,
) -> std::result::Result<Vec<SweepRow>, StageError> {
    if values.is_empty() {
        return Err(StageError {
            stage: "sweep",
            error: Error::Precondition("sweep needs at least one value".into()),
        });
    }
    let mut base = load_config(config_path).map_err(at("config"))?;
    if let Some(s) = seed_override {
        base.base_seed = s;
    }
    fs::create_dir_all(out).map_err(|e| at("write")(Error::io(out, e)))?;
    let ledger = out.join("results_ledger.csv");
    let mut rows = Vec::new();
    for value in values {
        let started = Instant::now();
        let outcome = apply_sweep_value(&base, param, value)
            .map_err(at("config"))
            .and_then(|cfg| {
                let args = RunArgs {
                    config: config_path.map(Path::to_path_buf),
                    data: data.to_path_buf(),
                    out: out.join(format!("{}-{}", format!("{param:?}").to_lowercase(), value)),
                    seed_override: None,
                    ledger: Some(ledger.clone()),
                };
                run_with_config(&cfg, &args)
            });
        let wall = started.elapsed().as_secs_f64();
        rows.push(match outcome {
            Ok((_, r)) => SweepRow {
                value: value.clone(),
                coverage: Some(r.labeling.as_ref().map_or_else(|| crate::metrics::coverage(&r.matrix), |l| l.coverage)),
                label_quality: r.labeling.as_ref().map(|l| l.label_quality),
                e2e_f1: r.e2e.as_ref().map(|e| e.weighted_f1),
                wall_time_secs: wall,
                error: None,
            },
            Err(e) => {
                log::error!("sweep value {value}: {e}");
                SweepRow {
                    value: value.clone(),
                    coverage: None,
                    label_quality: None,
                    e2e_f1: None,
                    wall_time_secs: wall,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(create(&path).map_err(at("write"))?);
    for r in &rows {
        w.serialize(r).map_err(|e| at("write")(e.into()))?;
    }
    w.flush().map_err(|e| at("write")(Error::io(&path, e)))?;
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct LabelLine {
    doc_id: String,
    dist: Vec<f64>,
    covered: bool,
}

pub fn read_labels_jsonl(path: &Path) -> Result<(Vec<String>, Vec<ProbabilisticLabel>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        ids.push(rec.doc_id);
        probs.push(ProbabilisticLabel {
            dist: rec.dist,
            covered: rec.covered,
        });
    }
    Ok((ids, probs))
}

/// Standalone labeling report from exported labels and a gold dataset whose
/// unlabeled records carry labels.
pub fn cmd_eval(
    labels_path: &Path,
    data: &Path,
    out: &Path,
    config_path: Option<&Path>,
) -> std::result::Result<EvalReport, StageError> {
    let config = load_config(config_path).map_err(at("config"))?;
    let dataset = load_for_config(data, &config).map_err(at("ingest"))?;
    let (ids, probs) = read_labels_jsonl(labels_path).map_err(at("ingest"))?;
    if let Some(p) = probs.iter().find(|p| p.dist.len() != dataset.num_classes()) {
        return Err(at("eval")(Error::DimensionMismatch {
            expected: dataset.num_classes(),
            got: p.dist.len(),
        }));
    }
    let gold: Vec<LabeledExample> = dataset
        .unlabeled
        .iter()
        .filter_map(|d| dataset.hidden_gold.get(&d.id).map(|&g| LabeledExample { doc: d.clone(), gold: g }))
        .collect();
    let report = evaluate_labels(&ids, &probs, &gold).map_err(at("eval"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| at("write")(Error::io(parent, e)))?;
    }
    write_json(out, &report).map_err(at("write"))?;
    Ok(report)
}
