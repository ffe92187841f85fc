//! Pipelines behind each subcommand. Every artifact carries the resolved config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bias_align::fod::{decompose as split, invariant_basis, TextAnchors};
use bias_align::groups::{ClassLabel, Sample};
use bias_align::io::{format_anchors, format_dataset, read_anchors, read_dataset, write_text};
use bias_align::linalg::Pca;
use bias_align::losses::LossBreakdown;
use bias_align::metrics::{
    apply_temperature, bias_alignment_stat, split_indices, temperature_scale, CalibrationBins,
    EvalReport, ScoredSample,
};
use bias_align::model::{
    forward, predict_logits, predict_scores, resume, train, Checkpoint, Head, ModelParams,
    Objective, TrainConfig,
};
use bias_align::synth::{generate, oracle_checks, OracleReport, SynthTruth};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const TRAIN_FILE: &str = "train.csv";
pub const UNSEEN_FILE: &str = "unseen.csv";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const BINS_FILE: &str = "bins.csv";
pub const CALIBRATED_REPORT_FILE: &str = "report_calibrated.json";
pub const CALIBRATED_BINS_FILE: &str = "bins_calibrated.csv";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const PCA2_FILE: &str = "pca2.csv";
pub const PCA3_FILE: &str = "pca3.csv";
pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_TABLE: &str = "compare.txt";

fn comment_block(config: &RunConfig) -> String {
    config
        .lines()
        .iter()
        .map(|l| format!("#config {l}\n"))
        .collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    Ok(write_text(path, &text)?)
}

fn write_csv(path: &Path, config: &RunConfig, body: &str) -> Result<()> {
    Ok(write_text(
        path,
        &format!("{}{body}", comment_block(config)),
    )?)
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let ds = read_dataset(path)?;
    if ds.samples.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no samples",
            path.display()
        )));
    }
    Ok(ds.samples)
}

pub fn scored(samples: &[Sample], scores: &[f64]) -> Vec<ScoredSample> {
    samples
        .iter()
        .zip(scores)
        .map(|(s, &score)| ScoredSample {
            sample_id: s.sample_id,
            domain: s.domain,
            label: s.label,
            score,
        })
        .collect()
}

fn label_name(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::Live => "live",
        ClassLabel::Spoof => "spoof",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub truth: SynthTruth,
}

/// Writes the train and held-out sets, the anchors and the ground truth.
pub fn synth(config: &RunConfig, out: &Path) -> Result<String> {
    let data = generate(&config.synth)?;
    let lines = config.lines();
    let seed = Some(config.synth.seed);
    write_text(
        &out.join(TRAIN_FILE),
        &format_dataset(&data.train, seed, &lines)?,
    )?;
    write_text(
        &out.join(UNSEEN_FILE),
        &format_dataset(&data.unseen, seed, &lines)?,
    )?;
    write_text(
        &out.join(ANCHORS_FILE),
        &format!("{}{}", comment_block(config), format_anchors(&data.anchors)),
    )?;
    write_json(
        &out.join(TRUTH_FILE),
        &json!({ "config": config.to_json(), "truth": data.truth }),
    )?;
    Ok(format!(
        "train: {} samples ({} domains x 2 labels x {}), unseen: {} samples (domain {}) -> {}",
        data.train.len(),
        config.synth.domains,
        config.synth.per_group,
        data.unseen.len(),
        data.truth.unseen_domain,
        out.display()
    ))
}

/// Trains from scratch, or continues `resume_from` up to `train.epochs` epochs.
pub fn train_cmd(
    config: &RunConfig,
    data: &Path,
    anchors: &Path,
    resume_from: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let samples = load_samples(data)?;
    let (ck, log) = match resume_from {
        Some(path) => {
            let mut ck = Checkpoint::load(path)?;
            let target = config.train.epochs as u64;
            if target <= ck.epoch {
                return Err(CliError::Config(format!(
                    "checkpoint is already at epoch {}; set train.epochs above it to resume",
                    ck.epoch
                )));
            }
            let extra = (target - ck.epoch) as usize;
            ck.config.epochs = config.train.epochs;
            resume(ck, &samples, extra)?
        }
        None => train(&samples, read_anchors(anchors)?, &config.train)?,
    };
    ck.save(&out.join(CHECKPOINT_FILE))?;
    let mut text = serde_json::to_string(&json!({ "config": config.to_json() })).expect("json");
    text.push('\n');
    for record in &log {
        text.push_str(&serde_json::to_string(record).expect("log records serialize"));
        text.push('\n');
    }
    write_text(&out.join(LOG_FILE), &text)?;
    write_text(&out.join(CONFIG_FILE), &config.to_toml())?;
    let last = log.last().map(|r| r.loss).unwrap_or_default();
    Ok(format!(
        "{}: {} iterations to epoch {}, final total loss {:.6} -> {}",
        ck.config.objective,
        log.len(),
        ck.epoch,
        last.total,
        out.display()
    ))
}

fn report_json(config: &RunConfig, ck: &Checkpoint, report: &EvalReport) -> serde_json::Value {
    json!({ "config": config.to_json(), "train_config": ck.config, "report": report })
}

/// Evaluates a checkpoint; with `calibrate`, fits a temperature on a held-out split.
pub fn eval(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    calibrate: bool,
    out: &Path,
) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let samples = load_samples(data)?;
    let head = config.eval.head;
    let bins = config.eval.bins;
    let write = |report: &EvalReport,
                 table: &CalibrationBins,
                 json_name: &str,
                 csv_name: &str|
     -> Result<()> {
        write_json(&out.join(json_name), &report_json(config, &ck, report))?;
        write_csv(&out.join(csv_name), config, &table.to_csv())
    };
    if !calibrate {
        let scores = predict_scores(&ck.params, &samples, head)?;
        let (report, table) = EvalReport::compute(&scored(&samples, &scores), bins, head)?;
        write(&report, &table, REPORT_FILE, BINS_FILE)?;
        return Ok(format!(
            "{} samples, {head} head: AUC {:.4}, HTER {:.4}, ECE {:.4} -> {}",
            report.samples,
            report.auc,
            report.hter,
            report.ece,
            out.display()
        ));
    }

    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();
    let (val, test) = split_indices(&labels, config.eval.val_fraction, config.eval.split_seed)?;
    let logits = predict_logits(&ck.params, &samples, head)?;
    let pick_logits = |idx: &[usize]| -> Vec<[f64; 2]> { idx.iter().map(|&i| logits[i]).collect() };
    let val_labels: Vec<ClassLabel> = val.iter().map(|&i| labels[i]).collect();
    let t = temperature_scale(&pick_logits(&val), &val_labels)?;
    let test_samples: Vec<Sample> = test.iter().map(|&i| samples[i].clone()).collect();
    let test_logits = pick_logits(&test);

    let (before, before_bins) = EvalReport::compute(
        &scored(&test_samples, &apply_temperature(&test_logits, 1.0)),
        bins,
        head,
    )?;
    let (mut after, after_bins) = EvalReport::compute(
        &scored(&test_samples, &apply_temperature(&test_logits, t)),
        bins,
        head,
    )?;
    after.temperature = Some(t);
    write(&before, &before_bins, REPORT_FILE, BINS_FILE)?;
    write(
        &after,
        &after_bins,
        CALIBRATED_REPORT_FILE,
        CALIBRATED_BINS_FILE,
    )?;
    Ok(format!(
        "validation {} / test {} samples, T = {t:.4}: test ECE {:.4} -> {:.4} -> {}",
        val.len(),
        test.len(),
        before.ece,
        after.ece,
        out.display()
    ))
}

const SPACES: [&str; 3] = ["embedding", "invariant", "specific"];

/// Per-sample invariant/specific parts plus PCA coordinates fitted on the seen set.
pub fn decompose(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    unseen: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let seen = load_samples(data)?;
    let unseen = match unseen {
        Some(p) => load_samples(p)?,
        None => Vec::new(),
    };
    let basis = invariant_basis(&ck.params.anchors)?;
    let k = ck.params.embed_dim();

    // rows[space][i] for the seen samples followed by the unseen ones.
    let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
    let all: Vec<(&Sample, &str)> = seen
        .iter()
        .map(|s| (s, "seen"))
        .chain(unseen.iter().map(|s| (s, "unseen")))
        .collect();
    let mut table = String::from("sample_id,domain,label,split");
    for prefix in ["fi", "fs"] {
        for j in 0..k {
            write!(table, ",{prefix}_{j}").expect("string write");
        }
    }
    table.push('\n');
    for (s, tag) in &all {
        let w = forward(&ck.params, &s.embedding)?.embedding;
        let parts = split(&w, &basis)?;
        write!(
            table,
            "{},{},{},{tag}",
            s.sample_id,
            s.domain,
            label_name(s.label)
        )
        .expect("string write");
        for x in parts.invariant.iter().chain(&parts.specific) {
            write!(table, ",{x}").expect("string write");
        }
        table.push('\n');
        rows[0].push(w);
        rows[1].push(parts.invariant);
        rows[2].push(parts.specific);
    }
    write_csv(&out.join(DECOMPOSITION_FILE), config, &table)?;

    for (dims, name) in [(2, PCA2_FILE), (3, PCA3_FILE)] {
        let mut text = String::from("sample_id,domain,label,split,space");
        for j in 1..=dims {
            write!(text, ",pc{j}").expect("string write");
        }
        text.push('\n');
        for (space, space_rows) in SPACES.iter().zip(&rows) {
            let pca = Pca::fit(&space_rows[..seen.len()], dims.min(k))?;
            for ((s, tag), row) in all.iter().zip(space_rows) {
                write!(
                    text,
                    "{},{},{},{tag},{space}",
                    s.sample_id,
                    s.domain,
                    label_name(s.label)
                )
                .expect("string write");
                for c in pca.project(row)? {
                    write!(text, ",{c}").expect("string write");
                }
                text.push('\n');
            }
        }
        write_csv(&out.join(name), config, &text)?;
    }
    Ok(format!(
        "{} seen + {} unseen samples decomposed in {k} dimensions -> {}",
        seen.len(),
        unseen.len(),
        out.display()
    ))
}

/// One trained configuration in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub objective: Objective,
    pub gs: bool,
    pub fod: bool,
    pub final_loss: LossBreakdown,
    /// Embedding head on the held-out set.
    pub unseen: EvalReport,
    /// Classifier head on the held-out set.
    pub unseen_classifier: EvalReport,
    /// Threshold spread over every domain, seen and held-out.
    pub bias_alignment_all: f64,
    /// Threshold spread over the seen domains only.
    pub bias_alignment_seen: f64,
    pub probes: Option<OracleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.name == name)
    }
}

/// The named training configurations a comparison covers.
pub fn comparison_runs(
    base: &TrainConfig,
    objectives: &[Objective],
    ablations: bool,
) -> Vec<(String, TrainConfig)> {
    let mut runs: Vec<(String, TrainConfig)> = objectives
        .iter()
        .map(|&objective| {
            (
                objective.to_string(),
                TrainConfig {
                    objective,
                    ..base.clone()
                },
            )
        })
        .collect();
    if ablations {
        for (name, gs, fod) in [
            ("gdfas[gs-only]", true, false),
            ("gdfas[fod-only]", false, true),
            ("gdfas[neither]", false, false),
        ] {
            runs.push((
                name.to_string(),
                TrainConfig {
                    objective: Objective::Gdfas,
                    gs_enabled: gs,
                    fod_enabled: fod,
                    ..base.clone()
                },
            ));
        }
    }
    runs
}

fn summarize(
    name: String,
    tc: &TrainConfig,
    params: &ModelParams,
    final_loss: LossBreakdown,
    seen: &[Sample],
    unseen: &[Sample],
    truth: Option<&SynthTruth>,
    bins: usize,
) -> Result<RunSummary> {
    let embedding = predict_scores(params, unseen, Head::Embedding)?;
    let (report, _) = EvalReport::compute(&scored(unseen, &embedding), bins, Head::Embedding)?;
    let classifier = predict_scores(params, unseen, Head::Classifier)?;
    let (classifier_report, _) =
        EvalReport::compute(&scored(unseen, &classifier), bins, Head::Classifier)?;
    let seen_scored = scored(seen, &predict_scores(params, seen, Head::Embedding)?);
    let mut all_scored = seen_scored.clone();
    all_scored.extend(scored(unseen, &embedding));
    let probes = truth
        .map(|t| oracle_checks(seen, t, params, Head::Embedding))
        .transpose()?;
    let gdfas = tc.objective == Objective::Gdfas;
    Ok(RunSummary {
        name,
        objective: tc.objective,
        gs: gdfas && tc.gs_enabled,
        fod: gdfas && tc.fod_enabled,
        final_loss,
        unseen: report,
        unseen_classifier: classifier_report,
        bias_alignment_all: bias_alignment_stat(&all_scored)?,
        bias_alignment_seen: bias_alignment_stat(&seen_scored)?,
        probes,
    })
}

/// Trains every configuration on the same data and seed, then tabulates held-out metrics.
pub fn compare(
    config: &RunConfig,
    data: &Path,
    unseen: &Path,
    anchors: &Path,
    truth: Option<&Path>,
    objectives: &[Objective],
    ablations: bool,
    out: &Path,
) -> Result<(Comparison, String)> {
    let seen = load_samples(data)?;
    let held_out = load_samples(unseen)?;
    let anchors: TextAnchors = read_anchors(anchors)?;
    let truth = match truth {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| bias_align::Error::io(p, e))?;
            let file: TruthFile =
                serde_json::from_str(&text).map_err(|e| bias_align::Error::Parse {
                    line: e.line(),
                    column: e.column(),
                    message: format!("{}: {e}", p.display()),
                })?;
            Some(file.truth)
        }
        None => None,
    };

    let mut runs = Vec::new();
    for (name, tc) in comparison_runs(&config.train, objectives, ablations) {
        log::info!("training {name}");
        let (ck, log) = train(&seen, anchors.clone(), &tc)?;
        let last = log.last().map(|r| r.loss).unwrap_or_default();
        runs.push(summarize(
            name,
            &tc,
            &ck.params,
            last,
            &seen,
            &held_out,
            truth.as_ref(),
            config.eval.bins,
        )?);
    }
    let comparison = Comparison { runs };
    write_json(
        &out.join(COMPARE_JSON),
        &json!({ "config": config.to_json(), "runs": comparison.runs }),
    )?;
    let table = format_table(&comparison);
    write_text(
        &out.join(COMPARE_TABLE),
        &format!("{}{table}", comment_block(config)),
    )?;
    Ok((comparison, table))
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "-"
    }
}

/// Side-by-side held-out metrics, one row per run.
pub fn format_table(c: &Comparison) -> String {
    let mut out = format!(
        "{:<18} {:>5} {:>5} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
        "run", "gs", "fod", "HTER", "AUC", "ECE", "bias(all)", "bias(seen)"
    );
    for r in &c.runs {
        writeln!(
            out,
            "{:<18} {:>5} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            r.name,
            mark(r.gs),
            mark(r.fod),
            r.unseen.hter,
            r.unseen.auc,
            r.unseen.ece,
            r.bias_alignment_all,
            r.bias_alignment_seen
        )
        .expect("string write");
    }
    out
}

/// Standard file locations under a directory written by `synth`.
pub fn synth_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join(TRAIN_FILE),
        dir.join(UNSEEN_FILE),
        dir.join(ANCHORS_FILE),
        dir.join(TRUTH_FILE),
    )
}
