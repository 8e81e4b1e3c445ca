use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rxai_core::eval::{evaluate_scores, write_roc_csv, EvalReport, DEFAULT_THRESHOLD};
use rxai_core::explain::{
    lime_explain, occlusion_explain, summarize_importance, Explanation, ImportanceSummary, Method, SIGN_CONVENTION,
};
use rxai_core::ingest::{
    apply_imputer, describe, fit_imputer, load_csv, sample_rows, stratified_split_labels, Dataset, SplitIndices,
};
use rxai_core::model::{
    embedding_stats, load_checkpoint, save_checkpoint, train, write_attention_csv, CheckpointHeader,
    TrainHistory,
};
use rxai_core::nttp::{
    build_vocab, fit_binner, prepare_examples, read_prepared, write_prepared, EncodedExample, PreparedExample,
    TokenVocab, SPECIAL_TOKENS, CLS_ID,
};
use rxai_core::transforms::{fit_pre_binning, report_histograms, transform_report, write_histograms_csv};
use rxai_core::{Classifier, CLASS_NAMES, RANSOMWARE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, update_manifest};
use crate::svg;

pub const PREPARED_FILE: &str = "prepared.csv";
pub const BINNING_FILE: &str = "binning.json";
pub const IMPUTER_FILE: &str = "imputer.json";
pub const PRE_BINNING_FILE: &str = "pre_binning.json";
pub const TRANSFORM_REPORT_FILE: &str = "transform_report.json";
pub const HISTOGRAMS_FILE: &str = "transform_histograms.csv";
pub const COLUMN_STATS_CSV: &str = "column_stats.csv";
pub const COLUMN_STATS_JSON: &str = "column_stats.json";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const ATTENTION_DIR: &str = "attention";
pub const EXPLAIN_DIR: &str = "explanations";
pub const REPORT_DIR: &str = "report";
pub const HISTOGRAM_BINS: usize = 20;
pub const REPORT_TOP_K: usize = 10;

pub fn summary_file(method: Method) -> String {
    format!("importance_summary_{method}.json")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing {what}: {}", path.display())));
    }
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    Ok(serde_json::from_reader(open(path, what)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs `f` on a pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn timed<R>(config: &RunConfig, command: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    let start = Instant::now();
    let out = f()?;
    update_manifest(&config.out, config, command, start.elapsed())?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub n_rows: usize,
    pub class_counts: [usize; 2],
    pub sources: Vec<String>,
    pub columns: Vec<String>,
}

pub fn load_inputs(config: &RunConfig) -> Result<Dataset> {
    config.check_inputs_exist()?;
    let mut parts = Vec::new();
    for spec in config.input_specs()? {
        let d = load_csv(&spec.path, None).map_err(|e| CliError::Data(format!("{}: {e}", spec.path.display())))?;
        parts.push(match &spec.source {
            Some(tag) => d.with_source_tag(tag),
            None => d,
        });
    }
    Ok(Dataset::concat(&parts)?)
}

pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareSummary> {
    config.validate()?;
    timed(config, "prepare", || {
        let out = &config.out;
        create_dir(out)?;
        let merged = load_inputs(config)?;
        let merged = match config.sample_n {
            Some(n) => sample_rows(&merged, n, config.seed),
            None => merged,
        };
        let imputer = fit_imputer(&merged)?;
        let imputed = apply_imputer(&imputer, &merged)?;
        write_json(&out.join(IMPUTER_FILE), &imputer)?;

        let stats = describe(&imputed);
        write_json(&out.join(COLUMN_STATS_JSON), &stats)?;
        let mut w = csv::Writer::from_writer(create(&out.join(COLUMN_STATS_CSV))?);
        for s in &stats {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| CliError::io(&out.join(COLUMN_STATS_CSV), e))?;

        let report = transform_report(&imputed);
        write_json(&out.join(TRANSFORM_REPORT_FILE), &report)?;
        let hist = report_histograms(&imputed, &report, HISTOGRAM_BINS);
        write_histograms_csv(&hist, create(&out.join(HISTOGRAMS_FILE))?)?;

        let binning_input = if config.pre_binning {
            let pb = fit_pre_binning(&imputed)?;
            write_json(&out.join(PRE_BINNING_FILE), &pb)?;
            pb.apply(&imputed)?
        } else {
            imputed
        };
        let mut binner = fit_binner(&binning_input, config.n_bins)?;
        if config.include_categoricals {
            binner = binner.with_categoricals(&binning_input);
        }
        write_json(&out.join(BINNING_FILE), &binner)?;
        let rows = prepare_examples(&binner, &binning_input)?;
        write_prepared(&rows, create(&out.join(PREPARED_FILE))?)?;

        let mut sources: Vec<String> = binning_input.source.clone();
        sources.sort();
        sources.dedup();
        Ok(PrepareSummary {
            n_rows: rows.len(),
            class_counts: binning_input.class_counts(),
            sources,
            columns: binner
                .column_order()
                .map(String::from)
                .chain(binner.categorical_columns.iter().cloned())
                .collect(),
        })
    })
}

pub fn read_prepared_file(out: &Path) -> Result<Vec<PreparedExample>> {
    Ok(read_prepared(open(&out.join(PREPARED_FILE), "prepared data")?)?)
}

pub fn encode_rows(vocab: &TokenVocab, rows: &[PreparedExample], idx: &[usize], max_len: usize) -> Result<Vec<EncodedExample>> {
    idx.iter()
        .map(|&i| Ok(vocab.tokenize(&rows[i].text, max_len)?.with_label(rows[i].label)))
        .collect()
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainHistory> {
    config.validate()?;
    timed(config, "train", || {
        let out = &config.out;
        let rows = read_prepared_file(out)?;
        let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
        let split = stratified_split_labels(&labels, config.fractions(), config.seed)?;
        let texts: Vec<&str> = rows.iter().map(|r| r.text.as_str()).collect();
        let vocab = build_vocab(&texts);
        let train_set = encode_rows(&vocab, &rows, &split.train, config.max_len)?;
        let val_set = encode_rows(&vocab, &rows, &split.validation, config.max_len)?;

        let mut model = Classifier::new(config.model_config(), vocab.len())?;
        let history = train(&mut model, &train_set, &val_set, &config.train_config())?;

        write_json(&out.join(SPLIT_FILE), &split)?;
        write_json(&out.join(VOCAB_FILE), &vocab)?;
        write_json(&out.join(HISTORY_FILE), &history)?;
        let meta = serde_json::json!({
            "prepared_sha256": sha256_file(&out.join(PREPARED_FILE))?,
            "n_train": split.train.len(),
            "n_validation": split.validation.len(),
        });
        let path = out.join(CHECKPOINT_FILE);
        let mut w = create(&path)?;
        save_checkpoint(&model, &vocab.fingerprint(), meta, &mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(history)
    })
}

/// Everything a trained run directory holds.
pub struct Run {
    pub rows: Vec<PreparedExample>,
    pub split: SplitIndices,
    pub vocab: TokenVocab,
    pub model: Classifier,
    pub header: CheckpointHeader,
}

pub fn load_run(out: &Path) -> Result<Run> {
    let rows = read_prepared_file(out)?;
    let split: SplitIndices = read_json(&out.join(SPLIT_FILE), "split")?;
    let vocab: TokenVocab = read_json(&out.join(VOCAB_FILE), "vocabulary")?;
    let (model, header) = load_checkpoint::<f64, _>(open(&out.join(CHECKPOINT_FILE), "checkpoint")?)?;
    if header.vocab_sha256 != vocab.fingerprint() {
        return Err(CliError::Data("checkpoint was trained with a different vocabulary".into()));
    }
    if let Some(&bad) = split.train.iter().chain(&split.validation).chain(&split.test).find(|&&i| i >= rows.len()) {
        return Err(CliError::Data(format!("split row {bad} is beyond the prepared data")));
    }
    Ok(Run {
        rows,
        split,
        vocab,
        model,
        header,
    })
}

/// `[CLS]` plus the tokens the model actually sees.
pub fn model_tokens(text: &str, max_len: usize) -> Vec<String> {
    std::iter::once(SPECIAL_TOKENS[CLS_ID as usize].to_string())
        .chain(text.split_whitespace().take(max_len.saturating_sub(1)).map(String::from))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    /// Row index in the prepared file.
    pub row: usize,
    pub layer: usize,
    pub head: usize,
    pub size: usize,
    pub file: String,
    pub max_row_sum_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    pub attention_mode: String,
    pub attention: Vec<AttentionExport>,
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalOutput> {
    config.validate()?;
    timed(config, "evaluate", || {
        let out = &config.out;
        let run = load_run(out)?;
        let max_len = run.model.config.max_len;
        let test = encode_rows(&run.vocab, &run.rows, &run.split.test, max_len)?;
        if test.is_empty() {
            return Err(CliError::Data("test split is empty".into()));
        }
        let probs = run.model.predict_proba(&test)?;
        let scores: Vec<f64> = probs.iter().map(|p| p[RANSOMWARE as usize]).collect();
        let labels: Vec<u8> = run.split.test.iter().map(|&i| run.rows[i].label).collect();
        let report = evaluate_scores(&scores, &labels, DEFAULT_THRESHOLD)?;
        let roc_path = out.join(ROC_FILE);
        if report.auc.is_some() {
            write_roc_csv(&report.roc, create(&roc_path)?)?;
        } else if roc_path.exists() {
            std::fs::remove_file(&roc_path).map_err(|e| CliError::io(&roc_path, e))?;
        }

        let k = config.attention_samples.min(test.len());
        let mut attention = Vec::new();
        if k > 0 {
            let fwd = run.model.forward(&test[..k], true)?;
            let maps = fwd.attentions.unwrap_or_default();
            for (b, m) in maps.iter().enumerate() {
                let row = run.split.test[b];
                let tokens = model_tokens(&run.rows[row].text, max_len);
                for (l, heads) in m.layers.iter().enumerate() {
                    for (h, a) in heads.iter().enumerate() {
                        let file = format!("{ATTENTION_DIR}/sample_{b}_layer_{l}_head_{h}.csv");
                        let path = out.join(&file);
                        let mut w = create(&path)?;
                        write_attention_csv(&mut w, a, &tokens).map_err(|e| CliError::io(&path, e))?;
                        w.flush().map_err(|e| CliError::io(&path, e))?;
                        let err = (0..a.rows)
                            .map(|r| (a.row(r).iter().sum::<f64>() - 1.0).abs())
                            .fold(0.0, f64::max);
                        attention.push(AttentionExport {
                            row,
                            layer: l,
                            head: h,
                            size: a.rows,
                            file,
                            max_row_sum_error: err,
                        });
                    }
                }
            }
        }
        let output = EvalOutput {
            report,
            attention_mode: run.model.config.attention_mode.to_string(),
            attention,
        };
        write_json(&out.join(EVAL_REPORT_FILE), &output)?;
        Ok(output)
    })
}

/// Up to `n` test rows, half from each class in test order. A class short of
/// rows leaves its share to the other.
pub fn select_explain_rows(run: &Run, n: usize) -> Vec<usize> {
    let by_class: Vec<Vec<usize>> = (0..2u8)
        .map(|c| run.split.test.iter().copied().filter(|&i| run.rows[i].label == c).collect())
        .collect();
    let want1 = n / 2;
    let take1 = want1.min(by_class[1].len());
    let take0 = (n - take1).min(by_class[0].len());
    let take1 = (n - take0).min(by_class[1].len());
    let mut rows: Vec<usize> = by_class[0][..take0].iter().chain(&by_class[1][..take1]).copied().collect();
    rows.sort_unstable();
    rows
}

/// Text -> class probabilities through the trained model. Failures surface
/// as non-finite probabilities, which the explainers reject.
pub fn predictor<'a>(model: &'a Classifier, vocab: &'a TokenVocab) -> impl Fn(&str) -> [f64; 2] + Sync + 'a {
    let max_len = model.config.max_len;
    move |text: &str| {
        vocab
            .tokenize(text, max_len)
            .ok()
            .and_then(|ex| model.predict_proba(&[ex]).ok())
            .and_then(|p| p.first().copied())
            .unwrap_or([f64::NAN, f64::NAN])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub row: usize,
    pub label: String,
    #[serde(flatten)]
    pub explanation: Explanation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub sign_convention: String,
    pub method: Method,
    pub rows: Vec<usize>,
    #[serde(flatten)]
    pub summary: ImportanceSummary,
}

pub fn explain_one<F>(predict: &F, method: Method, text: &str, config: &RunConfig) -> Result<Explanation>
where
    F: Fn(&str) -> [f64; 2] + Sync,
{
    Ok(match method {
        Method::Lime => lime_explain(predict, text, config.lime_config())?,
        Method::Occlusion => occlusion_explain(predict, text)?,
    })
}

pub fn cmd_explain(config: &RunConfig) -> Result<Vec<SummaryFile>> {
    config.validate()?;
    timed(config, "explain", || {
        let out = &config.out;
        let run = load_run(out)?;
        let rows = select_explain_rows(&run, config.explain_n);
        if rows.is_empty() {
            return Err(CliError::Data("explain set is empty".into()));
        }
        let predict = predictor(&run.model, &run.vocab);
        let labels: Vec<u8> = rows.iter().map(|&i| run.rows[i].label).collect();
        let mut summaries = Vec::new();
        for method in config.explain_method.methods() {
            let dir = out.join(EXPLAIN_DIR).join(method.to_string());
            let mut explanations = Vec::with_capacity(rows.len());
            for (k, &row) in rows.iter().enumerate() {
                let e = explain_one(&predict, method, &run.rows[row].text, config)?;
                let record = ExplainRecord {
                    row,
                    label: CLASS_NAMES[run.rows[row].label as usize].to_string(),
                    explanation: e,
                };
                write_json(&dir.join(format!("sample_{k}.json")), &record)?;
                let bars = dir.join(format!("sample_{k}_bars.csv"));
                record.explanation.write_bar_csv(create(&bars)?)?;
                explanations.push(record.explanation);
            }
            let file = SummaryFile {
                sign_convention: SIGN_CONVENTION.to_string(),
                method,
                rows: rows.clone(),
                summary: summarize_importance(&explanations, &labels)?,
            };
            write_json(&out.join(summary_file(method)), &file)?;
            summaries.push(file);
        }
        Ok(summaries)
    })
}

/// Square attention matrix back from its CSV export.
pub fn read_attention_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(open(path, "attention export")?);
    let tokens: Vec<String> = rdr.headers()?.iter().skip(1).map(String::from).collect();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
            .collect::<Result<_>>()?;
        weights.push(row);
    }
    Ok((tokens, weights))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

pub fn cmd_report(config: &RunConfig) -> Result<ReportIndex> {
    config.validate()?;
    timed(config, "report", || {
        let out = &config.out;
        let methods = config.explain_method.methods();
        let mut required: Vec<PathBuf> = vec![out.join(EVAL_REPORT_FILE), out.join(CHECKPOINT_FILE)];
        required.extend(methods.iter().map(|m| out.join(summary_file(*m))));
        let missing: Vec<String> = required
            .iter()
            .filter(|p| !p.exists())
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Data(format!("report inputs missing: {}", missing.join(", "))));
        }
        let dir = out.join(REPORT_DIR);
        create_dir(&dir)?;
        let mut index = ReportIndex {
            files: Vec::new(),
            notes: Vec::new(),
        };
        let mut emit = |name: &str, svg: String, plot_json: serde_json::Value| -> Result<()> {
            write_text(&dir.join(format!("{name}.svg")), &svg)?;
            write_json(&dir.join(format!("{name}_plot.json")), &plot_json)?;
            index.files.push(format!("{REPORT_DIR}/{name}.svg"));
            index.files.push(format!("{REPORT_DIR}/{name}_plot.json"));
            Ok(())
        };

        let eval: EvalOutput = read_json(&out.join(EVAL_REPORT_FILE), "evaluation report")?;
        let mut notes = Vec::new();
        if eval.report.auc.is_some() {
            let (s, p) = svg::roc_svg(&eval.report.roc, eval.report.auc, ROC_FILE);
            emit("roc", s, serde_json::to_value(p)?)?;
        } else {
            notes.push("no ROC curve: the test split has a single class".to_string());
        }

        for m in &methods {
            let file: SummaryFile = read_json(&out.join(summary_file(*m)), "importance summary")?;
            let Some(c) = file.summary.class(RANSOMWARE) else { continue };
            let feats: Vec<(String, f64)> = c
                .top_features
                .iter()
                .take(REPORT_TOP_K)
                .map(|f| (f.token.clone(), f.mean_weight))
                .collect();
            let title = format!("{m} mean weight, {} samples", CLASS_NAMES[RANSOMWARE as usize]);
            let (s, p) = svg::importance_svg(&title, &feats, &summary_file(*m));
            emit(&format!("importance_{m}"), s, serde_json::to_value(p)?)?;
        }

        match eval.attention.first() {
            Some(a) => {
                let (tokens, weights) = read_attention_csv(&out.join(&a.file))?;
                let title = format!("layer {} head {}", a.layer, a.head);
                let (s, p) = svg::attention_svg(&title, &tokens, &weights, &a.file);
                emit("attention", s, serde_json::to_value(p)?)?;
            }
            None => notes.push("no attention exports to draw".to_string()),
        }

        let (model, _) = load_checkpoint::<f64, _>(open(&out.join(CHECKPOINT_FILE), "checkpoint")?)?;
        let stats = embedding_stats(&model);
        write_json(&dir.join("embedding_stats.json"), &stats)?;
        index.files.push(format!("{REPORT_DIR}/embedding_stats.json"));
        index.notes = notes;
        write_json(&dir.join("index.json"), &index)?;
        Ok(index)
    })
}

/// prepare, train, evaluate, explain, report.
pub fn run_all(config: &RunConfig) -> Result<ReportIndex> {
    cmd_prepare(config)?;
    cmd_train(config)?;
    cmd_evaluate(config)?;
    cmd_explain(config)?;
    cmd_report(config)
}
