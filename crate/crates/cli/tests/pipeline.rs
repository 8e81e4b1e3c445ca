use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use proptest::prelude::*;
use rxai_cli::fixtures::{write_telemetry_fixture, N_TOTAL, PM_SOURCE, UGR_SOURCE};
use rxai_cli::manifest::{load_manifest, sha256_file};
use rxai_cli::pipeline::{self, read_attention_csv, run_all, REPORT_DIR};
use rxai_cli::svg::importance_svg;
use rxai_cli::RunConfig;
use rxai_core::Classifier;
use serde_json::Value;

struct Shared {
    _dir: tempfile::TempDir,
    data: [PathBuf; 2],
    config: RunConfig,
}

fn shared() -> &'static Shared {
    static S: OnceLock<Shared> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = write_telemetry_fixture(&dir.path().join("data"), 3).unwrap();
        let config = RunConfig {
            inputs: data.iter().map(|p| p.display().to_string()).collect(),
            sample_n: Some(2000),
            seed: 3,
            lime_samples: 64,
            explain_n: 4,
            attention_samples: 1,
            out: dir.path().join("run"),
            ..Default::default()
        };
        run_all(&config).unwrap();
        Shared {
            _dir: dir,
            data,
            config,
        }
    })
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&read(path)).unwrap()
}

fn report(name: &str) -> PathBuf {
    shared().config.out.join(REPORT_DIR).join(name)
}

const NON_NUMERIC_ATTRS: [&str; 9] = [
    "class", "id", "data-token", "fill", "stroke", "font-family", "text-anchor", "vector-effect", "xmlns",
];

/// Numbers appearing in geometry attributes and in purely numeric labels.
fn svg_numbers(svg: &str) -> Vec<f64> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    let mut out = Vec::new();
    for node in doc.descendants() {
        if node.is_element() {
            for a in node.attributes().filter(|a| !NON_NUMERIC_ATTRS.contains(&a.name())) {
                out.extend(
                    a.value()
                        .split(|c: char| c == ' ' || c == ',' || c == '(' || c == ')')
                        .filter_map(|t| t.parse::<f64>().ok()),
                );
            }
        }
        if node.is_text() {
            if let Ok(x) = node.text().unwrap_or("").trim().parse::<f64>() {
                out.push(x);
            }
        }
    }
    out
}

fn plot_numbers(plot: &Value) -> Vec<f64> {
    plot["numbers"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

#[test]
fn every_svg_number_is_listed_in_its_plot_json() {
    for stem in ["roc", "importance_lime", "importance_occlusion", "attention"] {
        let svg = read(&report(&format!("{stem}.svg")));
        let listed = plot_numbers(&json(&report(&format!("{stem}_plot.json"))));
        let missing: Vec<f64> = svg_numbers(&svg).into_iter().filter(|x| !listed.contains(x)).collect();
        assert!(missing.is_empty(), "{stem}: {missing:?} not in plot json");
    }
}

#[test]
fn roc_polyline_matches_roc_csv() {
    let svg = read(&report("roc.svg"));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let line = doc.descendants().find(|n| n.attribute("id") == Some("roc")).unwrap();
    let drawn: Vec<(f64, f64)> = line
        .attribute("points")
        .unwrap()
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let csv = read(&shared().config.out.join("roc.csv"));
    let table: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(drawn, table);
    assert_eq!(drawn.first(), Some(&(0.0, 0.0)));
    assert_eq!(drawn.last(), Some(&(1.0, 1.0)));
    assert!(drawn.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn attention_heatmap_has_one_cell_per_pair() {
    let plot = json(&report("attention_plot.json"));
    let l = plot["data"]["tokens"].as_array().unwrap().len();
    let svg = read(&report("attention.svg"));
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let cells = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).count();
    assert!(l > 1);
    assert_eq!(cells, l * l);
}

#[test]
fn exported_attention_rows_sum_to_one() {
    let dir = shared().config.out.join("attention");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let (tokens, rows) = read_attention_csv(&e.unwrap().path()).unwrap();
        assert_eq!(rows.len(), tokens.len());
        for r in &rows {
            assert_eq!(r.len(), tokens.len());
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        n += 1;
    }
    let c = &shared().config;
    assert_eq!(n, c.attention_samples * c.n_layers * c.n_heads);
}

#[test]
fn importance_bars_follow_sign() {
    for m in ["lime", "occlusion"] {
        let svg = read(&report(&format!("importance_{m}.svg")));
        let plot = json(&report(&format!("importance_{m}_plot.json")));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let rects: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class").is_some_and(|c| c.starts_with("bar")))
            .collect();
        let bars = plot["data"].as_array().unwrap();
        assert_eq!(rects.len(), bars.len());
        for (r, b) in rects.iter().zip(bars) {
            let w = b["weight"].as_f64().unwrap();
            assert_eq!(r.attribute("data-token"), b["token"].as_str());
            let want = if w >= 0.0 { "bar positive" } else { "bar negative" };
            assert_eq!(r.attribute("class"), Some(want));
        }
    }
}

fn bar_geometry(svg: &str) -> Vec<(String, f64, f64)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.attribute("class").is_some_and(|c| c.starts_with("bar")))
        .map(|n| {
            let f = |a: &str| n.attribute(a).unwrap().parse::<f64>().unwrap();
            (n.attribute("class").unwrap().to_string(), f("x"), f("width"))
        })
        .collect()
}

proptest! {
    #[test]
    fn bars_extend_from_zero_in_the_sign_direction(weights in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let features: Vec<(String, f64)> = weights.iter().enumerate().map(|(i, &w)| (format!("t_bin_{i}"), w)).collect();
        let (svg, plot) = importance_svg("t", &features, "x.json");
        for ((class, x, width), w) in bar_geometry(&svg).into_iter().zip(&weights) {
            prop_assert_eq!(width, w.abs());
            if *w >= 0.0 {
                prop_assert_eq!(class, "bar positive");
                prop_assert_eq!(x, 0.0);
            } else {
                prop_assert_eq!(class, "bar negative");
                prop_assert_eq!(x + width, 0.0);
            }
        }
        prop_assert!(svg_numbers(&svg).iter().all(|x| plot.numbers.contains(x)));
    }
}

#[test]
fn manifest_hashes_every_artifact() {
    let out = &shared().config.out;
    let m = load_manifest(out).unwrap().unwrap();
    let mut files = Vec::new();
    fn walk(d: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() { walk(&p, out) } else { out.push(p) }
        }
    }
    walk(out, &mut files);
    let files: Vec<PathBuf> = files.into_iter().filter(|f| !f.ends_with("manifest.json")).collect();
    assert_eq!(m.artifacts.len(), files.len());
    for f in files {
        let rel = f.strip_prefix(out).unwrap().to_string_lossy().replace('\\', "/");
        assert_eq!(m.artifacts.get(&rel), Some(&sha256_file(&f).unwrap()), "{rel}");
    }
    for stage in ["prepare", "train", "evaluate", "explain", "report"] {
        assert!(m.timings_ms.contains_key(stage), "{stage}");
    }
    assert_eq!(m.config.as_ref(), Some(&shared().config));
}

#[test]
fn summary_files_lead_with_the_sign_convention() {
    for m in ["lime", "occlusion"] {
        let text = read(&shared().config.out.join(format!("importance_summary_{m}.json")));
        assert!(text.starts_with("{\n  \"sign_convention\""), "{m}");
    }
}

#[test]
fn full_fixture_prepare_tags_sources_and_keeps_table_stats() {
    let dir = tempfile::tempdir().unwrap();
    let s = shared();
    let config = RunConfig {
        inputs: vec![
            format!("{}:{PM_SOURCE}", s.data[0].display()),
            format!("{}:{UGR_SOURCE}", s.data[1].display()),
        ],
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let summary = pipeline::cmd_prepare(&config).unwrap();
    assert_eq!(summary.n_rows, N_TOTAL);
    let mut sources = summary.sources.clone();
    sources.sort();
    assert_eq!(sources, [UGR_SOURCE, PM_SOURCE]);

    let stats = json(&dir.path().join("column_stats.json"));
    let rw = stats.as_array().unwrap().iter().find(|c| c["column"] == "rw").unwrap();
    assert_eq!(rw["count"].as_u64(), Some(N_TOTAL as u64));
    assert!((rw["mean"].as_f64().unwrap() - 97.090756).abs() < 5e-7);
    assert_eq!(rw["p50"].as_f64(), Some(73.0));
    assert_eq!(rw["max"].as_f64(), Some(7217.0));
}

#[test]
fn zero_learning_rate_leaves_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let s = shared();
    let config = RunConfig {
        inputs: s.config.inputs.clone(),
        sample_n: Some(400),
        epochs: 1,
        learning_rate: 0.0,
        out: dir.path().to_path_buf(),
        seed: 8,
        ..Default::default()
    };
    pipeline::cmd_prepare(&config).unwrap();
    pipeline::cmd_train(&config).unwrap();
    let run = pipeline::load_run(dir.path()).unwrap();
    let fresh = Classifier::new(config.model_config(), run.vocab.len()).unwrap();
    assert_eq!(run.model.params, fresh.params);
}

fn rxai(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rxai")).args(args).output().unwrap()
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = rxai(&["--config", bad.to_str().unwrap(), "show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = rxai(&["--lime-samples", "1", "show-config"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("absent.csv");
    let run_dir = dir.path().join("run");
    let out = rxai(&["--input", missing.to_str().unwrap(), "--out", run_dir.to_str().unwrap(), "prepare"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));

    let empty = dir.path().join("empty");
    let out = rxai(&["--out", empty.to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn show_config_round_trips() {
    let out = rxai(&["--seed", "42", "--epochs", "2", "show-config"]);
    assert!(out.status.success());
    let c = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!((c.seed, c.epochs), (42, 2));
}
