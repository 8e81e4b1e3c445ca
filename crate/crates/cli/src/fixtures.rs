//! Seeded synthetic inputs: a two-source telemetry table with the marginal
//! shape of the published column statistics, and a planted-rule token set.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rxai_core::ingest::{read_csv, Dataset};
use rxai_core::nttp::PreparedExample;

use crate::error::{CliError, Result};

pub const PM_SOURCE: &str = "process_memory";
pub const UGR_SOURCE: &str = "network_traffic";
pub const N_PM: usize = 10_000;
pub const N_UGR: usize = 10_186;
pub const N_TOTAL: usize = N_PM + N_UGR;

/// Rows strictly below / above the median, counted over the merged table.
const N_BELOW: usize = 4441;
const N_ABOVE: usize = 3633;
const N_AT_MIN: usize = 150;
const N_AT_P01: usize = 250;

/// Target marginal of one column over the merged, imputed table.
#[derive(Clone, Copy, Debug)]
pub struct ColumnShape {
    pub name: &'static str,
    pub min: f64,
    pub p01: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
    pub n_below: usize,
    pub n_above: usize,
}

const fn shape(name: &'static str, min: f64, p01: f64, median: f64, max: f64, mean: f64) -> ColumnShape {
    ColumnShape {
        name,
        min,
        p01,
        median,
        max,
        mean,
        n_below: N_BELOW,
        n_above: N_ABOVE,
    }
}

pub const PM_COLUMNS: [ColumnShape; 6] = [
    shape("r", 0.0, 3.0, 71.0, 512.0, 85.836719),
    shape("rw", 1.0, 4.0, 73.0, 7217.0, 97.090756),
    shape("rx", 0.0, 1.0, 28.0, 169.0, 32.888338),
    shape("rwc", 0.0, 0.0, 27.0, 142.0, 30.025612),
    shape("rxw", 0.0, 0.0, 5.0, 263.0, 10.207371),
    ColumnShape {
        n_below: 0,
        n_above: 120,
        ..shape("rxwc", 0.0, 0.0, 0.0, 37.0, 0.086694)
    },
];

pub const UGR_COLUMNS: [ColumnShape; 4] = [
    shape("usd", 1.0, 1.0, 3044.5, 126379.0, 8750.124839),
    shape("btc", 1.0, 2.0, 13.0, 1864.0, 22.187457),
    shape("netflow_bytes", 1.0, 23.0, 1038.5, 12360.0, 1531.850045),
    ColumnShape {
        n_below: 0,
        ..shape("clusters", 1.0, 1.0, 1.0, 12.0, 1.696968)
    },
];

/// Values of `col` for the `n_rows` rows of its own source. The other
/// source's rows are missing and get the median on imputation, which the
/// target sum accounts for.
fn column_values(col: &ColumnShape, n_rows: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n_at = n_rows - col.n_below - col.n_above;
    let n_imputed = N_TOTAL - n_rows;
    let below_hi = col.median.ceil() as i64 - 1;
    let mut below: Vec<i64> = Vec::with_capacity(col.n_below);
    for i in 0..col.n_below {
        below.push(if i < N_AT_MIN {
            col.min as i64
        } else if i < N_AT_MIN + N_AT_P01 {
            col.p01 as i64
        } else {
            rng.random_range(col.p01 as i64..=below_hi)
        });
    }

    let lo = col.median.floor() as i64 + 1;
    let hi = col.max as i64;
    let target = (col.mean * N_TOTAL as f64).round()
        - below.iter().sum::<i64>() as f64
        - col.median * (n_at + n_imputed) as f64;
    let target = target.round() as i64;
    // power law lo + (hi - lo) u^k with mean close to the target
    let want_mean = target as f64 / col.n_above as f64;
    let k = ((hi - lo) as f64 / (want_mean - lo as f64) - 1.0).max(0.0);
    let mut above: Vec<i64> = (0..col.n_above)
        .map(|_| {
            let u: f64 = rng.random();
            (lo as f64 + (hi - lo) as f64 * u.powf(k)).round() as i64
        })
        .map(|v| v.clamp(lo, hi))
        .collect();
    if let Some(first) = above.first_mut() {
        *first = hi;
    }
    let mut diff = target - above.iter().sum::<i64>();
    let n_free = above.len().saturating_sub(1) as i64;
    for _ in 0..10_000 {
        if diff == 0 || n_free == 0 {
            break;
        }
        let per = if diff.abs() >= n_free { diff / n_free } else { diff.signum() };
        for v in above.iter_mut().skip(1) {
            if diff == 0 {
                break;
            }
            let step = if per.abs() > diff.abs() { diff } else { per };
            let new = (*v + step).clamp(lo, hi);
            diff -= new - *v;
            *v = new;
        }
    }

    let mut values: Vec<f64> = below.into_iter().map(|v| v as f64).collect();
    values.extend(std::iter::repeat_n(col.median, n_at));
    values.extend(above.into_iter().map(|v| v as f64));
    values.shuffle(rng);
    values
}

fn fmt_value(x: f64) -> String {
    format!("{x}")
}

fn write_table(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// Both source tables as CSV bytes: process memory first, then network
/// traffic. Process-memory row 0 lies above the median on r, rw, rx, rwc and
/// at the median on rxw.
pub fn telemetry_csvs(seed: u64) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pm: Vec<Vec<f64>> = PM_COLUMNS.iter().map(|c| column_values(c, N_PM, &mut rng)).collect();
    for (j, col) in PM_COLUMNS.iter().enumerate().take(5) {
        let want = |x: f64| if col.name == "rxw" { x == col.median } else { x > col.median };
        let k = pm[j].iter().position(|&x| want(x)).expect("column has values on both sides");
        pm[j].swap(0, k);
    }
    let pm_rows: Vec<Vec<String>> = (0..N_PM)
        .map(|i| {
            let high = pm[1][i] > 73.0 || pm[2][i] > 28.0;
            let p = if high { 0.7 } else { 0.3 };
            let mut row: Vec<String> = pm.iter().map(|c| fmt_value(c[i])).collect();
            row.push(if rng.random_bool(p) { "Ransomware" } else { "Benign" }.into());
            row
        })
        .collect();
    let mut pm_header: Vec<&str> = PM_COLUMNS.iter().map(|c| c.name).collect();
    pm_header.push("label");

    let ugr: Vec<Vec<f64>> = UGR_COLUMNS.iter().map(|c| column_values(c, N_UGR, &mut rng)).collect();
    const PROTOCOLS: [&str; 3] = ["TCP", "UDP", "ICMP"];
    let ugr_rows: Vec<Vec<String>> = (0..N_UGR)
        .map(|i| {
            let high = ugr[1][i] > 13.0;
            let p = if high { 0.75 } else { 0.3 };
            let mut row: Vec<String> = ugr.iter().map(|c| fmt_value(c[i])).collect();
            row.push(PROTOCOLS[rng.random_range(0..3)].into());
            row.push(if rng.random_bool(p) { "Ransomware" } else { "Benign" }.into());
            row
        })
        .collect();
    let mut ugr_header: Vec<&str> = UGR_COLUMNS.iter().map(|c| c.name).collect();
    ugr_header.extend(["protocol", "prediction"]);

    Ok((write_table(&pm_header, &pm_rows)?, write_table(&ugr_header, &ugr_rows)?))
}

/// The two tables parsed, labels unified and source-tagged.
pub fn telemetry_datasets(seed: u64) -> Result<(Dataset, Dataset)> {
    let (pm, ugr) = telemetry_csvs(seed)?;
    Ok((
        read_csv(pm.as_slice(), None, PM_SOURCE)?,
        read_csv(ugr.as_slice(), None, UGR_SOURCE)?,
    ))
}

/// Writes `process_memory.csv` and `network_traffic.csv` into `dir`.
pub fn write_telemetry_fixture(dir: &Path, seed: u64) -> Result<[PathBuf; 2]> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (pm, ugr) = telemetry_csvs(seed)?;
    let pm_path = dir.join(format!("{PM_SOURCE}.csv"));
    let ugr_path = dir.join(format!("{UGR_SOURCE}.csv"));
    std::fs::write(&pm_path, pm).map_err(|e| CliError::io(&pm_path, e))?;
    std::fs::write(&ugr_path, ugr).map_err(|e| CliError::io(&ugr_path, e))?;
    Ok([pm_path, ugr_path])
}

pub const RULE_COLUMNS: [&str; 10] = [
    "port",
    "netflow_bytes",
    "btc",
    "usd",
    "clusters",
    "time",
    "r",
    "rw",
    "rx",
    "rwc",
];
pub const RULE_TOKEN: &str = "port_bin_1";
pub const RULE_NOISE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct PlantedRule {
    pub train: Vec<PreparedExample>,
    pub validation: Vec<PreparedExample>,
    /// Clean labels.
    pub test: Vec<PreparedExample>,
    /// Positives only, clean labels.
    pub explain: Vec<PreparedExample>,
}

fn rule_row(rng: &mut ChaCha8Rng, force_positive: bool) -> PreparedExample {
    let port = if force_positive || rng.random_bool(0.5) {
        1
    } else {
        [0, 2, 3, 4][rng.random_range(0..4)]
    };
    let text = RULE_COLUMNS
        .iter()
        .map(|c| {
            let b = if *c == "port" { port } else { rng.random_range(0..5) };
            format!("{c}_bin_{b}")
        })
        .collect::<Vec<_>>()
        .join(" ");
    PreparedExample {
        text,
        label: u8::from(port == 1),
        source: "planted".into(),
    }
}

fn rule_rows(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> Vec<PreparedExample> {
    let mut rows: Vec<PreparedExample> = (0..n).map(|_| rule_row(rng, false)).collect();
    let n_flip = (noise * n as f64).round() as usize;
    for i in rand::seq::index::sample(rng, n, n_flip) {
        rows[i].label = 1 - rows[i].label;
    }
    rows
}

/// 1000/200/200 rows where `port_bin_1` decides the class. Exactly 5% of the
/// training and validation labels are flipped.
pub fn planted_rule(seed: u64) -> PlantedRule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = rule_rows(&mut rng, 1000, RULE_NOISE);
    let validation = rule_rows(&mut rng, 200, RULE_NOISE);
    let test = rule_rows(&mut rng, 200, 0.0);
    let explain = (0..100).map(|_| rule_row(&mut rng, true)).collect();
    PlantedRule {
        train,
        validation,
        test,
        explain,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pm_column_sums_hit_their_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for col in PM_COLUMNS {
            let v = column_values(&col, N_PM, &mut rng);
            let total: f64 = v.iter().sum::<f64>() + col.median * N_UGR as f64;
            assert_eq!(total, (col.mean * N_TOTAL as f64).round(), "{}", col.name);
            assert_eq!(v.iter().copied().fold(f64::MIN, f64::max), col.max);
            assert_eq!(v.iter().copied().fold(f64::MAX, f64::min), col.min);
        }
    }

    #[test]
    fn planted_rule_noise_is_exact() {
        let p = planted_rule(3);
        let flips = p
            .train
            .iter()
            .filter(|r| u8::from(r.text.contains(RULE_TOKEN)) != r.label)
            .count();
        assert_eq!(flips, 50);
        assert!(p.test.iter().all(|r| u8::from(r.text.contains(RULE_TOKEN)) == r.label));
        assert!(p.explain.iter().all(|r| r.label == 1 && r.text.starts_with(RULE_TOKEN)));
    }
}
