//! Per-segment metrics, aggregation and the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::denoise::Method;
use super::manifest::write_atomic;
use super::prepare::{segment_id, PairedSplit};
use crate::error::{Error, Result};
use crate::ingest::read_segments;
use crate::metrics::{evaluate, MetricsReport, DEFAULT_FEATURE_WINDOW_S};

pub const ROWS_HEADER: &str = "method,segment_id,input_snr_db,snr_imp_db,rmse,rmse_arv,rmse_mf_hz";
pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub segment_id: String,
    pub input_snr_db: f64,
    pub metrics: MetricsReport,
}

/// Mean metrics of one method, over all segments (`snr_bucket == None`) or
/// over the segments of one nominal input SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: Method,
    pub snr_bucket: Option<f64>,
    pub n: usize,
    pub snr_imp_db: f64,
    pub rmse: f64,
    pub rmse_arv: f64,
    pub rmse_mf_hz: f64,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
    pub rows_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub report_path: PathBuf,
}

impl EvalSummary {
    pub fn overall(&self, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.snr_bucket.is_none())
    }
}

/// Scores each denoised file against the split's clean segments. The
/// identity method (the noisy input itself) is always included.
pub fn cmd_evaluate(split_dir: &Path, denoised: &[(Method, PathBuf)], out_dir: &Path) -> Result<EvalSummary> {
    let split = PairedSplit::load(split_dir)?;
    let mut inputs: Vec<(Method, Vec<crate::Waveform>)> = vec![(Method::Identity, split.noisy.clone())];
    for (method, path) in denoised {
        if *method == Method::Identity {
            continue;
        }
        let segs = read_segments(path)?;
        if segs.len() != split.len() {
            return Err(Error::Contract(format!(
                "{} holds {} segments but {} holds {}",
                path.display(),
                segs.len(),
                split_dir.display(),
                split.len()
            )));
        }
        inputs.push((*method, segs));
    }
    inputs.sort_by_key(|(m, _)| *m);

    let snrs = (0..split.len()).map(|i| split.snr_db(i)).collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::new();
    for (method, segs) in &inputs {
        let part = (0..split.len())
            .into_par_iter()
            .map(|i| {
                let metrics = evaluate(&split.clean[i], &split.noisy[i], &segs[i], DEFAULT_FEATURE_WINDOW_S)?;
                Ok(ResultRow {
                    method: *method,
                    segment_id: segment_id(i),
                    input_snr_db: snrs[i],
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(part);
    }
    let aggregates = aggregate(&rows);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows_path = out_dir.join(ROWS_FILE);
    let aggregate_path = out_dir.join(AGGREGATE_FILE);
    let report_path = out_dir.join(REPORT_FILE);
    write_atomic(&rows_path, rows_csv(&rows).as_bytes())?;
    write_atomic(&aggregate_path, aggregate_csv(&aggregates).as_bytes())?;
    write_atomic(&report_path, format_report(&aggregates).as_bytes())?;
    Ok(EvalSummary {
        rows,
        aggregates,
        rows_path,
        aggregate_path,
        report_path,
    })
}

/// Means per method, then per method and nominal input SNR.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    // keyed on the bit pattern so buckets sort by method, then appear in first-seen order
    let mut groups: BTreeMap<(Method, Option<u64>), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method, None)).or_default().push(r);
        groups
            .entry((r.method, Some(r.input_snr_db.to_bits())))
            .or_default()
            .push(r);
    }
    let mut out: Vec<Aggregate> = groups
        .into_iter()
        .map(|((method, bucket), rs)| {
            let n = rs.len();
            let mean = |f: fn(&MetricsReport) -> f64| rs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n as f64;
            Aggregate {
                method,
                snr_bucket: bucket.map(f64::from_bits),
                n,
                snr_imp_db: mean(|m| m.snr_imp_db),
                rmse: mean(|m| m.rmse),
                rmse_arv: mean(|m| m.rmse_arv),
                rmse_mf_hz: mean(|m| m.rmse_mf_hz),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.method.cmp(&b.method).then_with(|| match (a.snr_bucket, b.snr_bucket) {
            (None, None) => std::cmp::Ordering::Equal,
            (None, Some(_)) => std::cmp::Ordering::Less,
            (Some(_), None) => std::cmp::Ordering::Greater,
            (Some(x), Some(y)) => x.total_cmp(&y),
        })
    });
    out
}

pub fn rows_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(ROWS_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.method, r.segment_id, r.input_snr_db, m.snr_imp_db, m.rmse, m.rmse_arv, m.rmse_mf_hz
        );
    }
    s
}

fn bucket_label(b: Option<f64>) -> String {
    b.map_or_else(|| "all".to_string(), |v| v.to_string())
}

pub fn aggregate_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from("method,input_snr_db,n,snr_imp_db,rmse,rmse_arv,rmse_mf_hz\n");
    for a in aggs {
        let _ = writeln!(
            s,
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
            a.method,
            bucket_label(a.snr_bucket),
            a.n,
            a.snr_imp_db,
            a.rmse,
            a.rmse_arv,
            a.rmse_mf_hz
        );
    }
    s
}

/// Human-readable table: overall means first, then the per-SNR breakdown.
pub fn format_report(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    let header = format!(
        "{:<9} {:>9} {:>5} {:>11} {:>11} {:>11} {:>11}\n",
        "method", "input_dB", "n", "SNRimp_dB", "RMSE", "RMSE_ARV", "RMSE_MF_Hz"
    );
    for overall in [true, false] {
        s.push_str(if overall { "overall\n" } else { "\nby input SNR\n" });
        s.push_str(&header);
        for a in aggs.iter().filter(|a| a.snr_bucket.is_none() == overall) {
            let _ = writeln!(
                s,
                "{:<9} {:>9} {:>5} {:>11.3} {:>11.3e} {:>11.3e} {:>11.3}",
                a.method.to_string(),
                bucket_label(a.snr_bucket),
                a.n,
                a.snr_imp_db,
                a.rmse,
                a.rmse_arv,
                a.rmse_mf_hz
            );
        }
    }
    s
}

/// Re-reads an aggregate file and renders the table.
pub fn cmd_report(eval_dir: &Path) -> Result<String> {
    let path = eval_dir.join(AGGREGATE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut aggs = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("{}: malformed line {}", path.display(), n + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        aggs.push(Aggregate {
            method: f[0].parse()?,
            snr_bucket: if f[1] == "all" { None } else { Some(num(f[1])?) },
            n: f[2].parse().map_err(|_| bad())?,
            snr_imp_db: num(f[3])?,
            rmse: num(f[4])?,
            rmse_arv: num(f[5])?,
            rmse_mf_hz: num(f[6])?,
        });
    }
    Ok(format_report(&aggs))
}
