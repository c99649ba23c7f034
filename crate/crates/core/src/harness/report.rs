//! CSV and JSON report emission.
//!
//! results.csv (schema `revbench.results.v1`):
//!   dataset,k_core,mask_pct,model,config_id,seed,latent_dim,l2,
//!   dropout,val_mse,test_mse,hr_at_1,hr_eligible,hr_skipped
//! buckets.csv (schema `revbench.buckets.v1`):
//!   dataset,k_core,mask_pct,model,config_id,seed,bucket_lo,bucket_hi,
//!   item_count,interaction_count,improvement
//! trials.csv (schema `revbench.trials.v1`):
//!   dataset,k_core,mask_pct,model,seed,config_id,latent_dim,l2,
//!   dropout,val_mse,status
//!
//! The first line of each file is `# schema: <name>`; the second is the
//! column header. `report` pivots results.csv into table1.csv
//! (test MSE per model) and table2.csv (`MSE / HR@1` per model).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::TrialRecord;
use super::{ExperimentConfig, HarnessError};
use crate::eval::{Hr1Result, MetricReport};

pub const RESULTS_SCHEMA: &str = "revbench.results.v1";
pub const BUCKETS_SCHEMA: &str = "revbench.buckets.v1";
pub const TRIALS_SCHEMA: &str = "revbench.trials.v1";

pub const RESULTS_HEADER: &str = "dataset,k_core,mask_pct,model,config_id,seed,latent_dim,l2,dropout,val_mse,test_mse,hr_at_1,hr_eligible,hr_skipped";
pub const BUCKETS_HEADER: &str = "dataset,k_core,mask_pct,model,config_id,seed,bucket_lo,bucket_hi,item_count,interaction_count,improvement";
pub const TRIALS_HEADER: &str =
    "dataset,k_core,mask_pct,model,seed,config_id,latent_dim,l2,dropout,val_mse,status";

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub results: PathBuf,
    pub buckets: PathBuf,
    pub trials: PathBuf,
    pub manifest: PathBuf,
}

fn hr_columns(hr: &Option<Hr1Result>) -> (String, String, String) {
    match hr {
        None => (String::new(), String::new(), String::new()),
        Some(Hr1Result::NotApplicable { skipped }) => {
            ("na".into(), "0".into(), skipped.to_string())
        }
        Some(Hr1Result::Applicable {
            rate,
            eligible,
            skipped,
        }) => (rate.to_string(), eligible.to_string(), skipped.to_string()),
    }
}

pub fn results_csv(dataset: &str, reports: &[MetricReport]) -> String {
    let mut out = format!("# schema: {RESULTS_SCHEMA}\n{RESULTS_HEADER}\n");
    for r in reports {
        let (hr, eligible, skipped) = hr_columns(&r.hr_at_1);
        writeln!(
            out,
            "{dataset},{},{},{},{},{},{},{},{},{},{},{hr},{eligible},{skipped}",
            r.k_core,
            r.mask_pct,
            r.model,
            r.config_id,
            r.seed,
            r.latent_dim,
            r.l2,
            r.dropout,
            r.val_mse,
            r.test_mse,
        )
        .expect("string write");
    }
    out
}

pub fn buckets_csv(dataset: &str, reports: &[MetricReport]) -> String {
    let mut out = format!("# schema: {BUCKETS_SCHEMA}\n{BUCKETS_HEADER}\n");
    for r in reports {
        for b in &r.buckets {
            writeln!(
                out,
                "{dataset},{},{},{},{},{},{},{},{},{},{}",
                r.k_core,
                r.mask_pct,
                r.model,
                r.config_id,
                r.seed,
                b.lo,
                b.hi,
                b.item_count,
                b.interaction_count,
                b.improvement,
            )
            .expect("string write");
        }
    }
    out
}

pub fn trials_csv(dataset: &str, trials: &[TrialRecord]) -> String {
    let mut out = format!("# schema: {TRIALS_SCHEMA}\n{TRIALS_HEADER}\n");
    for t in trials {
        let (val, status) = match (&t.row.val_mse, &t.row.error) {
            (Some(v), _) => (v.to_string(), "ok".to_string()),
            (None, Some(e)) => (String::new(), format!("failed: {}", e.replace(',', ";"))),
            (None, None) => (String::new(), "failed".into()),
        };
        writeln!(
            out,
            "{dataset},{},{},{},{},{},{},{},{},{val},{status}",
            t.k_core,
            t.mask_pct,
            t.model,
            t.seed,
            t.row.config_id,
            t.row.config.latent_dim,
            t.row.config.l2,
            t.row.config.dropout,
        )
        .expect("string write");
    }
    out
}

/// Writes results/buckets/trials CSVs plus a JSON manifest into the
/// output directory.
pub fn write_reports(
    cfg: &ExperimentConfig,
    reports: &[MetricReport],
    trials: &[TrialRecord],
) -> Result<ReportPaths, HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::io(&cfg.out_dir, e))?;
    let dataset = cfg.dataset.display().to_string();
    let paths = ReportPaths {
        results: cfg.out_dir.join("results.csv"),
        buckets: cfg.out_dir.join("buckets.csv"),
        trials: cfg.out_dir.join("trials.csv"),
        manifest: cfg.out_dir.join("manifest.json"),
    };
    std::fs::write(&paths.results, results_csv(&dataset, reports))
        .map_err(|e| HarnessError::io(&paths.results, e))?;
    std::fs::write(&paths.buckets, buckets_csv(&dataset, reports))
        .map_err(|e| HarnessError::io(&paths.buckets, e))?;
    std::fs::write(&paths.trials, trials_csv(&dataset, trials))
        .map_err(|e| HarnessError::io(&paths.trials, e))?;

    let dataset_hashes: Vec<&str> = {
        let mut seen: Vec<&str> = reports.iter().map(|r| r.dataset_hash.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    };
    let manifest = serde_json::json!({
        "schema": "revbench.manifest.v1",
        "dataset": dataset,
        "dataset_hashes": dataset_hashes,
        "results_schema": RESULTS_SCHEMA,
        "buckets_schema": BUCKETS_SCHEMA,
        "trials_schema": TRIALS_SCHEMA,
        "k_cores": cfg.k_cores,
        "mask_pcts": cfg.mask_pcts,
        "models": cfg.models.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "seeds": cfg.seeds,
        "grid": {
            "latent_dims": cfg.latent_dims,
            "l2_weights": cfg.l2_weights,
            "dropouts": cfg.dropouts,
        },
        "sweep_retune": format!("{:?}", cfg.sweep_retune).to_lowercase(),
    });
    std::fs::write(
        &paths.manifest,
        serde_json::to_string_pretty(&manifest).expect("manifest encode"),
    )
    .map_err(|e| HarnessError::io(&paths.manifest, e))?;
    Ok(paths)
}

/// One parsed results.csv row, as consumed by `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub k_core: u32,
    pub mask_pct: f64,
    pub model: String,
    pub config_id: String,
    pub seed: u64,
    pub test_mse: f64,
    pub hr_at_1: Option<f64>,
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let body = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let bad = |reason: &str| HarnessError::BadReport {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut lines = body.lines();
    let schema = lines.next().ok_or_else(|| bad("empty file"))?;
    if schema.trim() != format!("# schema: {RESULTS_SCHEMA}") {
        return Err(bad(&format!(
            "unexpected schema line {schema:?}, want {RESULTS_SCHEMA}"
        )));
    }
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    if header != RESULTS_HEADER {
        return Err(bad("unexpected column header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 14 {
            return Err(bad(&format!("row {}: expected 14 columns", n + 3)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(&format!("row {}: {e}", n + 3)))
        };
        rows.push(ResultRow {
            dataset: cols[0].to_string(),
            k_core: cols[1]
                .parse()
                .map_err(|e| bad(&format!("row {}: {e}", n + 3)))?,
            mask_pct: parse_f(cols[2])?,
            model: cols[3].to_string(),
            config_id: cols[4].to_string(),
            seed: cols[5]
                .parse()
                .map_err(|e| bad(&format!("row {}: {e}", n + 3)))?,
            test_mse: parse_f(cols[10])?,
            hr_at_1: match cols[11] {
                "" | "na" => None,
                v => Some(parse_f(v)?),
            },
        });
    }
    Ok(rows)
}

/// Pivots results rows into the two summary tables. table1.csv holds
/// test MSE per model; table2.csv holds `MSE / HR@1` strings.
pub fn write_summary_tables(
    out_dir: &Path,
    rows: &[ResultRow],
) -> Result<(PathBuf, PathBuf), HarnessError> {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let mut groups: Vec<(String, u32, f64)> = rows
        .iter()
        .map(|r| (r.dataset.clone(), r.k_core, r.mask_pct))
        .collect();
    groups.sort_by(|a, b| a.partial_cmp(b).unwrap());
    groups.dedup();

    let cell = |dataset: &str, k: u32, mask: f64, model: &str| -> Option<&ResultRow> {
        rows.iter().find(|r| {
            r.dataset == dataset && r.k_core == k && r.mask_pct == mask && r.model == model
        })
    };

    let mut table1 = String::from("# schema: revbench.table1.v1\ndataset,k_core,mask_pct");
    let mut table2 = String::from("# schema: revbench.table2.v1\ndataset,k_core,mask_pct");
    for m in &models {
        write!(table1, ",{m}").unwrap();
        write!(table2, ",{m}").unwrap();
    }
    table1.push('\n');
    table2.push('\n');
    for (dataset, k, mask) in &groups {
        write!(table1, "{dataset},{k},{mask}").unwrap();
        write!(table2, "{dataset},{k},{mask}").unwrap();
        for m in &models {
            match cell(dataset, *k, *mask, m) {
                Some(row) => {
                    write!(table1, ",{}", row.test_mse).unwrap();
                    match row.hr_at_1 {
                        Some(hr) => write!(table2, ",{} / {}", row.test_mse, hr).unwrap(),
                        None => write!(table2, ",{} / na", row.test_mse).unwrap(),
                    }
                }
                None => {
                    table1.push(',');
                    table2.push(',');
                }
            }
        }
        table1.push('\n');
        table2.push('\n');
    }
    let p1 = out_dir.join("table1.csv");
    let p2 = out_dir.join("table2.csv");
    std::fs::write(&p1, table1).map_err(|e| HarnessError::io(&p1, e))?;
    std::fs::write(&p2, table2).map_err(|e| HarnessError::io(&p2, e))?;
    Ok((p1, p2))
}
