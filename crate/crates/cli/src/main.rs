//! `revbench`: prep, train, eval, sweep, and report subcommands over
//! a flat key-value experiment config.
//!
//! Every config key doubles as a `--key value` flag; flags override
//! file values. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 training divergence.

use std::path::PathBuf;

use revbench::harness::{
    evaluate_checkpoint, parse_config, prep_point, read_results_csv, run_density_sweep,
    run_experiment, run_mask_sweep, train_and_checkpoint, write_reports, write_summary_tables,
    ExperimentConfig, HarnessError,
};

const USAGE: &str = "\
usage: revbench <prep|train|eval|sweep|report|run> [options]

options:
  --config FILE          load a key = value experiment config
  --checkpoint FILE      checkpoint to score (eval only)
  --axis density|mask    which sweep to drive (sweep only, default density)
  --KEY VALUE            override any config key (e.g. --models bias,mf
                         --latent_dims 1,4,8 --out_dir runs/x)

subcommands:
  prep     build and cache datasets, splits, vocabulary, embeddings, documents
  train    grid-search each model on one (k, mask) point; save checkpoints
  eval     re-score a checkpoint; refuses when data hashes changed
  sweep    density (k-core) or masking sweep with per-point retuning
  report   aggregate results.csv into table1.csv / table2.csv
  run      full experiment: every (k, mask) × model × seed, then reports";

enum CliError {
    Usage(String),
    Harness(HarnessError),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        // config-file problems are usage errors by the exit-code contract
        CliError::Harness(e)
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match dispatch(&args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            1
        }
        Err(CliError::Harness(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

struct Parsed {
    cfg: ExperimentConfig,
    checkpoint: Option<PathBuf>,
    axis: String,
}

fn parse_args(args: &[String]) -> Result<Parsed, CliError> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut config_path: Option<PathBuf> = None;
    let mut checkpoint = None;
    let mut axis = "density".to_string();
    let mut i = 0;
    while i < args.len() {
        let flag = &args[i];
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument {flag:?}")));
        };
        let value = args
            .get(i + 1)
            .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?
            .clone();
        match key {
            "config" => config_path = Some(PathBuf::from(&value)),
            "checkpoint" => checkpoint = Some(PathBuf::from(&value)),
            "axis" => axis = value,
            _ => overrides.push((key.to_string(), value)),
        }
        i += 2;
    }

    let mut cfg = match config_path {
        Some(path) => {
            let body = std::fs::read_to_string(&path).map_err(|e| {
                CliError::Harness(HarnessError::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            })?;
            parse_config(&body).map_err(usage_if_config)?
        }
        None => ExperimentConfig::default(),
    };
    for (key, value) in &overrides {
        cfg.apply(key, value).map_err(usage_if_config)?;
    }
    Ok(Parsed {
        cfg,
        checkpoint,
        axis,
    })
}

fn usage_if_config(e: HarnessError) -> CliError {
    match e {
        HarnessError::Config(msg) => CliError::Usage(msg),
        other => CliError::Harness(other),
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let parsed = parse_args(&args[1..])?;
    let cfg = parsed.cfg;
    match cmd.as_str() {
        "prep" => cmd_prep(&cfg),
        "train" => cmd_train(&cfg),
        "eval" => {
            let ckpt = parsed
                .checkpoint
                .ok_or_else(|| CliError::Usage("eval needs --checkpoint FILE".into()))?;
            cmd_eval(&cfg, &ckpt)
        }
        "sweep" => cmd_sweep(&cfg, &parsed.axis),
        "report" => cmd_report(&cfg),
        "run" => cmd_run(&cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn cmd_prep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate().map_err(usage_if_config)?;
    for &k in &cfg.k_cores {
        for &mask in &cfg.mask_pcts {
            let p = prep_point(cfg, k, mask)?;
            println!(
                "prep k={k} mask={mask}%: reviews={} users={} items={} vocab={} caps=(L{},R{}) {} [{}]",
                p.stats.reviews,
                p.stats.users,
                p.stats.items,
                p.arts.vocab.len(),
                p.arts.caps.per_review.review_len,
                p.arts.caps.per_review.review_count,
                p.dataset_hash,
                if p.from_cache { "cache hit" } else { "built" },
            );
        }
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let manifests = train_and_checkpoint(cfg)?;
    for m in &manifests {
        let (ckpt, _) = revbench::harness::checkpoint_paths(cfg, m.model, m.seed);
        println!(
            "train {} seed={}: config={} val_mse={:.6} test_mse={:.6} -> {}",
            m.model,
            m.seed,
            m.config.config_id(),
            m.val_mse,
            m.test_mse,
            ckpt.display(),
        );
    }
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &std::path::Path) -> Result<(), CliError> {
    let report = evaluate_checkpoint(cfg, checkpoint)?;
    let hr = report
        .hr_at_1
        .and_then(|h| h.rate())
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "na".into());
    println!(
        "eval {} config={} k={} mask={}%: test_mse={:.6} hr@1={hr}",
        report.model, report.config_id, report.k_core, report.mask_pct, report.test_mse,
    );
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, axis: &str) -> Result<(), CliError> {
    let reports = match axis {
        "density" => {
            let points = run_density_sweep(cfg)?;
            for p in &points {
                println!(
                    "sweep k={}: reviews={} users={} items={}",
                    p.k, p.stats.reviews, p.stats.users, p.stats.items
                );
            }
            points
                .into_iter()
                .flat_map(|p| p.reports)
                .collect::<Vec<_>>()
        }
        "mask" => {
            let points = run_mask_sweep(cfg)?;
            for p in &points {
                println!("sweep mask={}%", p.pct);
            }
            points
                .into_iter()
                .flat_map(|p| p.reports)
                .collect::<Vec<_>>()
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep axis {other:?}, expected density or mask"
            )))
        }
    };
    let paths = write_reports(cfg, &reports, &[])?;
    println!("wrote {}", paths.results.display());
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let results = cfg.out_dir.join("results.csv");
    let rows = read_results_csv(&results)?;
    let (t1, t2) = write_summary_tables(&cfg.out_dir, &rows)?;
    println!("wrote {} and {}", t1.display(), t2.display());
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = run_experiment(cfg)?;
    for r in &out.reports {
        let hr = r
            .hr_at_1
            .and_then(|h| h.rate())
            .map(|x| format!("{x:.4}"))
            .unwrap_or_else(|| "na".into());
        println!(
            "run k={} mask={}% {} {}: val_mse={:.6} test_mse={:.6} hr@1={hr}",
            r.k_core, r.mask_pct, r.model, r.config_id, r.val_mse, r.test_mse,
        );
    }
    if let Some(paths) = &out.paths {
        println!("wrote {}", paths.results.display());
    }
    Ok(())
}
