//! `maplim` — batch experiment runner for non-increasing bivariate Markov
//! chains and their scaling limits.
//!
//! Subcommands:
//!
//! * `run` — execute a built-in fixture or an inline kernel spec from a
//!   JSON config, writing `report.json`, `report.csv` and optional path
//!   dumps. Exit code 0 means every gate passed, 1 a gate failed,
//!   2 a config/schema violation, 3 a simulation error.
//! * `list-fixtures` — print the built-in fixture catalog.
//! * `validate` — check a config against the schema without running it.
//! * `psi-eval` — print a `psi(q)` table for any measure spec.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use maplim_core::fixtures::{Fixture, RunParams};
use maplim_core::measures::FiniteMeasure;

mod inline;

const EXIT_GATE_FAILED: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser)]
#[command(name = "maplim", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a config file or a named fixture.
    Run(RunArgs),
    /// Print the built-in fixture catalog.
    ListFixtures,
    /// Validate a config file against the schema without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a psi(q) table for a measure spec (JSON file or inline).
    PsiEval(PsiArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in fixture name (defaults applied); overrides the config's
    /// fixture if both are given.
    #[arg(long)]
    fixture: Option<String>,
    /// Seed override (a seed must come from here or the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `maplim-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write sample rescaled paths as CSV.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct PsiArgs {
    /// Path to a measure JSON ({"atoms": [[x, m], ...], "density": ...}).
    #[arg(long, conflicts_with = "inline")]
    measure: Option<PathBuf>,
    /// Inline measure JSON.
    #[arg(long)]
    inline: Option<String>,
    /// Largest q in the table.
    #[arg(long, default_value_t = 10.0)]
    qmax: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 21)]
    points: usize,
}

/// On-disk experiment config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<inline::InlineSpec>,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub dump_paths: bool,
    /// Relative tolerance for inline-spec mean gates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tolerance_rel: Option<f64>,
}

fn schema_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_SCHEMA)
}

fn sim_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("simulation error: {msg}");
    ExitCode::from(EXIT_SIMULATION)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::ListFixtures => {
            println!("{:<20} {:>10} {:>11}  spec", "fixture", "default n", "replicates");
            for f in Fixture::all() {
                let spec = serde_json::to_string(&f.spec_json()).expect("serializable");
                println!(
                    "{:<20} {:>10} {:>11}  {}",
                    f.name(),
                    f.default_n(),
                    f.default_replicates(),
                    spec
                );
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { config } => match load_config(&config) {
            Ok(cfg) => match resolve(cfg, &RunArgs {
                config: None,
                fixture: None,
                seed: None,
                out: None,
                jobs: None,
                dump_paths: false,
            }) {
                Ok(resolved) => {
                    println!(
                        "ok: {}",
                        serde_json::to_string_pretty(&resolved).expect("serializable")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => schema_err(e),
            },
            Err(e) => schema_err(e),
        },
        Cmd::PsiEval(args) => match psi_eval(&args) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => schema_err(e),
        },
        Cmd::Run(args) => run(args),
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    Ok(cfg)
}

fn resolve(mut cfg: ExperimentConfig, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    if let Some(f) = &args.fixture {
        cfg.fixture = Some(f.clone());
        cfg.spec = None;
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    if args.dump_paths {
        cfg.dump_paths = true;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    // Schema invariants.
    if cfg.n_grid.is_empty() {
        anyhow::bail!("n_grid must be non-empty");
    }
    if cfg.n_grid.iter().any(|&n| n < 2) {
        anyhow::bail!("n_grid entries must be >= 2");
    }
    if cfg.replicates == 0 {
        anyhow::bail!("replicates must be >= 1");
    }
    if cfg.seed.is_none() {
        anyhow::bail!("a seed is required (config field `seed` or --seed); no silent entropy");
    }
    match (&cfg.fixture, &cfg.spec) {
        (Some(name), None) => {
            if Fixture::from_name(name).is_none() {
                anyhow::bail!(
                    "unknown fixture `{name}`; see `maplim list-fixtures` for the catalog"
                );
            }
        }
        (None, Some(spec)) => spec.validate()?,
        (Some(_), Some(_)) => anyhow::bail!("give either `fixture` or `spec`, not both"),
        (None, None) => anyhow::bail!("config needs a `fixture` name or an inline `spec`"),
    }
    Ok(cfg)
}

/// Hash of the experiment identity: everything that determines the report
/// content. Output location, thread count and path dumping do not affect
/// the produced numbers and are excluded.
fn config_hash(cfg: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        fixture: &'a Option<String>,
        spec: &'a Option<inline::InlineSpec>,
        n_grid: &'a [u64],
        replicates: u64,
        seed: Option<u64>,
        mean_tolerance_rel: Option<f64>,
    }
    let canonical = serde_json::to_vec(&Identity {
        fixture: &cfg.fixture,
        spec: &cfg.spec,
        n_grid: &cfg.n_grid,
        replicates: cfg.replicates,
        seed: cfg.seed,
        mean_tolerance_rel: cfg.mean_tolerance_rel,
    })
    .expect("serializable");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match &args.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(e) => return schema_err(e),
        },
        None => match &args.fixture {
            Some(name) => match Fixture::from_name(name) {
                Some(f) => ExperimentConfig {
                    fixture: Some(name.clone()),
                    spec: None,
                    n_grid: vec![f.default_n()],
                    replicates: f.default_replicates(),
                    seed: None,
                    out_dir: None,
                    jobs: None,
                    dump_paths: false,
                    mean_tolerance_rel: None,
                },
                None => return schema_err(format!("unknown fixture `{name}`")),
            },
            None => return schema_err("either --config or --fixture is required"),
        },
    };
    let cfg = match resolve(cfg, &args) {
        Ok(c) => c,
        Err(e) => return schema_err(e),
    };

    if let Some(jobs) = cfg.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            return sim_err(format!("cannot configure thread pool: {e}"));
        }
    }

    let hash = config_hash(&cfg);
    let params = RunParams {
        n_grid: cfg.n_grid.clone(),
        replicates: cfg.replicates,
        seed: cfg.seed.expect("validated"),
        dump_paths: cfg.dump_paths,
    };

    let out = if let Some(name) = &cfg.fixture {
        let fixture = Fixture::from_name(name).expect("validated");
        fixture.run(&params)
    } else {
        inline::run_inline(
            cfg.spec.as_ref().expect("validated"),
            &params,
            cfg.mean_tolerance_rel.unwrap_or(0.05),
        )
    };
    let out = match out {
        Ok(o) => o,
        Err(e) => return sim_err(e),
    };

    let out_dir = PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "maplim-out".into()));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return sim_err(format!("cannot create {}: {e}", out_dir.display()));
    }
    let report_json = out.report.to_json(&hash);
    let report_csv = out.report.to_csv(&hash);
    if let Err(e) = std::fs::write(out_dir.join("report.json"), report_json) {
        return sim_err(e);
    }
    if let Err(e) = std::fs::write(out_dir.join("report.csv"), report_csv) {
        return sim_err(e);
    }
    if !out.path_dumps.is_empty() {
        let paths_dir = out_dir.join("paths");
        if let Err(e) = std::fs::create_dir_all(&paths_dir) {
            return sim_err(e);
        }
        for (name, csv) in &out.path_dumps {
            let body = format!("# config_hash={hash}\n{csv}");
            if let Err(e) = std::fs::write(paths_dir.join(name), body) {
                return sim_err(e);
            }
        }
    }

    let mut failed = 0usize;
    let mut skipped = 0usize;
    for row in &out.report.rows {
        match row.pass {
            Some(true) => {}
            Some(false) => failed += 1,
            None => skipped += 1,
        }
        let status = match row.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "skip",
        };
        println!(
            "[{status}] {} n={} {}: {:.6} vs {:.6} (tol {:.3e}){}",
            row.fixture,
            row.n,
            row.statistic,
            row.value,
            row.target,
            row.tolerance,
            if row.note.is_empty() {
                String::new()
            } else {
                format!(" — {}", row.note)
            }
        );
    }
    println!(
        "report written to {} ({} gates, {failed} failed, {skipped} skipped, config {hash})",
        out_dir.display(),
        out.report.rows.len()
    );
    if failed > 0 {
        ExitCode::from(EXIT_GATE_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn psi_eval(args: &PsiArgs) -> anyhow::Result<String> {
    let text = match (&args.measure, &args.inline) {
        (Some(path), None) => std::fs::read_to_string(path)?,
        (None, Some(inline)) => inline.clone(),
        _ => anyhow::bail!("give exactly one of --measure or --inline"),
    };
    let mu: FiniteMeasure = serde_json::from_str(&text)?;
    mu.validate()?;
    let psi = maplim_core::measures::laplace_exponent_from_measure(&mu)?;
    if args.points < 2 || !(args.qmax > 0.0) {
        anyhow::bail!("need points >= 2 and qmax > 0");
    }
    let mut out = String::from("q\tpsi(q)\n");
    for k in 0..args.points {
        let q = args.qmax * k as f64 / (args.points - 1) as f64;
        let v = psi.eval(q)?;
        out.push_str(&format!("{q}\t{v}\n"));
    }
    Ok(out)
}
