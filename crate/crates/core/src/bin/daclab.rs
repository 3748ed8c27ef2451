use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use daclab::experiments::{
    emit_with_metadata, run, run_expansion_fuzz, theory_reports, write_records, ExperimentConfig, FuzzConfig,
    OutputFormat, SweepResult,
};
use daclab::verify;

#[derive(Parser)]
#[command(name = "daclab", version, about = "DAC regularization vs augmented ERM laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print closed-form predictions for each cell of a regression config.
    Theory {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name when no config file is given.
        #[arg(long, default_value = "example_4_1")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a preset (or config file) with its default grid.
    Run(RunArgs),
    /// Run with grid overrides, e.g. `--grid d_aug=5,15,25 --grid alpha=1`.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Randomized check of the minority-set bound on finite spaces.
    Expansion {
        #[arg(long, default_value_t = 200)]
        fuzz: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full fuzz report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria (all, or the ones listed).
    Verify {
        #[arg(long = "criterion", short = 'c')]
        criteria: Vec<u8>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (example_4_1, example_4_2, example_6, example_C1).
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Records go to stdout when neither this nor the config names a path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Comma-separated method descriptors.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    fixed_design: Option<bool>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn out(text: &str) -> CliResult<()> {
    let mut lock = std::io::stdout().lock();
    match writeln!(lock, "{text}").and_then(|_| lock.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&PathBuf>, preset: Option<&str>) -> CliResult<ExperimentConfig> {
    match (path, preset) {
        (Some(_), Some(_)) => Err("give either a preset or --config, not both".into()),
        (Some(p), None) => Ok(ExperimentConfig::from_path(p)?),
        (None, Some(name)) => Ok(ExperimentConfig::new(name, 100, 0)),
        (None, None) => Err("a preset name or --config is required".into()),
    }
}

fn parse_grid(spec: &str) -> CliResult<(String, Vec<f64>)> {
    let (k, vs) = spec.split_once('=').ok_or_else(|| format!("grid '{spec}' is not KEY=V1,V2"))?;
    let vals = vs
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("grid '{spec}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((k.trim().to_string(), vals))
}

fn print_summary(res: &SweepResult) {
    for cell in &res.cells {
        let params: Vec<String> = cell.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!("cell {} [{}]", cell.cell, params.join(" "));
        for (m, s) in &cell.methods {
            eprintln!("  {m:<20} {:.6} ± {:.6} (n={})", s.mean, s.std_error, s.trials);
        }
    }
}

fn execute(args: RunArgs, grid: &[String]) -> CliResult<bool> {
    let mut cfg = load_config(args.config.as_ref(), args.preset.as_deref())?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods;
    }
    if args.fixed_design.is_some() {
        cfg.fixed_design = args.fixed_design;
    }
    if args.out.is_some() {
        cfg.output_path = args.out;
    }
    for g in grid {
        let (k, v) = parse_grid(g)?;
        cfg.sweep.insert(k, v);
    }
    let format = args.format.unwrap_or_else(|| match &cfg.output_path {
        Some(p) if p.extension().is_some_and(|e| e == "json") => OutputFormat::Json,
        _ => OutputFormat::Csv,
    });
    let res = run(&cfg)?;
    match &cfg.output_path {
        Some(p) => {
            let meta = emit_with_metadata(&res, &cfg, format, p)?;
            eprintln!("wrote {} records to {} ({})", res.records.len(), p.display(), meta.display());
        }
        None => {
            let mut buf = Vec::new();
            write_records(&res.records, format, &mut buf)?;
            out(String::from_utf8(buf)?.trim_end())?;
        }
    }
    print_summary(&res);
    // A non-finite risk means an estimator silently broke.
    let ok = res.records.iter().all(|r| r.excess_risk.is_finite());
    if !ok {
        eprintln!("error: non-finite excess risk in output");
    }
    Ok(ok)
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    match cli.cmd {
        Cmd::Theory { config, preset, seed } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_path(&p)?,
                None => ExperimentConfig::new(&preset, 1, 0),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let reports = theory_reports(&cfg)?;
            out(&serde_json::to_string_pretty(&reports)?)?;
            Ok(true)
        }
        Cmd::Run(args) => execute(args, &[]),
        Cmd::Sweep { run, grid } => execute(run, &grid),
        Cmd::Expansion { fuzz, seed, out: report_path } => {
            let report = run_expansion_fuzz(&FuzzConfig::new(fuzz, seed))?;
            out(&format!(
                "instances {}: constant branch {}/{} violated, multiplicative branch {}/{} violated, {} skipped",
                fuzz,
                report.constant_violations,
                report.constant_checked,
                report.multiplicative_violations,
                report.multiplicative_checked,
                report.skipped
            ))?;
            if let Some(cx) = &report.first_violation {
                out(&format!("first violation (trial {}):\n{}", cx.trial, serde_json::to_string_pretty(cx)?))?;
            }
            if let Some(p) = report_path {
                std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            Ok(report.violations() == 0)
        }
        Cmd::Verify { criteria } => {
            let ids: Vec<u8> = if criteria.is_empty() {
                verify::CRITERIA.iter().map(|(i, _)| *i).collect()
            } else {
                criteria
            };
            let mut ok = true;
            for id in ids {
                let outcome = verify::run_criterion(id).ok_or_else(|| format!("no criterion {id}"))?;
                out(&outcome.line())?;
                ok &= outcome.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
