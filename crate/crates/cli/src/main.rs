#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use remix_core::experiment::{
    aggregate_runs, export_heatmap_data, load_config, parse_seeds, resume, run_single, run_suite, ExperimentConfig,
    ExperimentError, GroupResult, Overrides, Result, SeedStatus, Suite, SuiteReport,
};
use remix_core::weighting::Term;

#[derive(Parser)]
#[command(name = "remix", version, about = "Monotonic value factorization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over its seeds.
    Run(ConfigArgs),
    /// Run a named suite: pp-sweep, sensitivity, ablation, matrix-game, oracle-checks or heatmap.
    Suite {
        name: String,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Run the exact oracle checks.
    Oracle(ConfigArgs),
    /// Write the weight-histogram heatmap data of a seed directory as JSON.
    ExportHeatmap {
        run_dir: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a finished run group to more environment steps.
    Resume {
        run_dir: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        /// Must match the stored config apart from the step count.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mean and std across seed directories per evaluation point, as CSV.
    Aggregate {
        #[arg(required = true)]
        seed_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme name, optionally with alpha: uniform, ow(0.1), cw(0.1), remix.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    punishment: Option<f64>,
    #[arg(long)]
    wmin: Option<f64>,
    #[arg(long)]
    wmax: Option<f64>,
    /// `0,1,2` or `0..3`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    /// 10×10 grid, 8 predators and prey, 1M steps, 4 seeds.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, value_parser = ["bellman", "underestimate", "gradient"])]
    disable_term: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        let overrides = Overrides {
            scheme: self.scheme.clone(),
            punishment: self.punishment,
            w_min: self.wmin,
            w_max: self.wmax,
            seeds: self.seeds.as_deref().map(parse_seeds).transpose()?,
            steps: self.steps,
            paper_scale: self.paper_scale,
            disable_terms: self.disable_term.iter().filter_map(|t| Term::parse(t)).collect(),
            out: self.out.clone(),
        };
        overrides.apply(&mut config)?;
        config.validate()?;
        Ok(config)
    }
}

fn print_group(g: &GroupResult) {
    for s in &g.manifest.seeds {
        match &s.status {
            SeedStatus::Completed { final_return_mean } => match final_return_mean {
                Some(r) => println!("{} seed {}: final return {r:.3}", g.label, s.seed),
                None => println!("{} seed {}: completed without evaluations", g.label, s.seed),
            },
            SeedStatus::Failed { error } => println!("{} seed {}: FAILED: {error}", g.label, s.seed),
            SeedStatus::Pending => println!("{} seed {}: not run", g.label, s.seed),
        }
    }
    if let Some(r) = g.final_return {
        println!("{}: mean final return {r:.3} ({})", g.label, g.dir.display());
    }
}

fn check_group(g: &GroupResult) -> Result<()> {
    match g.manifest.failed() {
        0 => Ok(()),
        failed => Err(ExperimentError::RunsFailed {
            failed,
            total: g.manifest.seeds.len(),
        }),
    }
}

fn check_suite(r: &SuiteReport) -> Result<()> {
    for g in &r.groups {
        print_group(g);
    }
    if let Some(o) = &r.oracle {
        for c in &o.checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    println!("results in {}", r.dir.display());
    match r.failed {
        0 => Ok(()),
        failed => Err(ExperimentError::RunsFailed { failed, total: r.total }),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| ExperimentError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let g = run_single(&args.resolve()?)?;
            print_group(&g);
            check_group(&g)
        }
        Command::Suite { name, args } => check_suite(&run_suite(Suite::parse(&name)?, &args.resolve()?)?),
        Command::Oracle(args) => check_suite(&run_suite(Suite::OracleChecks, &args.resolve()?)?),
        Command::ExportHeatmap { run_dir, out } => {
            let data = export_heatmap_data(&run_dir)?;
            let text = serde_json::to_string_pretty(&data).expect("heatmap serializes") + "\n";
            write_or_print(out.as_deref(), &text)
        }
        Command::Resume { run_dir, steps, config } => {
            let supplied = config.as_deref().map(load_config).transpose()?;
            let g = resume(&run_dir, steps, supplied.as_ref())?;
            print_group(&g);
            check_group(&g)
        }
        Command::Aggregate { seed_dirs, out } => write_or_print(out.as_deref(), &aggregate_runs(&seed_dirs)?.to_csv()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
