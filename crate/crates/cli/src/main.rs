use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ringfem::config::{CapChoice, ConfigError, Domain, DomainSpec, ExperimentConfig, Norm, TargetSpec};
use ringfem_cli::commands::{self, CliError};

#[derive(Parser)]
#[command(name = "ringfem", version, about = "Approximation errors of mapped polynomial spaces on self-similar ring meshes")]
struct Cli {
    /// Worker threads for cell evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Best-approximation errors per ring and level, as CSV.
    Convergence(ExperimentArgs),
    /// Reproduction degree of each element, per polynomial degree.
    Kappa(ExperimentArgs),
    /// JSON dump of a characteristic ring (`ds:<n>` or `cc:<n>`).
    CharRing {
        scheme: String,
        #[arg(long, default_value_t = 17)]
        samples: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Best possible rates for Doo-Sabin and Catmull-Clark rings.
    Tables {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// JSON export of one mesh level.
    Mesh {
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 0)]
        level: u32,
        #[arg(long, default_value = "auto")]
        cap: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Flags override values from `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sb1, sb2, ds:<n>, cc:<n>, custom:<file>, tensor:sb1, tensor:sb2
    #[arg(long)]
    domain: Option<String>,
    /// Comma-separated polynomial degrees.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    /// Finest level.
    #[arg(long)]
    levels: Option<u32>,
    /// Expression in x, y, or cossin / sincos / sumsquares.
    #[arg(long)]
    target: Option<String>,
    /// l2, h1, h2 or linf.
    #[arg(long)]
    norm: Option<String>,
    /// auto, coons, scaled or excluded.
    #[arg(long)]
    cap: Option<String>,
    #[arg(long)]
    sector_only: bool,
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long)]
    linf_grid: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ExperimentArgs {
    /// Merged config and the directory relative custom paths resolve against.
    fn resolve(&self) -> Result<(ExperimentConfig, Option<PathBuf>), ConfigError> {
        let (mut cfg, base) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Io { field: "config", path: path.clone(), source })?;
                let base = path.parent().map(Path::to_path_buf);
                (ExperimentConfig::from_json(&text)?, base)
            }
            None => {
                let d = self.domain.as_deref().ok_or_else(|| ConfigError::invalid("domain", "required"))?;
                (ExperimentConfig::new(d.parse()?), None)
            }
        };
        if let Some(d) = &self.domain {
            cfg.domain = d.parse::<DomainSpec>()?;
        }
        if let Some(p) = &self.p {
            cfg.degrees = p.clone();
        }
        if let Some(l) = self.levels {
            cfg.levels = l;
        }
        if let Some(t) = &self.target {
            cfg.target = TargetSpec::Expr(t.clone());
        }
        if let Some(n) = &self.norm {
            cfg.norm = n.parse::<Norm>()?;
        }
        if let Some(c) = &self.cap {
            cfg.cap = c.parse::<CapChoice>()?;
        }
        if self.sector_only {
            cfg.sector_only = true;
        }
        if self.quad_order.is_some() {
            cfg.quad_order_override = self.quad_order;
        }
        if self.linf_grid.is_some() {
            cfg.linf_grid = self.linf_grid;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        Ok((cfg, base))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Convergence(args) => {
            let (cfg, base) = args.resolve()?;
            let exp = cfg.validate(base.as_deref())?;
            let csv = commands::convergence_csv(&exp)?;
            commands::write_output(cfg.output.as_deref(), &csv)
        }
        Command::Kappa(args) => {
            let (cfg, base) = args.resolve()?;
            let exp = cfg.validate(base.as_deref())?;
            let text = commands::kappa_text(&exp.domain, &exp.degrees);
            commands::write_output(cfg.output.as_deref(), &text)
        }
        Command::CharRing { scheme, samples, output } => {
            let json = commands::char_ring_json(&scheme, samples)?;
            commands::write_output(output.as_deref(), &(json + "\n"))
        }
        Command::Tables { output } => commands::write_output(output.as_deref(), &commands::tables_text()?),
        Command::Mesh { domain, level, cap, output } => {
            let domain = Domain::load(&domain.parse()?, None)?;
            let json = commands::mesh_json(&domain, level, cap.parse()?)?;
            commands::write_output(output.as_deref(), &(json + "\n"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: threads: must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
