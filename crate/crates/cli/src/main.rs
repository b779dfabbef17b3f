mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use irpe::attention::{AbsoluteKind, Baseline};
use irpe::bucket_map::Method;
use irpe::encoding::{Mode, Targets};
use irpe::index_fn::IndexFnKind;

use commands::CliError;
use config::{ConfigError, PartialConfig, RunConfig, SizeDefaults};

fn parse<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "irpe", version, about = "Image relative position encoding toolkit")]
struct Cli {
    #[command(flatten)]
    opts: ConfigFlags,
    #[command(subcommand)]
    command: Command,
}

/// Every flag overrides the matching field of `--config`.
#[derive(Args, Debug)]
struct ConfigFlags {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse::<Method>)]
    method: Option<Method>,
    #[arg(long, global = true, value_parser = parse::<Mode>)]
    mode: Option<Mode>,
    /// Subset of `qkv`.
    #[arg(long, global = true, value_parser = parse::<Targets>)]
    targets: Option<Targets>,
    #[arg(long = "index-fn", global = true, value_parser = parse::<IndexFnKind>)]
    index_fn: Option<IndexFnKind>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<u32>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Patch grid as `HxW`.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Prepend a class token.
    #[arg(long, global = true, overrides_with = "no_cls")]
    cls: bool,
    #[arg(long = "no-cls", global = true)]
    no_cls: bool,
    #[arg(long, global = true)]
    heads: Option<usize>,
    /// Per-head dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// One table for all heads.
    #[arg(long, global = true, overrides_with = "unshared")]
    shared: bool,
    #[arg(long, global = true)]
    unshared: bool,
    #[arg(long, global = true, value_parser = parse::<AbsoluteKind>)]
    absolute: Option<AbsoluteKind>,
    /// Replace the relative encoding by a prior-work baseline.
    #[arg(long, global = true, value_parser = parse::<Baseline>)]
    baseline: Option<Baseline>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl ConfigFlags {
    fn flag(on: bool, off: bool) -> Option<bool> {
        match (on, off) {
            (true, _) => Some(true),
            (false, true) => Some(false),
            _ => None,
        }
    }

    fn partial(&self) -> PartialConfig {
        PartialConfig {
            grid: self.grid.clone(),
            cls: ConfigFlags::flag(self.cls, self.no_cls),
            method: self.method,
            mode: self.mode,
            targets: self.targets,
            index_fn: self.index_fn,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            heads: self.heads,
            dim: self.dim,
            shared: ConfigFlags::flag(self.shared, self.unshared),
            absolute: self.absolute,
            baseline: self.baseline,
            seed: self.seed,
            out: self.out.clone(),
        }
    }

    fn resolve(&self, defaults: SizeDefaults) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(CliError::from)?;
                PartialConfig::from_json(&text)?
            }
            None => PartialConfig::default(),
        };
        Ok(RunConfig::resolve(file.overlay(self.partial()), defaults)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved configuration as JSON.
    Config,
    /// Count buckets and export the bucket map seen from one reference token.
    Buckets {
        /// Reference token index; defaults to the center cell.
        #[arg(long)]
        reference: Option<usize>,
        /// Also write PPM images.
        #[arg(long)]
        ppm: bool,
    },
    /// Compare naive and gather-based contextual logits on random instances.
    Equiv {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Perturb one table entry seen by the naive path (harness self-test).
        #[arg(long)]
        inject_fault: bool,
    },
    /// Check analytic gradients against central differences.
    Gradcheck,
    /// MAC table for every target subset.
    Macs {
        #[arg(long, default_value_t = 12)]
        layers: usize,
    },
    /// Time naive vs gather-based contextual logits.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [196, 900, 3600])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        buckets: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Disable the rayon path.
        #[arg(long)]
        sequential: bool,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let defaults = match cli.command {
        Command::Gradcheck => SizeDefaults::GRADCHECK,
        _ => SizeDefaults::STANDARD,
    };
    let cfg = cli.opts.resolve(defaults)?;
    match cli.command {
        Command::Config => commands::show_config(&cfg),
        Command::Buckets { reference, ppm } => commands::buckets(&cfg, reference, ppm),
        Command::Equiv { trials, inject_fault } => {
            if trials == 0 {
                return Err(ConfigError::new("trials", "must be at least 1").into());
            }
            commands::equiv(&cfg, trials, inject_fault)
        }
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Macs { layers } => commands::macs(&cfg, layers),
        Command::Bench {
            sizes,
            buckets,
            repeats,
            sequential,
        } => commands::bench(&cfg, sizes, buckets, repeats, sequential),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
