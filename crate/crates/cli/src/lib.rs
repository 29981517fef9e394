//! Command-line pipeline: search for equivalent parameters, evaluate a grid
//! on the plane they span, bin and classify populations, reduce epsilon
//! sets for plotting.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{BinsArgs, ClassifyArgs, ReduceArgs, ReduceMethod, Space};
use crate::config::{BinMethod, RunConfig};
pub use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "paramequiv-out";

#[derive(Debug, Parser)]
#[command(
    name = "paramequiv",
    version,
    about = "Find and analyse functionally equivalent network parameters"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Missing fields take the fcn-paper defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: fcn-paper, fcn-paper-3d or lenet-paper.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "PARAMEQUIV_OUT_DIR", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replaces the configured epsilon list; repeat for several values.
    #[arg(long = "epsilon", global = true, value_name = "E")]
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run SGD from random starts and write the accepted equivalents.
    Search {
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Size of the sample set.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Span a plane through found equivalents and evaluate the loss on a grid.
    Grid {
        /// Defaults to `<out>/equivalents.csv`.
        #[arg(long, value_name = "PATH")]
        equivalents: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Extra parameter vectors to locate on the plane.
        #[arg(long, value_name = "PATH")]
        markers: Option<PathBuf>,
    },
    /// Partition a population into epsilon bins by function distance.
    Bins {
        #[arg(long, value_name = "PATH")]
        population: PathBuf,
        #[arg(long, value_enum)]
        method: Option<BinMethod>,
        /// Number of population members used as anchors.
        #[arg(long)]
        anchors: Option<usize>,
        /// Anchors read from a file instead.
        #[arg(long, value_name = "PATH")]
        anchors_file: Option<PathBuf>,
        /// Run naive and anchor binning and check they agree.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Match population members against target functions.
    Classify {
        #[arg(long, value_name = "PATH")]
        population: PathBuf,
        /// Target parameter vectors, one per row.
        #[arg(long, value_name = "PATH")]
        targets: Option<PathBuf>,
        /// Layer widths of the target networks, if they differ.
        #[arg(long, value_delimiter = ',')]
        target_widths: Option<Vec<usize>>,
        /// Target output tables, one row of sample outputs per target.
        #[arg(long, value_name = "PATH")]
        target_table: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Project an epsilon-set artifact or export it for external embedding.
    Reduce {
        #[arg(long, value_name = "PATH")]
        eset: PathBuf,
        #[arg(long, value_enum, default_value = "pca")]
        method: ReduceMethod,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, value_enum, default_value = "params")]
        space: Space,
    },
    /// Show the effective configuration, or describe an artifact.
    Info {
        #[arg(long, value_name = "PATH")]
        artifact: Option<PathBuf>,
    },
}

impl clap::ValueEnum for BinMethod {
    fn value_variants<'a>() -> &'a [Self] {
        &[BinMethod::Naive, BinMethod::Anchor]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// Builds the effective configuration from flags, before `resolve`.
pub fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut cfg = match (&g.config, &g.preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("pass either --config or --preset, not both".into())),
        (Some(path), None) => config::load(path)?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => config::preset("fcn-paper")?,
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if !g.epsilon.is_empty() {
        cfg.epsilons = g.epsilon.clone();
    }
    if let Some(out) = &g.out {
        cfg.out_dir = Some(out.clone());
    }
    match &cli.command {
        Command::Search {
            starts,
            max_steps,
            samples,
        } => {
            if let Some(s) = starts {
                cfg.search.num_starts = *s;
            }
            if let Some(s) = max_steps {
                cfg.search.max_steps = *s;
            }
            if let Some(s) = samples {
                cfg.samples.count = *s;
            }
        }
        Command::Grid {
            dim, points, samples, ..
        } => {
            if let Some(d) = dim {
                cfg.grid.dim = *d;
            }
            if let Some(n) = points {
                cfg.grid.points = *n;
            }
            if let Some(s) = samples {
                cfg.samples.count = *s;
            }
        }
        Command::Bins {
            method,
            anchors,
            samples,
            ..
        } => {
            if let Some(m) = method {
                cfg.binning.method = *m;
            }
            if let Some(a) = anchors {
                cfg.binning.anchors = *a;
            }
            if let Some(s) = samples {
                cfg.samples.count = *s;
            }
        }
        Command::Classify { samples, .. } => {
            if let Some(s) = samples {
                cfg.samples.count = *s;
            }
        }
        Command::Reduce { .. } | Command::Info { .. } => {}
    }
    Ok(cfg)
}

/// Runs a parsed command and returns its report text.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = build_config(cli)?;
    let work = || dispatch(cli, cfg);
    match cli.global.threads {
        None => work(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?
            .install(work),
    }
}

fn dispatch(cli: &Cli, cfg: RunConfig) -> Result<String, CliError> {
    if let Command::Info { artifact } = &cli.command {
        return commands::info(&cfg, artifact.as_deref());
    }
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    if let Command::Reduce {
        eset,
        method,
        dim,
        space,
    } = &cli.command
    {
        let out = if cli.global.out.is_some() || cfg.out_dir.is_some() {
            out
        } else {
            eset.parent().map(PathBuf::from).unwrap_or_default()
        };
        return commands::reduce(
            &out,
            &ReduceArgs {
                eset,
                method: *method,
                dim: *dim,
                space: *space,
            },
        );
    }
    let cfg = cfg.resolve()?;
    match &cli.command {
        Command::Search { .. } => commands::search(&cfg, &out),
        Command::Grid {
            equivalents, markers, ..
        } => commands::grid(&cfg, &out, equivalents.as_deref(), markers.as_deref()),
        Command::Bins {
            population,
            anchors_file,
            verify,
            ..
        } => commands::bins(
            &cfg,
            &out,
            &BinsArgs {
                population,
                method: cfg.binning.method,
                anchors: cfg.binning.anchors,
                anchors_file: anchors_file.as_deref(),
                verify: *verify,
            },
        ),
        Command::Classify {
            population,
            targets,
            target_widths,
            target_table,
            ..
        } => commands::classify(
            &cfg,
            &out,
            &ClassifyArgs {
                population,
                targets: targets.as_deref(),
                target_widths: target_widths.as_deref(),
                target_table: target_table.as_deref(),
            },
        ),
        Command::Reduce { .. } | Command::Info { .. } => unreachable!("handled above"),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            let _ = write!(stdout, "{report}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
