use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ftr_scatter_cli::commands::{self, Ladder, Table};
use ftr_scatter_cli::RunConfig;

/// Scattering of perturbed Dirac edge models.
#[derive(Parser)]
#[command(name = "ftr-scatter", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring RunConfig fields; each overrides the config file.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    energy: Option<f64>,
    /// Catalogue name, "zero", or "random".
    #[arg(long, global = true)]
    perturbation: Option<String>,
    #[arg(long, global = true)]
    length: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n_x: Option<usize>,
    #[arg(long, global = true)]
    n_y: Option<usize>,
    #[arg(long, global = true)]
    n_chan: Option<usize>,
    #[arg(long, global = true)]
    leaf_max_length: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate E(ξ) for every branch.
    Branches {
        #[arg(long, default_value_t = 4.0)]
        xi_max: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        /// Hermite levels per block.
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Run the invariant checks; nonzero exit status on failure.
    Verify,
    /// Self-convergence ladder against a refined single-leaf reference.
    Converge {
        #[arg(long, value_enum)]
        ladder: Ladder,
        /// Comma-separated ladder values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        #[arg(long)]
        reference_n_x: Option<usize>,
        #[arg(long)]
        reference_n_y: Option<usize>,
    },
    /// One S-matrix, written as JSON and text.
    Scatter,
    /// Transmissions against support length.
    Sweep {
        /// Comma-separated increasing lengths.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<f64>>,
    },
    /// Spectral flows, conductivity and Z2 index in an energy window.
    Index {
        /// Window as "lo,hi"; defaults to energy ± 0.2.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        window: Option<Vec<f64>>,
    },
}

impl Overrides {
    fn apply(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.model.m, self.m);
        set!(cfg.model.n, self.n);
        set!(cfg.model.p, self.p);
        set!(cfg.energy, self.energy);
        set!(cfg.perturbation.name, self.perturbation);
        set!(cfg.perturbation.length, self.length);
        set!(cfg.perturbation.seed, self.seed);
        set!(cfg.discretization.n_x, self.n_x);
        set!(cfg.discretization.n_y, self.n_y);
        set!(cfg.discretization.leaf_max_length, self.leaf_max_length);
        set!(cfg.workers, self.workers);
        set!(cfg.output.dir, self.out);
        if self.n_chan.is_some() {
            cfg.discretization.n_chan = self.n_chan;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_table(cfg: &RunConfig, name: &str, table: &Table) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    table.write(BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let mut cfg = cli.overrides.apply()?;
    match cli.command {
        Command::Branches { xi_max, samples, levels } => {
            let t = commands::cmd_branches(&cfg.block_model()?, xi_max, samples, levels);
            println!("{}", write_table(&cfg, "branches.csv", &t)?.display());
        }
        Command::Verify => {
            let report = commands::cmd_verify(&cfg)?;
            print!("{}", report.render());
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Converge { ladder, values, reference_n_x, reference_n_y } => {
            if let Some(v) = values {
                cfg.sweep.ladder = v;
            }
            if let Some(v) = reference_n_x {
                cfg.sweep.reference_n_x = v;
            }
            if let Some(v) = reference_n_y {
                cfg.sweep.reference_n_y = v;
            }
            let t = commands::cmd_converge(&cfg, ladder)?;
            let name = format!("converge_{}.csv", format!("{ladder:?}").to_lowercase());
            println!("{}", write_table(&cfg, &name, &t)?.display());
        }
        Command::Scatter => {
            let (s, dump) = commands::cmd_scatter(&cfg)?;
            let dir = cfg.output_dir();
            std::fs::create_dir_all(&dir)?;
            serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("smatrix.json"))?), &dump)?;
            std::fs::write(dir.join("smatrix.txt"), s.to_text())?;
            for (k, v) in &dump.observables {
                println!("{k} = {v}");
            }
        }
        Command::Sweep { lengths } => {
            if let Some(v) = lengths {
                cfg.sweep.lengths = v;
                cfg.validate()?;
            }
            let t = commands::cmd_sweep(&cfg)?;
            println!("{}", write_table(&cfg, "sweep.csv", &t)?.display());
        }
        Command::Index { window } => {
            let window = match window.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                Some(_) => anyhow::bail!("--window takes two values"),
                None => (cfg.energy - 0.2, cfg.energy + 0.2),
            };
            print!("{}", commands::cmd_index(&cfg.block_model()?, window, Some(cfg.energy))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
