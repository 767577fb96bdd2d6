use std::path::PathBuf;
use std::process::ExitCode;

use cdr_core::experiment::{
    cmd_ablate_ppp, cmd_distill, cmd_dump_features, cmd_gen_data, cmd_report, cmd_run, cmd_sweep, exit_code,
    ExperimentConfig, MetricsReport, Method, SweepParam, EXIT_EMPTY_REPORT, EXIT_PARTIAL,
};
use cdr_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Cross-domain retrieval experiments on a synthetic two-domain benchmark.
#[derive(Parser)]
#[command(name = "cdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use seeds 0..N instead of the configured list.
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured method.
    #[arg(long)]
    method: Option<Method>,
    /// Load real samples from a `gen-data` directory instead of generating.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.seeds {
            if n == 0 {
                return Err(Error::Config("--seeds must be at least 1".into()));
            }
            cfg.seeds = (0..n).collect();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the benchmark split (and translations) as JSON files.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Include the latent vectors of every sample.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Train and evaluate the configured method over all seeds.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary (overrides `sweep.parameter`).
        #[arg(long)]
        param: Option<SweepParam>,
        /// Comma-separated grid values (overrides `sweep.values`).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Compare training with and without the pseudo-positive pair loss.
    AblatePpp {
        #[command(flatten)]
        common: Common,
    },
    /// Train with the latent-distillation objective.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate every metrics.csv below a directory.
    Report {
        dir: PathBuf,
    },
    /// Write test-set features of an encoder as JSON lines.
    DumpFeatures {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint; the untrained encoder of the first seed when
        /// omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn print_run(report: &MetricsReport) -> ExitCode {
    for s in &report.seeds {
        match s.test() {
            Some(t) => {
                let cells: Vec<String> = t.ks.iter().zip(&t.mean).map(|(k, v)| format!("prec@{k}={v:.4}")).collect();
                println!("seed {}: {}", s.seed, cells.join(" "));
            }
            None => println!("seed {}: failed", s.seed),
        }
    }
    for a in &report.aggregate {
        println!("prec@{}: {:.4} ± {:.4} (n={})", a.k, a.mean.mean, a.mean.std, a.mean.n);
    }
    partial(report.failed(), report.seeds.len())
}

fn partial(failed: usize, total: usize) -> ExitCode {
    if failed > 0 {
        eprintln!("warning: {failed} of {total} failed");
        ExitCode::from(EXIT_PARTIAL as u8)
    } else {
        ExitCode::SUCCESS
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData { common, with_oracle } => {
            let cfg = common.load()?;
            cmd_gen_data(&cfg, &cfg.out, with_oracle)?;
            println!("wrote {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { common } => Ok(print_run(&cmd_run(&common.load()?)?)),
        Command::Distill { common } => Ok(print_run(&cmd_distill(&common.load()?)?)),
        Command::Sweep { common, param, values } => {
            let mut cfg = common.load()?;
            if let Some(p) = param {
                cfg.sweep.parameter = Some(p);
            }
            if let Some(v) = values {
                cfg.sweep.values = v;
            }
            let out = cmd_sweep(&cfg)?;
            for c in &out.cells {
                match &c.prec {
                    Some(p) => println!("{}={}: prec@{} {:.4} ± {:.4}", out.parameter.name(), c.value, out.k, p.mean, p.std),
                    None => println!("{}={}: failed", out.parameter.name(), c.value),
                }
            }
            match out.spearman {
                Some(r) => println!("spearman: {r:.4}"),
                None => println!("spearman: undefined"),
            }
            Ok(partial(out.failed(), out.cells.len()))
        }
        Command::AblatePpp { common } => {
            let out = cmd_ablate_ppp(&common.load()?)?;
            for p in &out.pairs {
                println!(
                    "seed {}: with {:.4} without {:.4} delta {:+.4}",
                    p.seed, p.with_ppp, p.without_ppp, p.delta
                );
            }
            println!("delta prec@{}: {:.4} ± {:.4}", out.k, out.delta.mean, out.delta.std);
            let failed = out.with_ppp.failed() + out.without_ppp.failed();
            Ok(partial(failed, out.with_ppp.seeds.len() + out.without_ppp.seeds.len()))
        }
        Command::Report { dir } => match cmd_report(&dir)? {
            Some((text, _)) => {
                print!("{text}");
                Ok(ExitCode::SUCCESS)
            }
            None => {
                eprintln!("error: no metrics.csv under {}", dir.display());
                Ok(ExitCode::from(EXIT_EMPTY_REPORT as u8))
            }
        },
        Command::DumpFeatures { common, checkpoint } => {
            let mut cfg = common.load()?;
            if common.out.is_none() {
                cfg.out = PathBuf::from("features.jsonl");
            }
            let n = cmd_dump_features(&cfg, checkpoint.as_deref(), &cfg.out)?;
            println!("wrote {n} feature rows to {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
