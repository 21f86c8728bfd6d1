use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trimem::harness::checkpoint;
use trimem::harness::experiment::{run_baseline, BaselineSummary};
use trimem::harness::metrics::{to_csv, Record};
use trimem::harness::{Baseline, RunConfig};
use trimem::{Error, Result};

#[derive(Parser)]
#[command(name = "trimem", version, about = "Tri-memory continual learning benchmark")]
struct Cli {
    /// Overrides the output directory named in the config.
    #[arg(long, global = true, env = "TRIMEM_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured baseline over all seeds.
    Run { config: PathBuf },
    /// Run several baselines on the same stream and seeds.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "naive,replay-only,ewc-only,full")]
        baselines: Vec<String>,
    },
    /// Convert a metrics file to another format.
    Export {
        metrics: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarise a checkpoint file.
    Inspect { checkpoint: PathBuf },
    /// Print the default configuration.
    Defaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
}

fn load_config(path: &PathBuf, out_dir: &Option<PathBuf>) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_summary(s: &BaselineSummary) {
    println!(
        "{:<12} final_acc {:.4}  forgetting {:+.4}  metrics {}",
        s.baseline.name(),
        s.mean_final_accuracy(),
        s.mean_forgetting(),
        s.metrics_path.display()
    );
    for r in &s.seeds {
        println!(
            "  seed {:<4} final_acc {:.4}  forgetting {:+.4}",
            r.seed, r.final_accuracy, r.forgetting.mean
        );
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config, &cli.out_dir)?;
            print_summary(&run_baseline(&cfg, cfg.baseline)?);
        }
        Command::Compare { config, baselines } => {
            let cfg = load_config(&config, &cli.out_dir)?;
            let list = baselines
                .iter()
                .map(|b| b.trim().parse::<Baseline>())
                .collect::<Result<Vec<_>>>()?;
            if list.is_empty() {
                return Err(Error::Config("no baselines given".into()));
            }
            for b in list {
                print_summary(&run_baseline(&cfg, b)?);
            }
        }
        Command::Export { metrics, format, output } => {
            let text = fs::read_to_string(&metrics)?;
            let rendered = match format {
                ExportFormat::Csv => to_csv(&text)?,
            };
            match output {
                Some(p) => fs::write(p, rendered)?,
                None => print!("{rendered}"),
            }
        }
        Command::Inspect { checkpoint: path } => {
            let system = checkpoint::load(&path)?;
            let c = &system.config;
            println!("day_index      {}", system.lifecycle.day_index);
            println!("step_counter   {}", system.lifecycle.step_counter);
            println!("seed           {}", c.seed);
            println!("layer_sizes    {:?}", c.network.layer_sizes);
            println!("routing        {:?}", c.regime.routing);
            println!("experts        {}", system.pool.len());
            for (i, (e, ctx)) in system.pool.experts.iter().zip(&system.pool.contexts).enumerate() {
                let [stm, ltm, pm] = e.meta.tier_histogram();
                println!(
                    "  [{i}] {ctx:<10} active {:>6}  pruned {:>6}  stm {stm} ltm {ltm} pm {pm}  buffer {}",
                    e.meta.active_count(),
                    e.meta.pruned_count(),
                    system.buffers[i].len()
                );
            }
            println!("checksum       {:016x}", system.checksum());
        }
        Command::Defaults => print!("{}", RunConfig::default().render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                Record::new("error")
                    .int("exit_code", e.exit_code() as u64)
                    .str("message", &e.to_string())
                    .finish()
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
