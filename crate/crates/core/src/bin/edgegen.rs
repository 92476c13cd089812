//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for argument/usage errors, 2 for runtime
//! failures (bad files, invalid configs, aborted runs).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use edgegen::catalog::{self, GeneratorConfig};
use edgegen::harness::eval::AgentSummary;
use edgegen::harness::{
    evaluate, replay, train, EvalReport, HarnessConfig, SEED_ENV_VAR,
};
use edgegen::Error;

#[derive(Parser)]
#[command(
    name = "edgegen",
    version,
    about = "Search for weather conditions that break a perception-driven driving stack",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scene catalog.
    GenScenes {
        /// How many scenes (overrides the config's generator.count).
        #[arg(long)]
        count: Option<usize>,
        /// Generator seed.
        #[arg(long)]
        seed: u64,
        /// Where to write the catalog JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional config supplying generator ranges.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the adversarial weather policy.
    Train {
        /// Harness config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, curve and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Scene catalog (overrides the config's catalog_path).
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate baselines (and optionally a trained policy) on a fixed subset.
    Eval {
        /// Harness config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Scene catalog to draw the test subset from.
        #[arg(long)]
        catalog: PathBuf,
        /// Trained checkpoint; omit to evaluate only the baselines.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory for episode logs, report and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-verify an episode log produced by eval.
    Replay {
        /// Path to an episodes_<agent>.jsonl file.
        #[arg(long)]
        episode: PathBuf,
    },
    /// Re-verify and print an evaluation report.
    Report {
        /// Directory containing report.json (an eval output directory).
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Output format on stdout.
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version requests are successes; everything else is usage.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

/// Reads the optional seed override from the environment.
fn seed_from_env() -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(v) => v.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::InvalidArgument(format!(
                "{SEED_ENV_VAR} must be an unsigned 64-bit integer, got `{v}`"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidArgument(format!("{SEED_ENV_VAR}: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::GenScenes {
            count,
            seed,
            out,
            config,
        } => {
            let mut gen_cfg = match config {
                Some(path) => HarnessConfig::load(&path)?.generator,
                None => GeneratorConfig::default(),
            };
            if let Some(count) = count {
                gen_cfg.count = count;
            }
            let cat = catalog::generate(&gen_cfg, seed)?;
            catalog::save(&cat, &out)?;
            println!(
                "wrote {} scenes (seed {}) to {}",
                cat.scenes.len(),
                seed,
                out.display()
            );
            Ok(())
        }

        Cmd::Train {
            config,
            out,
            catalog: catalog_arg,
            resume,
        } => {
            let cfg = HarnessConfig::load(&config)?;
            let catalog_path = catalog_arg.or_else(|| cfg.catalog_path.clone()).ok_or_else(|| {
                Error::InvalidConfig(
                    "no catalog: pass --catalog or set catalog_path in the config".into(),
                )
            })?;
            let cat = catalog::load(&catalog_path)?;
            let seed_override = seed_from_env()?;
            let outcome = train(
                &cfg,
                &cat,
                &catalog_path,
                &out,
                resume.as_deref(),
                seed_override,
                |p| {
                    println!(
                        "update {}/{}  steps {}  reward {:.3}  lambda_c {:.3}  lambda_p {:.3}  kl {:.4}",
                        p.update,
                        p.total_updates,
                        p.steps_done,
                        p.mean_episode_reward,
                        p.mean_lambda_c,
                        p.mean_lambda_p,
                        p.stats.approx_kl
                    );
                },
            )?;
            println!(
                "training complete: {} updates, {} steps",
                outcome.updates_done, outcome.steps_done
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("curve:      {}", outcome.curve_path.display());
            println!("manifest:   {}", outcome.manifest_path.display());
            Ok(())
        }

        Cmd::Eval {
            config,
            catalog: catalog_path,
            checkpoint,
            out,
        } => {
            let cfg = HarnessConfig::load(&config)?;
            let cat = catalog::load(&catalog_path)?;
            let seed_override = seed_from_env()?;
            let outcome = evaluate(
                &cfg,
                &cat,
                &catalog_path,
                checkpoint.as_deref(),
                &out,
                seed_override,
            )?;
            for (name, s) in &outcome.report.agents {
                println!(
                    "{name}: mean violation {:.3} (collision {:.3}, proximity {:.3}), \
                     collisions {}/{}, clearance deficit {:.1}",
                    s.mean_violation,
                    s.mean_lambda_c,
                    s.mean_lambda_p,
                    s.collision_episodes,
                    s.episodes,
                    s.deficit_sum
                );
            }
            println!("report: {}", outcome.report_json_path.display());
            Ok(())
        }

        Cmd::Replay { episode } => {
            let summary = replay(&episode)?;
            println!(
                "verified {} episodes ({} rows) in {}",
                summary.episodes,
                summary.rows,
                episode.display()
            );
            Ok(())
        }

        Cmd::Report { input, format } => {
            let report_path = input.join("report.json");
            let report = EvalReport::load(&report_path)?;
            for (name, stored) in &report.agents {
                let rows: Vec<_> = report
                    .episodes
                    .iter()
                    .filter(|r| r.agent == *name)
                    .cloned()
                    .collect();
                if *stored != AgentSummary::from_rows(&rows) {
                    return Err(Error::ReplayMismatch {
                        path: report_path,
                        detail: format!("agent `{name}` aggregates do not match the episode rows"),
                    });
                }
            }
            if let Some(row) = report
                .episodes
                .iter()
                .find(|r| !report.agents.contains_key(&r.agent))
            {
                return Err(Error::ReplayMismatch {
                    path: report_path,
                    detail: format!("episode rows mention unknown agent `{}`", row.agent),
                });
            }
            match format {
                ReportFormat::Json => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&report)
                            .expect("report serialization is infallible")
                    );
                }
                ReportFormat::Csv => print!("{}", report.to_csv()),
            }
            Ok(())
        }
    }
}
