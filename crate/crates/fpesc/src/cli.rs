//! Command-line surface.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use fpesc_core::eval::{evaluate, recover_log_density, EvalGrid};
use fpesc_core::fields::MlpField;
use fpesc_core::training::{train, LogRow, TrainObserver};
use log::info;

use crate::config::Config;
use crate::exec::Parallel;
use crate::formats::{load_checkpoint, read_log, save_checkpoint, LogWriter, ReportJson};
use crate::gradcheck;
use crate::plot;

/// Exit code for runtime failures.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 2;

/// Smallest grid increment accepted without `--full`.
const CI_MIN_H: f64 = 0.2;

#[derive(Debug, Parser)]
#[command(name = "fpesc", version, about = "Self-consistent velocity fields for Fokker-Planck flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its log and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint against the analytic solution.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid increment (default from the config, 0.4).
        #[arg(long)]
        grid_h: Option<f64>,
        /// Allow the full 0.1 grid (about 4.4e5 backward solves).
        #[arg(long)]
        full: bool,
        /// Training log for the objective panel.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Print the analytic Gaussian at time t.
    Oracle {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the recovered log-density at (t, x).
    Recover {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check adjoint gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

struct Observer {
    start: Instant,
    log: LogWriter,
    out_dir: PathBuf,
}

impl TrainObserver for Observer {
    fn elapsed_ms(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    fn on_log(&mut self, row: &LogRow) {
        info!(
            "step {} loss {:.6e} se {:.3e} |grad| {:.3e} {:.0} ms",
            row.step, row.loss_mean, row.loss_se, row.grad_norm, row.ms
        );
        if let Err(e) = self.log.push(row) {
            log::error!("writing training log: {e:#}");
        }
    }

    fn on_checkpoint(&mut self, step: usize, field: &MlpField, is_final: bool) -> Result<(), String> {
        let name = if is_final {
            "checkpoint_final.json".to_owned()
        } else {
            format!("checkpoint_{step:06}.json")
        };
        let path = self.out_dir.join(name);
        save_checkpoint(field, &path).map_err(|e| format!("{e:#}"))?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn run_train(config: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    let tc = cfg.train_config()?;
    let init = cfg.initial()?;
    let pot = cfg.potential()?;
    let field = cfg.init_field()?;
    let out_dir = &cfg.train.out_dir;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let exec = Parallel::from_env()?;
    info!("training {} parameters on {} threads", field.n_params(), exec.threads());
    let mut obs = Observer {
        start: Instant::now(),
        log: LogWriter::create(&out_dir.join("train_log.csv"))?,
        out_dir: out_dir.clone(),
    };
    match train(&exec, field, &pot, &init, &tc, &mut obs) {
        Ok((_, log)) => {
            let last = log.rows.last().expect("at least one logged step");
            println!("final loss {:.6e} after {} steps", last.loss_mean, tc.steps);
            Ok(())
        }
        Err(fail) => {
            let path = out_dir.join("checkpoint_last_good.json");
            save_checkpoint(&fail.last_good, &path)?;
            bail!("training aborted: {} (last good parameters in {})", fail.error, path.display())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    checkpoint: &Path,
    config: Option<&Path>,
    grid_h: Option<f64>,
    full: bool,
    log_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let field = load_checkpoint(checkpoint)?;
    let cfg = load_config(config)?;
    let h = match (grid_h, full) {
        (Some(h), _) => h,
        (None, true) => 0.1,
        (None, false) => cfg.eval.grid_h,
    };
    if h < CI_MIN_H && !full {
        return Err(UsageError(format!("--grid-h {h} below {CI_MIN_H} needs --full")).into());
    }
    let path = cfg.path()?;
    let pot = cfg.potential()?;
    let init = cfg.initial()?;
    let grid = EvalGrid::new(h)?;
    let exec = Parallel::from_env()?;
    let rep = evaluate(&exec, &field, &path, &pot, &init, &grid, cfg.eval.dt)?;
    let json = ReportJson::new(&checkpoint.display().to_string(), &rep);
    json.save(out)?;
    json.save_csv(&out.with_extension("csv"))?;
    let objective = match log_path {
        Some(p) => read_log(p)?
            .iter()
            .map(|r| (r.step as f64, r.loss_mean))
            .collect(),
        None => Vec::new(),
    };
    let svg = plot::render(&[
        plot::Series {
            title: "Objective Value",
            x_label: "step",
            points: objective,
            log_y: true,
        },
        plot::Series {
            title: "Score Estimation Error",
            x_label: "t",
            points: rep.stamps.iter().map(|s| (s.t, s.ls)).collect(),
            log_y: true,
        },
        plot::Series {
            title: "Density Estimation Error",
            x_label: "t",
            points: rep.stamps.iter().map(|s| (s.t, s.ld)).collect(),
            log_y: true,
        },
    ]);
    let svg_path = out.with_extension("svg");
    std::fs::write(&svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
    println!("ls {:.6e} ld {:.6e}", rep.ls, rep.ld);
    for s in &rep.stamps {
        println!("t {:.1} ls {:.6e} ld {:.6e} mass {:.6}", s.t, s.ls, s.ld, s.mass);
    }
    Ok(())
}

fn run_oracle(t: f64, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let path = cfg.path()?;
    let k = path.stamp(t)?;
    let sigma = path.sigma_at(k);
    let d = path.dim();
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| sigma[(i, j)]).collect()).collect();
    let out = serde_json::json!({ "t": t, "mu": path.mu_at(k), "sigma": rows });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_recover(checkpoint: &Path, t: f64, x: &[f64], config: Option<&Path>) -> Result<()> {
    let field = load_checkpoint(checkpoint)?;
    let cfg = load_config(config)?;
    let init = cfg.initial()?;
    let domain = cfg.domain()?;
    ensure!(
        x.len() == domain.dim(),
        UsageError(format!("--x needs {} coordinates, got {}", domain.dim(), x.len()))
    );
    let l = recover_log_density(&field, &init, &domain, t, x, cfg.eval.dt)?;
    println!("{l}");
    Ok(())
}

/// Returns whether every case passed.
fn run_gradcheck(seed: u64, config: Option<&Path>) -> Result<bool> {
    const TOL: f64 = 1e-4;
    let cfg = load_config(config)?;
    let init = cfg.initial()?;
    let pot = cfg.potential()?;
    let exec = Parallel::from_env()?;
    let cases = gradcheck::suite(&exec, &pot, &init, seed, 5)?;
    let mut ok = true;
    for c in &cases {
        let pass = c.best() < TOL;
        ok &= pass;
        let errs: Vec<String> = c.errors.iter().map(|e| format!("{e:.2e}")).collect();
        println!(
            "{} field {} ({} params): relative error {:.3e} (sweep {})",
            if pass { "PASS" } else { "FAIL" },
            c.index,
            c.n_params,
            c.best(),
            errs.join(" ")
        );
    }
    println!("{}", if ok { "gradcheck passed" } else { "gradcheck FAILED" });
    Ok(ok)
}

/// A command line that parsed but does not make sense.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Run a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Train { config } => run_train(&config).map(|_| true),
        Command::Eval {
            checkpoint,
            config,
            grid_h,
            full,
            log,
            out,
        } => run_eval(&checkpoint, config.as_deref(), grid_h, full, log.as_deref(), &out).map(|_| true),
        Command::Oracle { t, config } => run_oracle(t, config.as_deref()).map(|_| true),
        Command::Recover {
            checkpoint,
            t,
            x,
            config,
        } => run_recover(&checkpoint, t, &x, config.as_deref()).map(|_| true),
        Command::Gradcheck { seed, config } => run_gradcheck(seed, config.as_deref()),
    };
    match res {
        Ok(true) => 0,
        Ok(false) => EXIT_FAILURE,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
