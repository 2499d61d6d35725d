mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sensaug::augment::{
    generate, max_policy_error, read_dataset_csv, write_dataset_csv, write_points_jsonl, RunReport,
};
use sensaug::harness::{
    self, closed_loop, imitation_loop, rollout_gnuplot, round_ms, write_trace_csv, Controller,
    Expert, HarnessError, RolloutRecord,
};
use sensaug::policy::{fit, PolicyModel};

use config::{config_error, ConfigError};

#[derive(Parser)]
#[command(
    name = "sensaug",
    version,
    about = "Sensitivity-based data augmentation for MPC policy learning"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an augmented dataset from a JSON run config.
    Generate {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a GRNN policy to a dataset CSV.
    Fit {
        dataset: PathBuf,
        model: PathBuf,
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Run dataset case 1, 2 or 3 in both augmentation modes.
    Case {
        case: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the closed loop under a fitted policy or the exact MPC.
    Rollout {
        /// Policy model JSON.
        #[arg(long, required_unless_present = "expert", conflicts_with = "expert")]
        model: Option<PathBuf>,
        /// Use the exact MPC instead of a model.
        #[arg(long)]
        expert: bool,
        /// Initial state as `omega,omegadot`.
        #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
        x0: String,
        /// Simulated duration in seconds; the config's value when absent.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Imitation learning with the exact MPC as interactive expert.
    Imitate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        rollouts: usize,
        /// Predictor-corrector samples around each expert label.
        #[arg(long, default_value_t = 25)]
        augment: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error("config", &e.to_string(), 2),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if is_config_error(&e) => report_error("config", &format!("{e:#}"), 2),
        Err(e) => report_error("runtime", &format!("{e:#}"), 1),
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<HarnessError>(),
                Some(HarnessError::Config(_))
            )
    })
}

fn report_error(kind: &str, message: &str, code: u8) -> ExitCode {
    let doc =
        json!({ "error": { "kind": kind, "message": message.trim_end(), "exit_code": code } });
    eprintln!("{doc}");
    ExitCode::from(code)
}

fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Generate { config, out } => cmd_generate(&config, out),
        Command::Fit {
            dataset,
            model,
            bandwidth,
        } => cmd_fit(&dataset, &model, bandwidth),
        Command::Case { case, config, out } => cmd_case(case, config.as_deref(), out),
        Command::Rollout {
            model,
            expert: _,
            x0,
            duration,
            config,
            out,
        } => cmd_rollout(model.as_deref(), &x0, duration, config.as_deref(), out),
        Command::Imitate {
            config,
            rollouts,
            augment,
            out,
        } => cmd_imitate(config.as_deref(), rollouts, augment, out),
    }
}

/// Runs `f` on a pool of `threads` workers, or on rayon's global pool.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(f)),
        None => Ok(f()),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(fs::File::create(&path).with_context(
        || format!("cannot create {}", path.display()),
    )?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn cmd_generate(path: &Path, out: Option<PathBuf>) -> Result<serde_json::Value> {
    let cfg = config::load_run(path)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let nlp = cfg.problem.build();
    let pbox = cfg.pbox();
    let (ds, probe) = with_threads(cfg.threads, || -> Result<_> {
        let ds = generate(&nlp, &pbox, &cfg.augment, &cfg.solver)?;
        let probe = match cfg.probes {
            0 => None,
            n => Some(max_policy_error(&ds, &nlp, &cfg.solver, n, cfg.probe_seed)?),
        };
        Ok((ds, probe))
    })??;

    prepare_dir(&dir)?;
    write_dataset_csv(&ds, create(&dir, "dataset.csv")?)?;
    if cfg.augment.keep_points {
        write_points_jsonl(&ds, create(&dir, "points.jsonl")?)?;
    }
    let report = RunReport::new(
        &ds,
        &cfg.augment,
        &cfg.solver,
        probe.as_ref().map(|p| p.max_error),
    );
    let mut doc = serde_json::to_value(&report)?;
    if let Some(p) = &probe {
        doc["probe_count"] = json!(p.probes);
        doc["probes_skipped"] = json!(p.skipped);
        doc["t_probe_resolve_s"] = json!(round_ms(p.t_resolve_s));
    }
    doc["problem"] = serde_json::to_value(&cfg.problem)?;
    doc["pbox"] = serde_json::to_value(&pbox)?;
    doc["probe_seed"] = json!(cfg.probe_seed);
    write_json(&dir, "report.json", &doc)?;
    if let Some(settings) = &cfg.policy {
        let model = fit(&ds, settings.bandwidth)?;
        fs::write(dir.join("model.json"), model.to_json()? + "\n")?;
    }
    log::info!("wrote {} samples to {}", ds.samples.len(), dir.display());
    Ok(json!({
        "command": "generate",
        "output_dir": dir,
        "n_anchors": report.n_anchors,
        "n_augmented": report.n_augmented,
        "n_discarded": report.n_discarded,
    }))
}

fn cmd_fit(dataset: &Path, model_path: &Path, bandwidth: Option<f64>) -> Result<serde_json::Value> {
    if let Some(b) = bandwidth {
        if !(b > 0.0 && b.is_finite()) {
            return Err(config_error("bandwidth: must be positive"));
        }
    }
    let file =
        fs::File::open(dataset).with_context(|| format!("cannot open {}", dataset.display()))?;
    let ds = read_dataset_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", dataset.display()))?;
    let model = fit(&ds, bandwidth)?;
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    fs::write(model_path, model.to_json()? + "\n")
        .with_context(|| format!("cannot write {}", model_path.display()))?;
    Ok(json!({
        "command": "fit",
        "model": model_path,
        "centers": model.centers.len(),
        "bandwidth": model.bandwidth,
    }))
}

fn cmd_case(case: u8, config: Option<&Path>, out: Option<PathBuf>) -> Result<serde_json::Value> {
    let (cfg, file) = config::load_case(case, config)?;
    let dir = out
        .or(file.output_dir)
        .unwrap_or_else(|| PathBuf::from("out"));
    prepare_dir(&dir)?;
    let output = with_threads(file.threads, || harness::run_case(case, &cfg, Some(&dir)))??;
    let r = &output.report;
    Ok(json!({
        "command": "case",
        "case": case,
        "output_dir": dir,
        "error_ratio": r.error_ratio,
        "t_exact_resolve_s": r.t_exact_resolve_s,
        "t_augment_s": r.t_augment_s,
        "partial": r.partial,
    }))
}

fn parse_state(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(config_error(format!(
            "x0: expected `omega,omegadot`, got {s:?}"
        )));
    }
    let mut x = [0.0; 2];
    for (slot, part) in x.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| config_error(format!("x0: bad number {part:?}")))?;
    }
    Ok(x)
}

fn cmd_rollout(
    model_path: Option<&Path>,
    x0: &str,
    duration: Option<f64>,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<serde_json::Value> {
    let mut file = config::load_rollout(config)?;
    let x0 = parse_state(x0)?;
    if let Some(t) = duration {
        if !(t > 0.0 && t.is_finite()) {
            return Err(config_error("duration: must be positive"));
        }
        file.rollout.duration = t;
    }
    let dir = out.unwrap_or_else(|| file.output_dir.clone());

    let model: Option<PolicyModel> = match model_path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let m = PolicyModel::from_json(&text)
                .with_context(|| format!("loading {}", p.display()))?;
            if m.n_p() != 2 {
                bail!("model expects {} parameters, the pendulum has 2", m.n_p());
            }
            Some(m)
        }
        None => None,
    };
    let expert = Expert::new(&file.rollout.pendulum, &file.mpc, file.solver.clone());
    let controller = match &model {
        Some(m) => Controller::Policy(m),
        None => Controller::Expert(&expert),
    };
    let trace = closed_loop(&controller, x0, &file.rollout)?;

    prepare_dir(&dir)?;
    let mut w = create(&dir, "trace.csv")?;
    write_trace_csv(&trace, &mut w)?;
    fs::write(
        dir.join("trace.gp"),
        rollout_gnuplot("trace.csv", file.rollout.target),
    )?;
    let summary = json!({
        "controller": if model.is_some() { "policy" } else { "expert" },
        "x0": x0,
        "reached": trace.reached(),
        "reached_at": trace.reached_at,
        "timed_out": trace.timed_out,
        "aborted": trace.aborted,
        "steps": trace.points.len(),
        "config": file.rollout,
    });
    write_json(&dir, "rollout.json", &summary)?;
    Ok(json!({
        "command": "rollout",
        "output_dir": dir,
        "reached": trace.reached(),
        "reached_at": trace.reached_at,
    }))
}

fn write_table_csv(dir: &Path, table: &[RolloutRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "imitation_table.csv")?);
    for r in table {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_imitate(
    config: Option<&Path>,
    rollouts: usize,
    augment: usize,
    out: Option<PathBuf>,
) -> Result<serde_json::Value> {
    if rollouts == 0 {
        return Err(config_error("rollouts: must be at least 1"));
    }
    let file = config::load_imitate(config)?;
    let dir = out.unwrap_or_else(|| file.output_dir.clone());
    prepare_dir(&dir)?;
    let start = Instant::now();
    let res = with_threads(file.threads, || {
        imitation_loop(file.initial_policy, rollouts, augment, &file.imitation)
    })??;
    let t_total_s = round_ms(start.elapsed().as_secs_f64());

    write_table_csv(&dir, &res.table)?;
    for (r, trace) in res.table.iter().zip(&res.traces) {
        write_trace_csv(
            trace,
            create(&dir, &format!("rollout_{:02}.csv", r.rollout))?,
        )?;
    }
    if let Some(model) = &res.model {
        fs::write(dir.join("model.json"), model.to_json()? + "\n")?;
    }
    if !res.dataset.samples.is_empty() {
        write_dataset_csv(&res.dataset, create(&dir, "dataset.csv")?)?;
    }
    let report = json!({
        "rollouts": rollouts,
        "feedback_augment": augment,
        "first_success": res.first_success(),
        "table": res.table,
        "initial_policy": file.initial_policy,
        "config": file.imitation,
        "t_total_s": t_total_s,
    });
    write_json(&dir, "imitation_report.json", &report)?;
    Ok(json!({
        "command": "imitate",
        "output_dir": dir,
        "first_success": res.first_success(),
        "rollouts_run": res.table.len(),
    }))
}
