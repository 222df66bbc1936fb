use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use latticeecho::analysis::{echo_report, predict_echo_fidelity, EchoReport};
use latticeecho::bands;
use latticeecho::check::run_checks;
use latticeecho::config::{ExperimentConfig, SweepAxis};
use latticeecho::evolve::{run_protocol, PropagatorChoice, PulseKind, RunOptions, Trajectory};
use latticeecho::lattice::{make_state, LatticeSpec};
use latticeecho::output;
use latticeecho::{EchoError, Result};

#[derive(Parser)]
#[command(name = "latticeecho", about = "Lattice Loschmidt-echo simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropagatorArg {
    Kspace,
    Realspace,
}

#[derive(Subcommand)]
enum Command {
    /// Write unfolded and folded band tables for the configured stencil.
    Bands {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the echo protocol and write trajectory, snapshots, and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        propagator: Option<PropagatorArg>,
    },
    /// Run one protocol per sweep value and write a per-value report CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        propagator: Option<PropagatorArg>,
    },
    /// Run the oracle/unitarity/formula/folding self-test suites.
    Check {
        /// Lattice size for the self-tests.
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Inject a 1e-6 fault into one Hamiltonian entry.
        #[arg(long)]
        perturb: bool,
    },
}

fn exit_for(err: &EchoError) -> u8 {
    match err {
        EchoError::Config(_) | EchoError::Parse { .. } => 2,
        _ => 3,
    }
}

/// Failures while reading the config file itself are config errors (exit 2).
fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        EchoError::Io { path, source } => {
            EchoError::Config(format!("cannot read config '{path}': {source}"))
        }
        other => other,
    })
}

fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os("LATTICEECHO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| EchoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    workers: Option<usize>,
    propagator: Option<PropagatorArg>,
) {
    if let Some(w) = workers {
        cfg.workers = w.max(1);
    }
    if let Some(p) = propagator {
        cfg.propagator = match p {
            PropagatorArg::Kspace => PropagatorChoice::Kspace,
            PropagatorArg::Realspace => PropagatorChoice::Realspace,
        };
    }
}

fn propagator_name(p: PropagatorChoice) -> &'static str {
    match p {
        PropagatorChoice::Kspace => "kspace",
        PropagatorChoice::Realspace => "realspace",
    }
}

fn cmd_bands(cfg: &ExperimentConfig, out: &PathBuf) -> Result<()> {
    let spec = &cfg.lattice;
    let n_points = 256;

    // unfolded dispersion over the full zone
    let (headers, rows): (Vec<&str>, Vec<Vec<f64>>) = match spec.dimension() {
        1 => {
            let edge = PI / spec.spacing;
            let rows = (1..=n_points)
                .map(|i| {
                    let k = -edge + 2.0 * edge * i as f64 / n_points as f64;
                    Ok(vec![k, bands::dispersion_unfolded(spec, &[k])?])
                })
                .collect::<Result<_>>()?;
            (vec!["k", "energy"], rows)
        }
        _ => {
            let mut rows = Vec::with_capacity(spec.num_sites());
            for flat in 0..spec.num_sites() {
                let k = bands::grid_momentum(spec, flat);
                rows.push(vec![k[0], k[1], bands::dispersion_unfolded(spec, &k)?]);
            }
            (vec!["k1", "k2", "energy"], rows)
        }
    };
    output::write_table(&out.join("bands_unfolded.csv"), &headers, &rows)?;

    let m_gap = cfg.schedule.as_ref().map(|s| s.strength).unwrap_or(1.0);
    for (m, file) in [(0.0, "bands_folded_gapless.csv"), (m_gap, "bands_folded_gapped.csv")] {
        let bs = bands::band_structure(spec, m, n_points)?;
        let mut headers: Vec<&str> = match spec.dimension() {
            1 => vec!["k"],
            _ => vec!["k1", "k2"],
        };
        headers.extend(["lower", "upper", "gap"]);
        let rows: Vec<Vec<f64>> = bs
            .k_grid
            .iter()
            .zip(bs.lower.iter().zip(bs.upper.iter()))
            .map(|(k, (lo, hi))| {
                let mut row = k.clone();
                row.extend([*lo, *hi, hi - lo]);
                row
            })
            .collect();
        output::write_table(&out.join(file), &headers, &rows)?;
    }
    Ok(())
}

fn prediction_for(cfg: &ExperimentConfig, spec: &LatticeSpec) -> Result<Option<f64>> {
    let Some(s) = cfg.schedule.as_ref() else {
        return Ok(None);
    };
    let initial = make_state(spec, &cfg.initial)?;
    // the analytic prediction needs periodic boundaries; report NaN otherwise
    let f = predict_echo_fidelity(
        &initial,
        spec,
        PulseKind::Staggered { strength: s.strength },
        s.delta_t,
        s.t0,
    )
    .unwrap_or(f64::NAN);
    Ok(Some(f))
}

fn write_run_artifacts(
    cfg: &ExperimentConfig,
    out: &PathBuf,
    traj: &Trajectory,
    report: Option<&EchoReport>,
) -> Result<()> {
    if cfg.write_csv {
        output::write_trajectory(&out.join("trajectory.csv"), traj)?;
    }
    for (t, probs) in &traj.snapshots {
        let stem = output::snapshot_stem(*t);
        if cfg.write_csv {
            output::write_snapshot_csv(
                &out.join(format!("{stem}.csv")),
                &cfg.lattice.extents,
                probs,
            )?;
        }
        if cfg.write_pgm {
            output::write_snapshot_pgm(
                &out.join(format!("{stem}.pgm")),
                &cfg.lattice.extents,
                probs,
            )?;
        }
    }
    output::write_run_summary(
        &out.join("run_summary.txt"),
        cfg.seed,
        propagator_name(cfg.propagator),
        report,
    )
}

fn cmd_run(cfg: &ExperimentConfig, out: &PathBuf) -> Result<()> {
    let schedule = cfg.pulse_schedule()?;
    let opts = cfg.run_options();
    let traj = run_protocol(&cfg.lattice, &cfg.initial, &schedule, &opts)?;
    let report = match cfg.schedule.as_ref() {
        Some(s) => {
            let predicted = prediction_for(cfg, &cfg.lattice)?.unwrap();
            Some(echo_report(&traj, s.pulse_end(), predicted)?)
        }
        None => None,
    };
    write_run_artifacts(cfg, out, &traj, report.as_ref())?;
    if let Some(r) = &report {
        print!("{}", r.to_kv());
    } else {
        println!("revival=false");
    }
    Ok(())
}

fn sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<Vec<f64>> {
    let point = cfg.with_sweep_value(axis, value)?;
    let s = point
        .schedule
        .as_ref()
        .ok_or_else(|| EchoError::Config("sweep requires a [schedule] section".into()))?;
    let schedule = point.pulse_schedule()?;
    let mut opts = RunOptions::new(point.t_end, point.sample_dt);
    opts.propagator = point.propagator;
    let traj = run_protocol(&point.lattice, &point.initial, &schedule, &opts)?;
    let predicted = prediction_for(&point, &point.lattice)?.unwrap();
    let rep = echo_report(&traj, s.pulse_end(), predicted)?;
    Ok(vec![
        value,
        rep.peak_time,
        rep.peak_value,
        rep.predicted_value,
        rep.residual,
    ])
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &PathBuf) -> Result<()> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| EchoError::Config("sweep command requires a [sweep] section".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| EchoError::Resource(e.to_string()))?;
    // points run concurrently; collect preserves value order for the writer
    let rows: Vec<Vec<f64>> = pool.install(|| {
        sweep
            .values
            .par_iter()
            .map(|&v| sweep_point(cfg, sweep.axis, v))
            .collect::<Result<_>>()
    })?;
    output::write_table(
        &out.join("sweep.csv"),
        &[
            sweep.axis.label(),
            "peak_time",
            "peak_value",
            "predicted_value",
            "residual",
        ],
        &rows,
    )?;
    for row in &rows {
        println!(
            "{}={} peak_value={}",
            sweep.axis.label(),
            output::fmt_f64(row[0]),
            output::fmt_f64(row[2])
        );
    }
    Ok(())
}

fn cmd_check(size: usize, perturb: bool) -> Result<bool> {
    let outcomes = run_checks(size, perturb)?;
    let mut all_pass = true;
    for c in &outcomes {
        println!(
            "{}: max_residual={:.3e} threshold={:.0e} {}",
            c.name,
            c.residual,
            c.threshold,
            if c.passed() { "PASS" } else { "FAIL" }
        );
        all_pass &= c.passed();
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: std::result::Result<u8, EchoError> = (|| match cli.command {
        Command::Bands { config, out } => {
            let cfg = load_config(&config)?;
            let out = resolve_out(out, &cfg)?;
            cmd_bands(&cfg, &out)?;
            Ok(0)
        }
        Command::Run {
            config,
            out,
            workers,
            propagator,
        } => {
            let mut cfg = load_config(&config)?;
            apply_overrides(&mut cfg, workers, propagator);
            let out = resolve_out(out, &cfg)?;
            cmd_run(&cfg, &out)?;
            Ok(0)
        }
        Command::Sweep {
            config,
            out,
            workers,
            propagator,
        } => {
            let mut cfg = load_config(&config)?;
            apply_overrides(&mut cfg, workers, propagator);
            let out = resolve_out(out, &cfg)?;
            cmd_sweep(&cfg, &out)?;
            Ok(0)
        }
        Command::Check { size, perturb } => Ok(if cmd_check(size, perturb)? { 0 } else { 1 }),
    })();
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
