use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use horizon_est::detectability::{
    is_sample_observable, numerical_rank, read_pair_csv, rolling_window_check, sampled_obs_matrix, unstable_check,
    window_sample_times, SampleTimes,
};
use horizon_est::mhe::{horizon_condition, min_horizon, pencil_max, EstimatorState, IossCertificate, Measurement, StepKind};
use horizon_est::sim::io::{read_trajectory_csv, write_result_csv, write_sweep_csv, write_trajectory_csv};
use horizon_est::sim::{draw_disturbances, simulate as run_simulation, sweep_schedules};
use horizon_est::GapSequence;
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::svg::{LineChart, Series};
use crate::{CliError, Outcome};

const THREADS_ENV: &str = "HORIZON_EST_THREADS";

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> horizon_est::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::from_core(e).with_context(&path.display().to_string()))?;
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads numeric columns back from a written CSV; blanks become NaN.
fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(io)?;
    let headers: Vec<String> = rdr.headers().map_err(io)?.iter().map(String::from).collect();
    let mut cols = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(io)?;
        for (i, field) in rec.iter().enumerate() {
            cols[i].push(field.parse::<f64>().unwrap_or(f64::NAN));
        }
    }
    Ok((headers, cols))
}

/// Plots columns of a written CSV against one of its columns.
fn plot_from_csv(csv_path: &Path, svg_path: &Path, title: &str, x: &str, y_prefixes: &[&str], y_label: &str, markers: bool) -> Result<(), CliError> {
    let (headers, cols) = read_columns(csv_path)?;
    let Some(xi) = headers.iter().position(|h| h == x) else {
        return Ok(());
    };
    let series = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| y_prefixes.iter().any(|p| h.starts_with(p)))
        .map(|(i, h)| Series {
            name: h.clone(),
            points: cols[xi].iter().copied().zip(cols[i].iter().copied()).collect(),
            markers,
        })
        .collect();
    let chart = LineChart {
        title: title.into(),
        x_label: x.into(),
        y_label: y_label.into(),
        series,
    };
    fs::write(svg_path, chart.render()).map_err(|e| CliError::Io(format!("{}: {e}", svg_path.display())))
}

fn load(config: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    Ok(cfg)
}

pub fn simulate(config: &Path, out: Option<&Path>, seed: Option<u64>, no_plot: bool) -> Result<Outcome, CliError> {
    let cfg = load(config, seed)?;
    let scn = &cfg.scenario;
    let sys = scn.validate()?;
    let len = scn.steps as usize + 1;
    let inputs = scn.inputs.sequence(&scn.system, sys.m, len)?;
    let w = draw_disturbances(&scn.disturbance_bounds, len, scn.seed);
    let schedule = scn.schedule.build(scn.steps)?;
    let traj = run_simulation(&sys, &scn.x0, &inputs, &w, &schedule)?;

    let dir = cfg.output_dir(out);
    prepare_dir(&dir)?;
    let csv_path = dir.join("trajectory.csv");
    write_with(&csv_path, |w| write_trajectory_csv(&traj, w))?;
    eprintln!(
        "wrote {} ({} steps, {} samples available)",
        csv_path.display(),
        scn.steps,
        traj.available.iter().filter(|a| **a).count()
    );
    if cfg.plot && !no_plot {
        plot_from_csv(&csv_path, &dir.join("trajectory.svg"), "Simulated trajectory", "t", &["x_", "y_"], "value", false)?;
    }
    Ok(Outcome::Success)
}

pub fn estimate(config: &Path, measurements: &Path, out: Option<&Path>, seed: Option<u64>, no_plot: bool) -> Result<Outcome, CliError> {
    let cfg = load(config, seed)?;
    let scn = &cfg.scenario;
    let sys = scn.validate()?;
    let file = File::open(measurements).map_err(|e| CliError::Io(format!("{}: {e}", measurements.display())))?;
    let data = read_trajectory_csv(file).map_err(|e| CliError::from_core(e).with_context(&measurements.display().to_string()))?;
    if data.output_dim() != sys.p {
        return Err(CliError::Config(format!("measurements have {} outputs, the system has {}", data.output_dim(), sys.p)));
    }
    let inputs: Vec<DVector<f64>> = match data.input_dim() {
        0 => vec![DVector::zeros(sys.m); data.available.len()],
        m if m == sys.m => data.inputs.clone(),
        m => return Err(CliError::Config(format!("measurements have {m} inputs, the system has {}", sys.m))),
    };
    if let Some(states) = &data.states {
        if states[0].len() != sys.n {
            return Err(CliError::Config(format!("measurements have {} state columns, the system has {}", states[0].len(), sys.n)));
        }
    }

    let mut est = EstimatorState::new(Arc::new(sys), Arc::new(scn.estimator.clone()), scn.x_hat0.clone())?;
    let mut failure = None;
    for t in 1..data.available.len() {
        let meas: Vec<_> = if data.available[t - 1] {
            vec![Measurement::new(t as u64 - 1, data.outputs[t - 1].clone())]
        } else {
            Vec::new()
        };
        if let Err(e) = est.step(&inputs[t - 1], &meas) {
            failure = Some(e);
            break;
        }
    }

    let dir = cfg.output_dir(out);
    prepare_dir(&dir)?;
    let csv_path = dir.join("result.csv");
    let truth = data.states.as_deref().map(|s| &s[..est.estimates().len()]);
    write_with(&csv_path, |w| write_result_csv(w, truth, est.estimates(), est.records()))?;

    let records = est.records();
    let solves = records.iter().filter(|r| r.solved()).count();
    let open_loop = records.iter().filter(|r| matches!(r.kind, StepKind::OpenLoop { .. })).count();
    let unconverged: Vec<u64> = records
        .iter()
        .filter(|r| matches!(r.kind, StepKind::Solved { converged: false, .. }))
        .map(|r| r.t)
        .collect();
    println!("solves: {solves}");
    println!("open-loop steps: {open_loop}");
    if !unconverged.is_empty() {
        println!("unconverged solves at t = {unconverged:?}");
    }
    let steps_path = dir.join("steps.json");
    let json = serde_json::to_string_pretty(records).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&steps_path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", steps_path.display())))?;
    eprintln!("wrote {}", csv_path.display());

    if cfg.plot && !no_plot {
        let prefixes: &[&str] = if truth.is_some() { &["x_true_", "x_hat_"] } else { &["x_hat_"] };
        plot_from_csv(&csv_path, &dir.join("result.svg"), "Estimates", "t", prefixes, "state", false)?;
    }
    if let Some(e) = failure {
        return Err(CliError::from_core(e));
    }
    Ok(if unconverged.is_empty() {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

pub fn observability(matrices: &Path, pattern: Vec<u64>, window: Option<u64>, rank_factor: f64, circle_tol: f64) -> Result<Outcome, CliError> {
    let file = File::open(matrices).map_err(|e| CliError::Io(format!("{}: {e}", matrices.display())))?;
    let (a, c) = read_pair_csv(file).map_err(|e| CliError::from_core(e).with_context(&matrices.display().to_string()))?;
    let gaps = GapSequence::new(pattern)?;
    let n = a.nrows() as u64;
    let window = window.unwrap_or(gaps.d_max() * n.max(1));

    let taus = window_sample_times(&gaps, window, window + 1);
    let first = SampleTimes::new(taus.clone())?;
    let rank = numerical_rank(&sampled_obs_matrix(&a, &c, &first)?, rank_factor);
    println!("n = {}, p = {}, pattern = {:?}, window T = {window}", a.nrows(), c.nrows(), gaps.pattern());
    println!("sample times in first window: {taus:?}");
    println!("sampled observability rank: {rank} of {}", a.nrows());
    println!(
        "first window observable: {}",
        yes_no(is_sample_observable(&a, &c, &first, rank_factor)?)
    );
    println!("rolling-window observable: {}", yes_no(rolling_window_check(&a, &c, &gaps, window, rank_factor)?));

    let verdict = unstable_check(&a, &c, &gaps, window, circle_tol, rank_factor)?;
    let split = &verdict.split;
    let fmt_eigs = |v: &[horizon_est::detectability::Eigenvalue]| {
        v.iter()
            .map(|e| if e.im == 0.0 { format!("{:.6}", e.re) } else { format!("{:.6}{:+.6}i", e.re, e.im) })
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("stable block: dim {} [{}]", split.stable_dim(), fmt_eigs(&split.stable_eigenvalues));
    println!("unstable block: dim {} [{}]", split.unstable_dim(), fmt_eigs(&split.unstable_eigenvalues));
    println!("detectable: {}", yes_no(verdict.detectable));
    Ok(if verdict.detectable {
        Outcome::Success
    } else {
        Outcome::VerdictFalse
    })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn design_horizon(cert_path: &Path, d_max: u64) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(cert_path).map_err(|e| CliError::Io(format!("{}: {e}", cert_path.display())))?;
    let cert: IossCertificate =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", cert_path.display())))?;
    let m = min_horizon(&cert, d_max)?;
    println!("lambda_max(P2, P1) = {}", pencil_max(&cert)?);
    println!("M = {m}");
    println!("4*lambda^2*eta^M = {}", horizon_condition(&cert, m)?);
    Ok(Outcome::Success)
}

fn thread_cap(configured: Option<usize>) -> Result<Option<usize>, CliError> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|k| *k > 0)
                .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    Ok(match (configured, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

pub fn sweep(config: &Path, out: Option<&Path>, seed: Option<u64>, no_plot: bool) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(config)?;
    let opts = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `sweep` section".into()))?;
    if opts.cases.is_empty() {
        return Err(CliError::Config("`sweep.cases` is empty".into()));
    }
    if opts.seeds.is_empty() {
        return Err(CliError::Config("`sweep.seeds` is empty".into()));
    }
    // --seed shifts the whole seed list so the replicate count is kept
    let seeds: Vec<u64> = match seed {
        Some(s) => (0..opts.seeds.len() as u64).map(|k| s.wrapping_add(k)).collect(),
        None => opts.seeds.clone(),
    };
    let rows = sweep_schedules(&cfg.scenario, &opts.cases, &seeds, thread_cap(opts.threads)?)?;

    let dir: PathBuf = cfg.output_dir(out);
    prepare_dir(&dir)?;
    let csv_path = dir.join("sweep.csv");
    write_with(&csv_path, |w| write_sweep_csv(&rows, w))?;
    for r in &rows {
        println!("{:<24} mean RMSE {:.6} (std {:.6})", r.label, r.mean_rmse, r.std);
    }
    eprintln!("wrote {}", csv_path.display());
    if cfg.plot && !no_plot {
        plot_from_csv(&csv_path, &dir.join("sweep.svg"), "RMSE vs. average gap", "mean_gap", &["mean_rmse"], "RMSE", true)?;
    }
    Ok(Outcome::Success)
}
