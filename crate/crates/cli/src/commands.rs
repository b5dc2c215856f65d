use std::io::Write;
use std::path::Path;

use lifecycle_core::params::read_two_column_csv;
use lifecycle_core::simulate::{simulate_lifecycle, LifecycleOptions};
use lifecycle_core::validate::{run_suite, SuiteOptions};
use lifecycle_core::weights::{aligned_grids, solve_weights_with, SolveOptions};
use lifecycle_core::{
    validate_hypotheses, DelayKernel, ExtendedValue, FeedbackPolicy, HistoryBuffer, LagGrid, Model,
    ModelConfig, PathConfig, SimOutput, StateSnapshot, TimeGrid, WeightTable,
};

use crate::manifest::{GridInfo, OutDir, RunManifest};
use crate::{Cli, CliError, Command, EXIT_ORACLE};

struct Loaded {
    model: Model,
    manifest: RunManifest,
}

fn load(cli: &Cli, subcommand: &str, args: serde_json::Value) -> Result<Loaded, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ModelConfig::from_path(path)?;
    let report = validate_hypotheses(&cfg);
    if !report.passed() {
        return Err(CliError::config(format!("configuration rejected\n{report}")));
    }
    let model = Model::new(cfg.clone())?;
    let manifest = RunManifest::new(subcommand, path, &bytes, &cfg, cli.seed, cli.threads, args);
    Ok(Loaded { model, manifest })
}

fn args_json<T: serde::Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("arguments serialise")
}

fn io(e: std::io::Error) -> CliError {
    CliError::config(e.to_string())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Weights(a) => weights(cli, a),
        Command::Policy(a) => policy(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Profile(a) => profile(cli, a),
        Command::Validate(a) => validate(cli, a),
    }
}

fn grid_info(tbl: &WeightTable) -> GridInfo {
    GridInfo {
        dt: tbl.time.dt,
        n_t: tbl.time.n_t,
        n_z: tbl.lag.n_z,
    }
}

fn solve_table(model: &Model, spy: usize) -> Result<WeightTable, CliError> {
    let (tg, lg) = aligned_grids(model.tau_r(), model.income().d, spy)?;
    Ok(solve_weights_with(model, tg, lg, &SolveOptions::default())?)
}

/// History on the lag grid: flat at `y0`, flat at a given level, or read
/// from a `zeta,y` CSV and interpolated linearly.
fn history(spec: Option<&str>, y0: f64, lag: LagGrid) -> Result<HistoryBuffer, CliError> {
    match spec {
        None => Ok(HistoryBuffer::flat(lag, y0)),
        Some(s) => match s.parse::<f64>() {
            Ok(level) => Ok(HistoryBuffer::flat(lag, level)),
            Err(_) => history_csv(Path::new(s), lag),
        },
    }
}

fn history_csv(path: &Path, lag: LagGrid) -> Result<HistoryBuffer, CliError> {
    let (z, y) = read_two_column_csv(path)?;
    if z.len() < 2 || z.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config(format!(
            "{}: need at least two rows with increasing lags",
            path.display()
        )));
    }
    let slack = 1e-9 * lag.d.max(1.0);
    if z[0] > -lag.d + slack || *z.last().unwrap() < -slack {
        return Err(CliError::config(format!(
            "{}: lags must cover [-{}, 0]",
            path.display(),
            lag.d
        )));
    }
    let interp = |x: f64| {
        let k = z.partition_point(|&v| v <= x).clamp(1, z.len() - 1);
        let s = (x - z[k - 1]) / (z[k] - z[k - 1]);
        y[k - 1] + s * (y[k] - y[k - 1])
    };
    Ok(HistoryBuffer::from_fn(lag, interp))
}

fn weights(cli: &Cli, a: &crate::WeightsArgs) -> Result<(), CliError> {
    let Loaded { model, mut manifest } = load(cli, "weights", args_json(a))?;
    let (tau, d) = (model.tau_r(), model.income().d);
    let (tg, lg) = match (a.nt, a.nz) {
        (Some(nt), nz) => {
            let tg = TimeGrid::new(tau, nt)?;
            let nz = nz.unwrap_or_else(|| (d / tg.dt).round().max(1.0) as usize);
            (tg, LagGrid::new(d, nz)?)
        }
        (None, Some(nz)) => {
            let lg = LagGrid::new(d, nz)?;
            (TimeGrid::new(tau, (tau / lg.dz).round().max(1.0) as usize)?, lg)
        }
        (None, None) => aligned_grids(tau, d, a.steps_per_year)?,
    };
    let opts = SolveOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..Default::default()
    };
    let tbl = solve_weights_with(&model, tg, lg, &opts)?;
    manifest.grid = Some(grid_info(&tbl));
    manifest.outputs = vec!["weights_g.csv".into(), "weights_h.csv".into(), "manifest.json".into()];
    let out = OutDir::create(&cli.out)?;
    let header = manifest.header();
    tbl.write_g_csv(out.file("weights_g.csv")?, &header)?;
    tbl.write_h_csv(out.file("weights_h.csv")?, &header, a.h_stride.max(1))?;
    out.write_manifest(&manifest)?;
    let res = tbl.residual_check();
    println!("iterations = {}", tbl.stats.iterations);
    println!("defect = {:.3e}", tbl.stats.defect);
    println!("grid: dt = {:.6e}, n_t = {}, n_z = {}", tbl.time.dt, tbl.time.n_t, tbl.lag.n_z);
    println!("{res}");
    println!("manifest = {}", manifest.hash());
    Ok(())
}

fn value_json(v: ExtendedValue) -> serde_json::Value {
    match v.finite() {
        Some(x) => serde_json::json!(x),
        None => serde_json::json!("-inf"),
    }
}

fn policy(cli: &Cli, a: &crate::PolicyArgs) -> Result<(), CliError> {
    let Loaded { model, mut manifest } = load(cli, "policy", args_json(a))?;
    let tbl = solve_table(&model, a.steps_per_year)?;
    let hist = match &a.hist_csv {
        Some(p) => history_csv(p, tbl.lag)?,
        None => HistoryBuffer::flat(tbl.lag, a.y),
    };
    let state = StateSnapshot::new(a.t, a.w, a.y, hist);
    let pol = FeedbackPolicy::unified(&model, &tbl);
    let hc = tbl.human_capital(a.t, a.y, &state.hist)?;
    let gamma = pol.total_wealth(&state)?;
    let ctl = pol.feedback_controls(&state)?;
    let v = pol.value_function(&state)?;
    manifest.grid = Some(grid_info(&tbl));
    manifest.outputs = vec!["policy.json".into(), "manifest.json".into()];
    let report = serde_json::json!({
        "manifest_sha256": manifest.hash(),
        "t": a.t,
        "w": a.w,
        "y": a.y,
        "human_capital": hc,
        "Gamma": gamma,
        "c": ctl.c,
        "B": ctl.b,
        "theta": ctl.theta,
        "V": value_json(v),
    });
    let out = OutDir::create(&cli.out)?;
    let mut f = out.file("policy.json")?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| CliError::config(e.to_string()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(io)?;
    out.write_manifest(&manifest)?;
    println!("Gamma = {gamma:.10e}");
    println!("human_capital = {hc:.10e}");
    println!("c = {:.10e}", ctl.c);
    println!("B = {:.10e}", ctl.b);
    let theta: Vec<String> = ctl.theta.iter().map(|x| format!("{x:.10e}")).collect();
    println!("theta = [{}]", theta.join(", "));
    println!("V = {v}");
    Ok(())
}

fn simulate(cli: &Cli, a: &crate::SimulateArgs) -> Result<(), CliError> {
    let Loaded { model, mut manifest } = load(cli, "simulate", args_json(a))?;
    let tbl = solve_table(&model, a.steps_per_year)?;
    let hist = history(a.hist.as_deref(), a.y0, tbl.lag)?;
    let init = StateSnapshot::new(0.0, a.w0, a.y0, hist);
    let horizon = a.horizon.unwrap_or(model.tau_r());
    let pc = PathConfig::new(tbl.time.dt, horizon, a.paths, cli.seed).antithetic(a.antithetic);
    let opts = LifecycleOptions {
        record_every: a.record_every.max(1),
        keep_paths: a.keep_paths,
        value: a.value,
        compare_exact: a.compare_exact,
        ..Default::default()
    };
    let pol = FeedbackPolicy::unified(&model, &tbl);
    let sim = simulate_lifecycle(&pol, &pc, &init, &opts)?;
    manifest.grid = Some(grid_info(&tbl));
    manifest.outputs = vec![
        "sim_series.csv".into(),
        "sim_paths.csv".into(),
        "sim_summary.txt".into(),
        "manifest.json".into(),
    ];
    let out = OutDir::create(&cli.out)?;
    let header = manifest.header();
    sim.write_series_csv(out.file("sim_series.csv")?, &header)?;
    sim.write_paths_csv(out.file("sim_paths.csv")?, &header)?;
    sim.write_summary(out.file("sim_summary.txt")?, &header)?;
    out.write_manifest(&manifest)?;
    sim.write_summary(std::io::stdout().lock(), &[])?;
    Ok(())
}

/// Mean profile columns in output order.
fn profile_columns(sim: &SimOutput, n: usize) -> Vec<(String, &[f64])> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("theta_{i}")).collect();
    names.extend((1..=n).map(|i| format!("theta_over_gamma_{i}")));
    names.extend(["c", "B", "Gamma", "y"].map(String::from));
    names
        .into_iter()
        .map(|name| {
            let col = sim.column(&name).expect("lifecycle output has every profile column");
            (name, col.mean.as_slice())
        })
        .collect()
}

fn run_profile(model: &Model, a: &crate::ProfileArgs, seed: u64) -> Result<(WeightTable, SimOutput), CliError> {
    let tbl = solve_table(model, a.steps_per_year)?;
    let hist = history(a.hist.as_deref(), a.y0, tbl.lag)?;
    let init = StateSnapshot::new(0.0, a.w0, a.y0, hist);
    let n_paths = a.paths + a.paths % 2;
    let pc = PathConfig::new(tbl.time.dt, model.tau_r(), n_paths, seed).antithetic(true);
    let opts = LifecycleOptions {
        record_every: a.record_every.max(1),
        ..Default::default()
    };
    let sim = simulate_lifecycle(&FeedbackPolicy::unified(model, &tbl), &pc, &init, &opts)?;
    Ok((tbl, sim))
}

fn profile(cli: &Cli, a: &crate::ProfileArgs) -> Result<(), CliError> {
    let Loaded { model, mut manifest } = load(cli, "profile", args_json(a))?;
    let (tbl, sim) = run_profile(&model, a, cli.seed)?;
    let n = model.n_assets();
    let base = if a.compare_phi0 {
        let m0 = Model::new(model.config.with_phi(DelayKernel::Zero))?;
        Some(run_profile(&m0, a, cli.seed)?.1)
    } else {
        None
    };
    manifest.grid = Some(grid_info(&tbl));
    manifest.outputs = vec!["profile.csv".into(), "manifest.json".into()];
    let out = OutDir::create(&cli.out)?;
    let mut f = out.file("profile.csv")?;
    for line in manifest.header() {
        writeln!(f, "# {line}").map_err(io)?;
    }
    let mut cols = profile_columns(&sim, n);
    let mut header: Vec<String> = cols.iter().map(|(c, _)| c.clone()).collect();
    let mut gaps: Vec<Vec<f64>> = Vec::new();
    if let Some(b) = &base {
        let extra = profile_columns(b, n);
        header.extend(extra.iter().map(|(c, _)| format!("{c}_phi0")));
        for i in 0..n {
            let (d, z) = (cols[i].1, extra[i].1);
            gaps.push(d.iter().zip(z).map(|(x, y)| x - y).collect());
            header.push(format!("theta_gap_{}", i + 1));
        }
        cols.extend(extra);
    }
    writeln!(f, "t,{}", header.join(",")).map_err(io)?;
    for (k, t) in sim.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(cols.iter().map(|(_, v)| v[k].to_string()));
        row.extend(gaps.iter().map(|g| g[k].to_string()));
        writeln!(f, "{}", row.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)?;
    out.write_manifest(&manifest)?;

    let theta = cols[0].1;
    let working: Vec<usize> = (0..sim.times.len()).filter(|&k| sim.times[k] < model.tau_r()).collect();
    let min = working.iter().map(|&k| theta[k]).fold(f64::INFINITY, f64::min);
    let max = working.iter().map(|&k| theta[k]).fold(f64::NEG_INFINITY, f64::max);
    println!("paths = {}, records = {}", sim.n_paths, sim.times.len());
    println!("theta_1(0) = {:.6}, working-life range [{min:.6}, {max:.6}]", theta[0]);
    if let Some(g) = gaps.first() {
        let below = working.iter().filter(|&&k| g[k] < 0.0).count();
        println!("theta_1 - theta_1_phi0 < 0 at {below}/{} working-life records", working.len());
    }
    println!("manifest = {}", manifest.hash());
    Ok(())
}

fn validate(cli: &Cli, a: &crate::ValidateArgs) -> Result<(), CliError> {
    let Loaded { model, mut manifest } = load(cli, "validate", args_json(a))?;
    let opts = SuiteOptions {
        steps_per_year: a.steps_per_year,
        n_paths: a.paths,
        seed: cli.seed,
        antithetic: !a.no_antithetic,
        w0: a.w0,
        y0: a.y0,
        ..Default::default()
    };
    let reports = run_suite(&model, a.suite, &opts)?;
    manifest.outputs = vec![
        "validate.jsonl".into(),
        "validate_summary.txt".into(),
        "manifest.json".into(),
    ];
    let hash = manifest.hash();
    let out = OutDir::create(&cli.out)?;
    let mut f = out.file("validate.jsonl")?;
    for r in &reports {
        let mut v = serde_json::to_value(r).expect("report serialises");
        v["ok"] = serde_json::Value::Bool(r.ok());
        v["manifest_sha256"] = serde_json::Value::String(hash.clone());
        writeln!(f, "{v}").map_err(io)?;
    }
    f.flush().map_err(io)?;

    let mut summary = Vec::new();
    for line in manifest.header() {
        summary.push(format!("# {line}"));
    }
    for r in &reports {
        let verdict = match (r.ok(), r.probe) {
            (true, _) => "ok  ",
            (false, true) => "WARN",
            (false, false) => "FAIL",
        };
        let kind = if r.probe { " (probe)" } else { "" };
        let body = match r.tolerance {
            Some(tol) => format!("|residual| = {:.3e}, tol {tol:.1e}", r.mc_estimate.abs()),
            None => format!(
                "closed {:.8e}, estimate {:.8e} +- {:.2e}, z = {:+.2}",
                r.closed_form_value, r.mc_estimate, r.standard_error, r.z_score
            ),
        };
        summary.push(format!("{verdict} {}{kind}: {body} [{:.2}s]", r.name, r.runtime_secs));
    }
    let failed = reports.iter().filter(|r| !r.probe && !r.ok()).count();
    let missed = reports.iter().filter(|r| r.probe && !r.ok()).count();
    summary.push(format!(
        "{} checks, {failed} failed, {missed} probe(s) not detected",
        reports.len()
    ));
    let mut s = out.file("validate_summary.txt")?;
    for line in &summary {
        writeln!(s, "{line}").map_err(io)?;
        if !line.starts_with('#') {
            println!("{line}");
        }
    }
    s.flush().map_err(io)?;
    out.write_manifest(&manifest)?;
    if failed > 0 {
        return Err(CliError {
            code: EXIT_ORACLE,
            message: format!("{failed} oracle check(s) failed"),
        });
    }
    Ok(())
}
