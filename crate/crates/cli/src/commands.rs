use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fronthaul_core::channel::{draw_realization, realization_rng, Geometry, RisPresence};
use fronthaul_core::controller::{solve_max_sum_rate, solve_realization, ControllerConfig, SolveStatus};
use fronthaul_core::survivability::{
    fronthaul_demand, reduction_at, run_scenario, write_curve_csv, write_records_csv, RisMode, ScenarioConfig,
    ScenarioResult,
};
use serde_json::{json, Value};

use crate::config::LoadedConfig;
use crate::output::{relative_to, unix_time_s, write_atomic, write_json, RunManifest, MANIFEST_FILE};
use crate::CliError;

/// Survivability levels reported in the sweep summary.
pub const SUMMARY_EPSILONS: [f64; 3] = [0.9, 0.95, 0.99];

pub const TRACE_FILE: &str = "converge_trace.csv";
pub const TRACE_CSV_HEADER: &str = "iter,r1,r2,r2_tilde,lambda,lagrangian";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORDS_FILE: &str = "realizations.csv";

/// Command-line overrides shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub modes: Option<Vec<RisMode>>,
    /// Trace CSV location for `converge`; defaults to the output directory.
    pub trace: Option<PathBuf>,
}

fn load_valid(opts: &RunOptions) -> Result<LoadedConfig, CliError> {
    let mut loaded = LoadedConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        loaded.run.seed = seed;
    }
    if let Some(n) = opts.realizations {
        loaded.run.realizations = n;
    }
    if let (Some(modes), Some(sweep)) = (&opts.modes, loaded.run.sweep.as_mut()) {
        sweep.modes = modes.clone();
    }
    let violations = loaded.violations();
    if violations.is_empty() {
        Ok(loaded)
    } else {
        Err(CliError::Config(violations))
    }
}

fn config_echo(loaded: &LoadedConfig) -> Value {
    serde_json::to_value(&loaded.run).unwrap_or(Value::Null)
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Reports `cmd_validate` success; violations come back as
/// [`CliError::Config`].
pub fn cmd_validate(config: &Path) -> Result<(), CliError> {
    load_valid(&RunOptions {
        config: config.to_path_buf(),
        ..RunOptions::default()
    })
    .map(|_| ())
}

#[derive(Debug, Clone)]
pub struct ConvergeReport {
    pub c0_bps: f64,
    pub status: SolveStatus,
    /// Rates of the returned iterate (bits/s).
    pub r1: f64,
    pub r2: f64,
    /// Secondary rate of the conventional sum-rate run (bits/s).
    pub r2_tilde: f64,
    pub trace_path: PathBuf,
    pub rows: usize,
}

/// One pinned realization through the rate controller with full tracing,
/// next to the conventional sum-rate run from the same start.
pub fn cmd_converge(opts: &RunOptions) -> Result<ConvergeReport, CliError> {
    let started = unix_time_s();
    let clock = Instant::now();
    let loaded = load_valid(opts)?;
    let run = &loaded.run;
    let section = run
        .converge
        .as_ref()
        .ok_or_else(|| CliError::config("converge: section missing"))?;
    let coeffs_path = loaded.coefficients_path().map_err(CliError::config)?;
    let coeffs = loaded.load_coefficients().map_err(CliError::config)?;
    let geometry = Geometry {
        d_ap: section.d_ap,
        d_cpu: section.d_cpu,
        d_ris_cpu: section.d_ris_cpu,
    };
    let c0_bps = fronthaul_demand(&run.fronthaul.spec(section.n_used));
    // the trace covers all T iterations
    let controller = ControllerConfig {
        c0_bps,
        early_exit: false,
        ..run.controller
    };
    let runtime = |e: fronthaul_core::Error| CliError::Runtime(e.to_string());

    let mut rng = realization_rng(run.seed, section.realization);
    let real = draw_realization(&geometry, &run.system, &coeffs, RisPresence::Deployed, &mut rng).map_err(runtime)?;
    let mut rng_conventional = rng.clone();
    let outcome = solve_realization(&real, &controller, &run.system, &mut rng).map_err(runtime)?;
    let conventional = solve_max_sum_rate(&real, &controller, &run.system, &mut rng_conventional).map_err(runtime)?;

    let mut csv = String::from(TRACE_CSV_HEADER);
    csv.push('\n');
    for row in &outcome.state.trace {
        let r2_tilde = conventional
            .trace
            .get(row.iter)
            .or(conventional.trace.last())
            .map_or(0.0, |t| t.1);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.iter,
            fmt_f64(row.r1),
            fmt_f64(row.r2),
            fmt_f64(r2_tilde),
            fmt_f64(row.lambda),
            fmt_f64(row.lagrangian)
        ));
    }
    let trace_path = opts.trace.clone().unwrap_or_else(|| opts.out.join(TRACE_FILE));
    write_atomic(&trace_path, csv.as_bytes())?;

    let manifest = RunManifest {
        command: "converge",
        version: env!("CARGO_PKG_VERSION"),
        config_path: loaded.path.display().to_string(),
        coefficients_path: coeffs_path.display().to_string(),
        master_seed: run.seed,
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        outputs: vec![relative_to(&opts.out, &trace_path)],
        config: json!({
            "run": config_echo(&loaded),
            "c0_bps": c0_bps,
            "result": {
                "status": outcome.status.as_str(),
                "r1_bps": outcome.report.r1,
                "r2_bps": outcome.report.r2,
                "r2_tilde_bps": conventional.r2,
                "iterations": outcome.iterations,
            },
        }),
    };
    write_json(&opts.out.join(MANIFEST_FILE), &manifest)?;

    Ok(ConvergeReport {
        c0_bps,
        status: outcome.status,
        r1: outcome.report.r1,
        r2: outcome.report.r2,
        r2_tilde: conventional.r2,
        trace_path,
        rows: outcome.state.trace.len(),
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub summary_path: PathBuf,
    pub files: Vec<PathBuf>,
    /// `(scenario, mode, message)` for each run that failed outright.
    pub failures: Vec<(String, RisMode, String)>,
}

fn quantile_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn eps_key(eps: f64) -> String {
    format!("{eps}")
}

type ModeResults = BTreeMap<RisMode, Result<ScenarioResult, String>>;

/// Runs every `(scenario, mode)` pair and writes per-realization CSVs,
/// one curve CSV per pair, a summary and the manifest (last).
pub fn cmd_sweep(opts: &RunOptions) -> Result<SweepReport, CliError> {
    let started = unix_time_s();
    let clock = Instant::now();
    let loaded = load_valid(opts)?;
    let run = &loaded.run;
    let sweep = run
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep: section missing"))?;
    let coeffs_path = loaded.coefficients_path().map_err(CliError::config)?;
    let coeffs = loaded.load_coefficients().map_err(CliError::config)?;

    let mut modes = sweep.modes.clone();
    modes.sort();
    modes.dedup();

    // compute everything before writing anything
    let mut results: Vec<(usize, ModeResults)> = Vec::new();
    for (i, sc) in sweep.scenarios.iter().enumerate() {
        let mut per_mode = BTreeMap::new();
        for &mode in &modes {
            let cfg = ScenarioConfig {
                name: sc.name.clone(),
                geometry: sc.geometry(),
                fronthaul: run.fronthaul.spec(sc.n_used),
                ris_mode: mode,
                n_realizations: run.realizations,
                master_seed: run.seed,
            };
            let res = run_scenario(&cfg, &run.system, &coeffs, &run.controller).map_err(|e| e.to_string());
            per_mode.insert(mode, res);
        }
        results.push((i, per_mode));
    }

    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut scenarios_json = Vec::new();
    for (i, per_mode) in &results {
        let sc = &sweep.scenarios[*i];
        let dir = opts.out.join(&sc.name);
        let c0_bps = fronthaul_demand(&run.fronthaul.spec(sc.n_used));

        let mut records_csv = Vec::new();
        let all_records: Vec<_> = per_mode
            .values()
            .filter_map(|r| r.as_ref().ok())
            .flat_map(|r| r.records.iter().cloned())
            .collect();
        write_records_csv(&mut records_csv, &all_records)?;
        let records_path = dir.join(RECORDS_FILE);
        write_atomic(&records_path, &records_csv)?;
        files.push(records_path);

        let mut modes_json = serde_json::Map::new();
        for (mode, res) in per_mode {
            let entry = match res {
                Ok(result) => {
                    let mut buf = Vec::new();
                    write_curve_csv(&mut buf, &result.curve)?;
                    let curve_path = dir.join(format!("curve_{mode}.csv"));
                    write_atomic(&curve_path, &buf)?;
                    files.push(curve_path);
                    let quantiles: serde_json::Map<String, Value> = SUMMARY_EPSILONS
                        .iter()
                        .map(|&e| (eps_key(e), quantile_json(result.curve.quantile(e))))
                        .collect();
                    let failed = result
                        .records
                        .iter()
                        .filter(|r| matches!(r.status, fronthaul_core::survivability::RecordStatus::Failed(_)))
                        .count();
                    json!({
                        "status": "ok",
                        "quantiles_bps": quantiles,
                        "feasible_fraction": result.curve.feasible_fraction(),
                        "zero_redundancy_fraction": result.curve.eval(0.0),
                        "failed_realizations": failed,
                    })
                }
                Err(msg) => {
                    failures.push((sc.name.clone(), *mode, msg.clone()));
                    json!({ "status": "error", "error": msg })
                }
            };
            modes_json.insert(mode.to_string(), entry);
        }

        let mut reductions = serde_json::Map::new();
        if let Some(Ok(off)) = per_mode.get(&RisMode::Off) {
            for mode in [RisMode::Optimized, RisMode::RandomPhases] {
                if let Some(Ok(with_ris)) = per_mode.get(&mode) {
                    let values: serde_json::Map<String, Value> = SUMMARY_EPSILONS
                        .iter()
                        .map(|&e| {
                            let v = match reduction_at(&with_ris.curve, &off.curve, e) {
                                Ok(r) => json!(r),
                                Err(err) => json!({ "undefined": err.to_string() }),
                            };
                            (eps_key(e), v)
                        })
                        .collect();
                    reductions.insert(format!("{mode}_vs_off"), Value::Object(values));
                }
            }
        }

        scenarios_json.push(json!({
            "name": sc.name,
            "d_ap": sc.d_ap,
            "d_cpu": sc.d_cpu,
            "d_ris_cpu": sc.d_ris_cpu,
            "n_used": sc.n_used,
            "c0_bps": c0_bps,
            "modes": modes_json,
            "reductions": reductions,
        }));
    }

    let summary = json!({
        "master_seed": run.seed,
        "realizations": run.realizations,
        "epsilons": SUMMARY_EPSILONS,
        "modes": modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "scenarios": scenarios_json,
        "config": config_echo(&loaded),
    });
    let summary_path = opts.out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    files.push(summary_path.clone());

    let manifest = RunManifest {
        command: "sweep",
        version: env!("CARGO_PKG_VERSION"),
        config_path: loaded.path.display().to_string(),
        coefficients_path: coeffs_path.display().to_string(),
        master_seed: run.seed,
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        outputs: files.iter().map(|f| relative_to(&opts.out, f)).collect(),
        config: config_echo(&loaded),
    };
    write_json(&opts.out.join(MANIFEST_FILE), &manifest)?;

    Ok(SweepReport {
        summary_path,
        files,
        failures,
    })
}
