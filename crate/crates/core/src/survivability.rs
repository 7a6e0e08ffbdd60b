//! Monte Carlo survivability: fronthaul demand, per-scenario sweeps over
//! channel realizations, and empirical survivability curves.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    draw_realization, realization_rng, Geometry, PathlossCoeffs, PropagationState, RisPresence, SystemParams,
};
use crate::controller::{solve_fixed_phases, solve_no_ris, solve_realization, ControllerConfig, SolveOutcome};
use crate::{Error, Result};

/// Split-7.2 fronthaul parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FronthaulSpec {
    /// Used subcarriers.
    pub n_used: u32,
    /// Quantization bits per I/Q component.
    pub n_bit: u32,
    /// Access antennas.
    pub n_ac: u32,
    /// OFDM symbol duration (s).
    pub t_s: f64,
}

impl Default for FronthaulSpec {
    fn default() -> Self {
        FronthaulSpec {
            n_used: 400,
            n_bit: 12,
            n_ac: 12,
            t_s: 71.4e-6,
        }
    }
}

impl FronthaulSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0) || !self.t_s.is_finite() {
            return Err(Error::invalid("t_s", format!("must be positive, got {}", self.t_s)));
        }
        for (field, v) in [("n_bit", self.n_bit), ("n_ac", self.n_ac)] {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// `C_0 = 2 N_used N_bit N_ac / T_s` in bits/s.
pub fn fronthaul_demand(spec: &FronthaulSpec) -> f64 {
    2.0 * f64::from(spec.n_used) * f64::from(spec.n_bit) * f64::from(spec.n_ac) / spec.t_s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisMode {
    /// Phases optimized by the controller.
    Optimized,
    /// Random phases drawn once and never optimized.
    RandomPhases,
    /// No RIS.
    Off,
}

impl RisMode {
    pub const ALL: [RisMode; 3] = [RisMode::Optimized, RisMode::RandomPhases, RisMode::Off];

    pub fn as_str(self) -> &'static str {
        match self {
            RisMode::Optimized => "optimized",
            RisMode::RandomPhases => "random_phases",
            RisMode::Off => "off",
        }
    }
}

impl fmt::Display for RisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "optimized" => Ok(RisMode::Optimized),
            "random_phases" | "random" => Ok(RisMode::RandomPhases),
            "off" | "none" => Ok(RisMode::Off),
            other => Err(Error::invalid(
                "mode",
                format!("unknown RIS mode `{other}` (expected optimized, random_phases or off)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub geometry: Geometry,
    pub fronthaul: FronthaulSpec,
    pub ris_mode: RisMode,
    pub n_realizations: usize,
    pub master_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.fronthaul.validate()?;
        if self.n_realizations == 0 {
            return Err(Error::invalid("n_realizations", "must be at least 1"));
        }
        if fronthaul_demand(&self.fronthaul) <= 0.0 {
            return Err(Error::invalid("n_used", "demand must be positive"));
        }
        Ok(())
    }
}

/// Outcome class of one realization.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordStatus {
    Solved(crate::controller::SolveStatus),
    /// The solver failed; the message is kept and the sweep continues.
    Failed(String),
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordStatus::Solved(s) => s.fmt(f),
            RecordStatus::Failed(_) => f.write_str("error"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationRecord {
    pub realization: u64,
    pub mode: RisMode,
    pub state_s1: PropagationState,
    pub state_s2: PropagationState,
    pub r1_bps: f64,
    pub r2_bps: f64,
    /// Minimal redundancy (bits/s); infinite unless the demand was met.
    pub c_delta_bps: f64,
    pub status: RecordStatus,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub c0_bps: f64,
    pub records: Vec<RealizationRecord>,
    pub curve: SurvivabilityCurve,
}

fn solve_one(
    cfg: &ScenarioConfig,
    params: &SystemParams,
    coeffs: &PathlossCoeffs,
    controller: &ControllerConfig,
    index: u64,
) -> RealizationRecord {
    let mut rng = realization_rng(cfg.master_seed, index);
    let presence = match cfg.ris_mode {
        RisMode::Off => RisPresence::Absent,
        _ => RisPresence::Deployed,
    };
    let real = match draw_realization(&cfg.geometry, params, coeffs, presence, &mut rng) {
        Ok(r) => r,
        Err(e) => {
            return RealizationRecord {
                realization: index,
                mode: cfg.ris_mode,
                state_s1: PropagationState::Outage,
                state_s2: PropagationState::Outage,
                r1_bps: 0.0,
                r2_bps: 0.0,
                c_delta_bps: f64::INFINITY,
                status: RecordStatus::Failed(e.to_string()),
                iters: 0,
            }
        }
    };
    let outcome: Result<SolveOutcome> = match cfg.ris_mode {
        RisMode::Optimized => solve_realization(&real, controller, params, &mut rng),
        RisMode::RandomPhases => solve_fixed_phases(&real, controller, params, &mut rng),
        RisMode::Off => solve_no_ris(&real, controller, params),
    };
    let base = RealizationRecord {
        realization: index,
        mode: cfg.ris_mode,
        state_s1: real.state_s1,
        state_s2: real.state_s2,
        r1_bps: 0.0,
        r2_bps: 0.0,
        c_delta_bps: f64::INFINITY,
        status: RecordStatus::Failed(String::new()),
        iters: 0,
    };
    match outcome {
        Ok(o) => RealizationRecord {
            r1_bps: o.report.r1,
            r2_bps: o.report.r2,
            c_delta_bps: o.c_delta(),
            status: RecordStatus::Solved(o.status),
            iters: o.iterations,
            ..base
        },
        Err(e) => RealizationRecord {
            status: RecordStatus::Failed(e.to_string()),
            ..base
        },
    }
}

/// Runs every realization of a scenario on the current rayon pool.
///
/// Realization `i` draws its channels, then its initial phases, from stream
/// `(master_seed, i)`, so results do not depend on scheduling and different
/// modes see identical channels. Solver failures are recorded per
/// realization and count as infeasible.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    params: &SystemParams,
    coeffs: &PathlossCoeffs,
    controller: &ControllerConfig,
) -> Result<ScenarioResult> {
    cfg.validate()?;
    params.validate()?;
    coeffs.validate()?;
    let c0_bps = fronthaul_demand(&cfg.fronthaul);
    let controller = ControllerConfig { c0_bps, ..*controller };
    controller.validate()?;
    let records: Vec<RealizationRecord> = (0..cfg.n_realizations as u64)
        .into_par_iter()
        .map(|i| solve_one(cfg, params, coeffs, &controller, i))
        .collect();
    let curve = SurvivabilityCurve::new(records.iter().map(|r| r.c_delta_bps))?;
    Ok(ScenarioResult { c0_bps, records, curve })
}

/// Empirical survivability `ε(c) = |{i : C_Δ,i ≤ c}| / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivabilityCurve {
    c_delta_sorted: Vec<f64>,
}

impl SurvivabilityCurve {
    /// Builds a curve from per-realization redundancies; `+∞` marks an
    /// infeasible realization.
    pub fn new(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(Error::invalid("c_delta", "a curve needs at least one realization"));
        }
        if let Some(bad) = v.iter().find(|c| c.is_nan() || **c < 0.0) {
            return Err(Error::invalid(
                "c_delta",
                format!("values must be nonnegative, got {bad}"),
            ));
        }
        v.sort_by(f64::total_cmp);
        Ok(SurvivabilityCurve { c_delta_sorted: v })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.c_delta_sorted
    }

    pub fn len(&self) -> usize {
        self.c_delta_sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_delta_sorted.is_empty()
    }

    pub fn eval(&self, c: f64) -> f64 {
        let count = self.c_delta_sorted.partition_point(|&x| x <= c);
        count as f64 / self.len() as f64
    }

    pub fn feasible_fraction(&self) -> f64 {
        self.c_delta_sorted.iter().filter(|c| c.is_finite()).count() as f64 / self.len() as f64
    }

    /// Smallest `c` with `eval(c) ≥ ε`; `+∞` when ε exceeds the feasible
    /// fraction.
    pub fn quantile(&self, epsilon: f64) -> f64 {
        let n = self.len() as f64;
        if epsilon <= 0.0 {
            return 0.0;
        }
        // smallest i with (i + 1) / n >= ε, guarded against rounding in ε·n
        let mut i = ((epsilon * n).ceil() as usize).saturating_sub(1);
        while i > 0 && (i as f64) / n >= epsilon {
            i -= 1;
        }
        while i < self.len() && ((i + 1) as f64) / n < epsilon {
            i += 1;
        }
        self.c_delta_sorted.get(i).copied().unwrap_or(f64::INFINITY)
    }

    /// Support points `(c_i, ε(c_i))` in ascending order, one per
    /// realization.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.len() as f64;
        let feasible = self.feasible_fraction();
        let mut out = Vec::with_capacity(self.len());
        for (i, &c) in self.c_delta_sorted.iter().enumerate() {
            let eps = if c.is_finite() {
                self.c_delta_sorted.partition_point(|&x| x <= c) as f64 / n
            } else {
                feasible
            };
            debug_assert!(eps >= (i as f64 + 1.0) / n || !c.is_finite());
            out.push((c, eps));
        }
        out
    }
}

/// Relative reduction `(q_B(ε) - q_A(ε)) / q_B(ε)` of the redundancy needed
/// by curve A against baseline B.
pub fn reduction_at(curve_a: &SurvivabilityCurve, curve_b: &SurvivabilityCurve, epsilon: f64) -> Result<f64> {
    let qa = curve_a.quantile(epsilon);
    let qb = curve_b.quantile(epsilon);
    if !qa.is_finite() || !qb.is_finite() {
        return Err(Error::Unreachable(epsilon));
    }
    if qb <= 0.0 {
        return Err(Error::invalid(
            "epsilon",
            format!("baseline needs no redundancy at survivability {epsilon}; reduction undefined"),
        ));
    }
    Ok((qb - qa) / qb)
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

pub const RECORD_CSV_HEADER: &str = "realization,mode,state_s1,state_s2,r1_bps,r2_bps,c_delta_bps,status,iters";
pub const CURVE_CSV_HEADER: &str = "c_delta_bps,epsilon";

pub fn write_records_csv<W: Write>(mut out: W, records: &[RealizationRecord]) -> std::io::Result<()> {
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.realization,
            r.mode,
            r.state_s1,
            r.state_s2,
            fmt_f64(r.r1_bps),
            fmt_f64(r.r2_bps),
            fmt_f64(r.c_delta_bps),
            r.status,
            r.iters
        )?;
    }
    Ok(())
}

/// One row per realization; infeasible rows carry `inf` and the feasible
/// fraction.
pub fn write_curve_csv<W: Write>(mut out: W, curve: &SurvivabilityCurve) -> std::io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for (c, eps) in curve.points() {
        writeln!(out, "{},{}", fmt_f64(c), fmt_f64(eps))?;
    }
    Ok(())
}
