//! Rate controller: alternates precoder updates, RIS phase descent and
//! multiplier ascent to minimize `R_2` subject to `R_1 + R_2 ≥ C_0`.
//!
//! The solver works on noise-normalized channels (unit noise power) and in
//! bits/s/Hz; reports are scaled to bits/s with the bandwidth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, SystemParams};
use crate::linalg::{frobenius_sq, CMat, C64};
use crate::phase::{optimize_phases, CascadeModel, PhaseSearch, PhaseVector};
use crate::precoder::{matched_precoder, modified_wmmse, waterfilling, weighted_wmmse, PrecoderPair, RateWeights};
use crate::rate::{individual_rate, lagrangian, rates, EffectiveChannels, RateReport, Receiver};
use crate::{Error, Result};

/// Consecutive stable iterations required before stopping early.
pub const STABLE_ITERS: usize = 5;

/// Relative multiplier change counted as stable.
pub const LAMBDA_STABLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Demanded sum rate C_0 (bits/s). Derived from the fronthaul spec,
    /// never read from configuration files.
    #[serde(skip)]
    pub c0_bps: f64,
    /// Outer iterations T.
    pub outer_iters: usize,
    /// Phase steps per outer iteration E.
    pub phase_iters: usize,
    /// Initial multiplier step α, applied to the deficit relative to the
    /// demand and halved whenever the deficit changes sign.
    pub alpha: f64,
    /// Largest phase move per step (rad).
    pub eta: f64,
    pub max_halvings: usize,
    /// Relative objective improvement below which the phase search stops
    /// before `phase_iters` steps.
    pub phase_rel_tol: f64,
    pub lambda_max: f64,
    /// Relative feasibility tolerance on `R_1 + R_2 ≥ C_0`.
    pub tol_rate: f64,
    /// Equalizer/weight/precoder passes per outer iteration.
    pub wmmse_inner_iters: usize,
    /// Stop on multiplier stability, or as soon as a feasible iterate needs
    /// no secondary rate. Disable to always run all T iterations.
    pub early_exit: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            c0_bps: 0.0,
            outer_iters: 100,
            phase_iters: 50,
            alpha: 0.5,
            eta: 0.1,
            max_halvings: 10,
            phase_rel_tol: 1e-6,
            lambda_max: 1e3,
            tol_rate: 1e-3,
            wmmse_inner_iters: 1,
            early_exit: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0_bps > 0.0) || !self.c0_bps.is_finite() {
            return Err(Error::invalid(
                "c0_bps",
                format!("must be positive and finite, got {}", self.c0_bps),
            ));
        }
        if self.outer_iters == 0 {
            return Err(Error::invalid("outer_iters", "must be at least 1"));
        }
        if self.phase_iters == 0 {
            return Err(Error::invalid("phase_iters", "must be at least 1"));
        }
        for (field, v) in [("alpha", self.alpha), ("eta", self.eta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.lambda_max > 1.0) {
            return Err(Error::invalid("lambda_max", "must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.tol_rate) {
            return Err(Error::invalid("tol_rate", "must lie in [0, 1)"));
        }
        if self.wmmse_inner_iters == 0 {
            return Err(Error::invalid("wmmse_inner_iters", "must be at least 1"));
        }
        Ok(())
    }

    fn phase_search(&self) -> PhaseSearch {
        PhaseSearch {
            iters: self.phase_iters,
            eta0: self.eta,
            max_halvings: self.max_halvings,
            rel_tol: self.phase_rel_tol,
        }
    }
}

/// `clamp(λ + α (c0 - r1 - r2) / c0, 1, λ_max)`; the deficit is relative to `c0`.
pub fn lambda_update(lambda: f64, r1: f64, r2: f64, c0: f64, alpha: f64, lambda_max: f64) -> f64 {
    (lambda + alpha * (c0 - r1 - r2) / c0).clamp(1.0, lambda_max)
}

/// One outer iteration as recorded in the trace; rates in bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub r1: f64,
    pub r2: f64,
    /// Multiplier used during this iteration.
    pub lambda: f64,
    pub lagrangian: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub precoders: PrecoderPair,
    pub phases: PhaseVector,
    pub lambda: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max_iterations",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Rates of the returned iterate: the feasible one with least `R_2`,
    /// or the last iterate when none was feasible.
    pub report: RateReport,
    pub state: SolverState,
    pub status: SolveStatus,
    /// Outer iterations executed.
    pub iterations: usize,
}

impl SolveOutcome {
    /// Redundant capacity in bits/s; infinite unless feasible.
    pub fn c_delta(&self) -> f64 {
        if self.status == SolveStatus::Feasible {
            self.report.c_delta
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhasePolicy {
    Optimize,
    Frozen,
}

/// Problem data in solver units.
struct Problem<'a> {
    real: ChannelRealization,
    model: CascadeModel,
    cfg: &'a ControllerConfig,
    bandwidth: f64,
    power: f64,
    /// Demand in bits/s/Hz.
    c0: f64,
}

const NOISE: f64 = 1.0;

impl Problem<'_> {
    fn threshold(&self) -> f64 {
        self.c0 * (1.0 - self.cfg.tol_rate)
    }

    fn report(&self, r1: f64, r2: f64) -> RateReport {
        RateReport::from_spectral(r1, r2, self.c0, self.cfg.tol_rate, self.bandwidth)
    }
}

fn setup<'a>(real: &ChannelRealization, cfg: &'a ControllerConfig, params: &SystemParams) -> Result<Problem<'a>> {
    cfg.validate()?;
    params.validate()?;
    if real.n_ap() != params.n_ap || real.n_cpu() != params.n_cpu || real.m_ris() != params.m_ris {
        return Err(Error::DimensionMismatch {
            context: "realization vs system parameters",
            expected: format!("N_AP={} N_CPU={} M={}", params.n_ap, params.n_cpu, params.m_ris),
            actual: format!("N_AP={} N_CPU={} M={}", real.n_ap(), real.n_cpu(), real.m_ris()),
        });
    }
    if !real.is_finite() {
        return Err(Error::NonFinite {
            context: "channel realization",
            detail: "entries must be finite".into(),
        });
    }
    let normalized = real.noise_normalized(params.noise_power());
    Ok(Problem {
        model: CascadeModel::new(&normalized)?,
        real: normalized,
        cfg,
        bandwidth: params.bandwidth_hz,
        power: params.power_budget_w,
        c0: cfg.c0_bps / params.bandwidth_hz,
    })
}

/// `W_k = sqrt(P/2) H_k^H / ‖H_k‖_F`, padded to N_AP×N_AP.
pub fn initial_precoders(eff: &EffectiveChannels, power: f64) -> PrecoderPair {
    PrecoderPair::new(
        matched_precoder(&eff.h1, power / 2.0),
        matched_precoder(&eff.h2, power / 2.0),
    )
}

fn spectral_norm(m: &CMat) -> f64 {
    if frobenius_sq(m) == 0.0 {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0, |a, &s| a.max(s))
}

/// Upper bound on `R_1 + R_2` over all precoders meeting the budget.
///
/// Each rate is at most its single-link capacity with the whole budget. With
/// frozen phases that capacity is computed exactly; otherwise it is bounded
/// through `‖H_s + H_r Φ H_t‖ ≤ ‖H_s‖ + ‖H_r‖ ‖H_t‖` and concavity of the log.
fn sum_capacity_bound(real: &ChannelRealization, eff: &EffectiveChannels, power: f64, frozen: bool) -> f64 {
    if frozen {
        return waterfilling(&eff.h1, power, NOISE).rate + waterfilling(&eff.h2, power, NOISE).rate;
    }
    let ht = spectral_norm(&real.h_t);
    [(&real.h_s1, &real.h_r1), (&real.h_s2, &real.h_r2)]
        .into_iter()
        .map(|(hs, hr)| {
            let gain = (spectral_norm(hs) + spectral_norm(hr) * ht).powi(2) / NOISE;
            let modes = hs.nrows().min(hs.ncols()) as f64;
            modes * (1.0 + gain * power / modes).log2()
        })
        .sum()
}

/// Smallest-`R_2` scaling `W_2 → s W_2`, `s ∈ [0, 1]`, that keeps a
/// feasible iterate feasible. Returns the trimmed precoders and rates.
///
/// `R_2` grows with `s` while `R_1 + R_2` is continuous, so the first
/// crossing of the demand found by bisection bounds the needed secondary
/// rate. Full-power precoders can overshoot the demand; trimming keeps the
/// reported redundancy at or below it.
fn trim_secondary(
    eff: &EffectiveChannels,
    pre: &PrecoderPair,
    c0: f64,
    r1: f64,
    r2: f64,
) -> Result<(PrecoderPair, f64, f64)> {
    let scaled = |s: f64| -> Result<(PrecoderPair, f64, f64)> {
        let mut p = pre.clone();
        p.w2 *= C64::new(s, 0.0);
        let (a, b) = rates(eff, &p, NOISE)?;
        Ok((p, a, b))
    };
    if r1 + r2 <= c0 || frobenius_sq(&pre.w2) == 0.0 {
        return Ok((pre.clone(), r1, r2));
    }
    let zero = scaled(0.0)?;
    if zero.1 >= c0 {
        return Ok(zero);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = (pre.clone(), r1, r2);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let cand = scaled(mid)?;
        if cand.1 + cand.2 >= c0 {
            hi = mid;
            best = cand;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Ok(best)
}

fn run(problem: &Problem<'_>, policy: PhasePolicy, start: PhaseVector) -> Result<SolveOutcome> {
    let cfg = problem.cfg;
    let bw = problem.bandwidth;
    let c0 = problem.c0;
    let mut phases = start;
    let mut eff = problem.model.effective(&phases);
    let mut pre = initial_precoders(&eff, problem.power);
    let mut lambda = 1.0;

    let frozen = policy == PhasePolicy::Frozen || problem.model.is_zero();
    if sum_capacity_bound(&problem.real, &eff, problem.power, frozen) < problem.threshold() {
        let wf = waterfilling(&eff.h1, problem.power, NOISE);
        let r1 = individual_rate(Receiver::Cpu, &eff, &wf.precoders, NOISE)?;
        return Ok(SolveOutcome {
            report: problem.report(r1, 0.0),
            state: SolverState {
                precoders: wf.precoders,
                phases,
                lambda,
                trace: Vec::new(),
            },
            status: SolveStatus::Infeasible,
            iterations: 0,
        });
    }

    let search = cfg.phase_search();
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut best: Option<(PrecoderPair, PhaseVector, f64, f64)> = None;
    let mut last = (0.0, 0.0);
    let mut stable = 0;
    let mut saturated = false;
    let mut iterations = 0;
    let mut alpha = cfg.alpha;
    let mut last_deficit = 0.0_f64;

    for t in 0..cfg.outer_iters {
        iterations = t + 1;
        let mut step = || -> Result<(f64, f64)> {
            pre = modified_wmmse(&eff, lambda, problem.power, NOISE, cfg.wmmse_inner_iters, &pre)?;
            if !frozen {
                let out = optimize_phases(
                    &problem.model,
                    &pre,
                    RateWeights::from_lambda(lambda),
                    NOISE,
                    &search,
                    &phases,
                )?;
                phases = out.phases;
                eff = out.effective;
            }
            rates(&eff, &pre, NOISE)
        };
        let (r1, r2) = step().map_err(|e| e.at_iteration(t))?;
        last = (r1, r2);
        let feasible = r1 + r2 >= problem.threshold();
        trace.push(TraceRow {
            iter: t,
            r1: r1 * bw,
            r2: r2 * bw,
            lambda,
            lagrangian: lagrangian(r1, r2, lambda, c0) * bw,
            feasible,
        });
        if feasible {
            let (p, t1, t2) = trim_secondary(&eff, &pre, c0, r1, r2).map_err(|e| e.at_iteration(t))?;
            // least R_2 first, then the larger primary rate
            if best.as_ref().is_none_or(|b| t2 < b.3 || (t2 == b.3 && t1 > b.2)) {
                best = Some((p, phases.clone(), t1, t2));
            }
            if cfg.early_exit && best.as_ref().is_some_and(|b| b.3 == 0.0) {
                break;
            }
        }

        // halve the dual step whenever the deficit changes sign
        let deficit = c0 - r1 - r2;
        if deficit * last_deficit < 0.0 {
            alpha *= 0.5;
        }
        if deficit != 0.0 {
            last_deficit = deficit;
        }
        let next = lambda_update(lambda, r1, r2, c0, alpha, cfg.lambda_max);
        if next >= cfg.lambda_max && !feasible && best.is_none() {
            saturated = true;
            lambda = next;
            break;
        }
        let on_target = (r1 + r2 - c0).abs() <= cfg.tol_rate * c0;
        let still = (next - lambda).abs() <= LAMBDA_STABLE_TOL * next;
        stable = if on_target && still { stable + 1 } else { 0 };
        lambda = next;
        if cfg.early_exit && stable >= STABLE_ITERS {
            break;
        }
    }

    let (report, status, precoders, phases) = match best {
        Some((p, phi, r1, r2)) => (problem.report(r1, r2), SolveStatus::Feasible, p, phi),
        None => {
            let status = if saturated {
                SolveStatus::Infeasible
            } else {
                SolveStatus::MaxIterations
            };
            (problem.report(last.0, last.1), status, pre, phases)
        }
    };
    Ok(SolveOutcome {
        report,
        state: SolverState {
            precoders,
            phases,
            lambda,
            trace,
        },
        status,
        iterations,
    })
}

/// Full alternating solve with RIS phase optimization from uniform random
/// initial phases drawn from `rng`.
pub fn solve_realization<R: Rng + ?Sized>(
    real: &ChannelRealization,
    cfg: &ControllerConfig,
    params: &SystemParams,
    rng: &mut R,
) -> Result<SolveOutcome> {
    let problem = setup(real, cfg, params)?;
    let start = PhaseVector::random(real.m_ris(), rng);
    run(&problem, PhasePolicy::Optimize, start)
}

/// Same solve with the random initial phases held fixed.
pub fn solve_fixed_phases<R: Rng + ?Sized>(
    real: &ChannelRealization,
    cfg: &ControllerConfig,
    params: &SystemParams,
    rng: &mut R,
) -> Result<SolveOutcome> {
    let problem = setup(real, cfg, params)?;
    let start = PhaseVector::random(real.m_ris(), rng);
    run(&problem, PhasePolicy::Frozen, start)
}

/// Solve with every RIS link removed.
pub fn solve_no_ris(real: &ChannelRealization, cfg: &ControllerConfig, params: &SystemParams) -> Result<SolveOutcome> {
    let mut stripped = real.clone();
    stripped.remove_ris();
    let problem = setup(&stripped, cfg, params)?;
    run(&problem, PhasePolicy::Frozen, PhaseVector::ones(real.m_ris()))
}

/// Conventional sum-rate maximization (equal weights, no demand), used as
/// the comparison point for `R_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumRateOutcome {
    /// Per-iteration `(R_1, R_2)` in bits/s.
    pub trace: Vec<(f64, f64)>,
    pub r1: f64,
    pub r2: f64,
}

/// Alternates sum-rate WMMSE and sum-rate phase descent for `outer_iters`
/// rounds from the same initial phases and precoders as
/// [`solve_realization`] would use with an identically seeded `rng`.
pub fn solve_max_sum_rate<R: Rng + ?Sized>(
    real: &ChannelRealization,
    cfg: &ControllerConfig,
    params: &SystemParams,
    rng: &mut R,
) -> Result<SumRateOutcome> {
    let problem = setup(real, cfg, params)?;
    let mut phases = PhaseVector::random(real.m_ris(), rng);
    let mut eff = problem.model.effective(&phases);
    let mut pre = initial_precoders(&eff, problem.power);
    let search = cfg.phase_search();
    let weights = RateWeights::sum_rate();
    let bw = problem.bandwidth;
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    for t in 0..cfg.outer_iters {
        let mut step = || -> Result<(f64, f64)> {
            pre = weighted_wmmse(&eff, weights, problem.power, NOISE, cfg.wmmse_inner_iters, &pre)?;
            if !problem.model.is_zero() {
                let out = optimize_phases(&problem.model, &pre, weights, NOISE, &search, &phases)?;
                phases = out.phases;
                eff = out.effective;
            }
            rates(&eff, &pre, NOISE)
        };
        let (r1, r2) = step().map_err(|e| e.at_iteration(t))?;
        trace.push((r1 * bw, r2 * bw));
    }
    let (r1, r2) = trace.last().copied().unwrap_or((0.0, 0.0));
    Ok(SumRateOutcome { trace, r1, r2 })
}
