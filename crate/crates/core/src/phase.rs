//! RIS phase optimization by Riemannian gradient descent on the torus of
//! unit-modulus vectors.
//!
//! Gradients use the conjugate Wirtinger convention: for a real objective
//! `f`, the returned vector holds `∂f/∂φ*`, so `df = 2 Re(Σ conj(g_m) dφ_m)`
//! and `-g` is the steepest-descent direction.

use std::f64::consts::{LN_2, TAU};

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::linalg::{cmul_adj, gram_plus_identity, CMat, Hpd, SplitMat, C64};
use crate::precoder::{PrecoderPair, RateWeights};
use crate::rate::{individual_rate, received_factors, EffectiveChannels, Receiver, UNIT_MODULUS_TOL};
use crate::{Error, Result};

/// RIS phase-shift vector with unit-modulus entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(Vec<C64>);

impl PhaseVector {
    pub fn new(phi: Vec<C64>) -> Result<Self> {
        if let Some(m) = phi.iter().position(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::invalid(format!("phi[{m}]"), "entry is not unit modulus"));
        }
        Ok(PhaseVector(phi))
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        PhaseVector(angles.iter().map(|&a| C64::from_polar(1.0, a)).collect())
    }

    pub fn ones(m: usize) -> Self {
        PhaseVector(vec![C64::new(1.0, 0.0); m])
    }

    /// Uniform random phases in [0, 2π).
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        PhaseVector(
            (0..m)
                .map(|_| C64::from_polar(1.0, TAU * rng.random::<f64>()))
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.arg()).collect()
    }
}

/// `∂R_k/∂H_k*` in bits/s/Hz: `(X^{-1} H S - Q^{-1} H S_int) / ln 2` with
/// `S = Σ_i W_i W_i^H`, `S_int = W_i W_i^H` (i ≠ k), `X`/`Q` the received
/// and interference-plus-noise covariances.
pub fn rate_channel_gradient(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<CMat> {
    let (own, cross) = received_factors(k, eff, pre);
    let n = eff.n_rx(k);
    let x = Hpd::new(&gram_plus_identity(&[&own, &cross], noise, n), "received covariance")?;
    let q = Hpd::new(&gram_plus_identity(&[&cross], noise, n), "interference covariance")?;
    let w_k = pre.get(k);
    let w_i = pre.get(k.other());
    let cross_term = cmul_adj(&cross, w_i);
    let signal_term = cmul_adj(&own, w_k) + &cross_term;
    Ok((x.solve(&signal_term) - q.solve(&cross_term)) / C64::new(LN_2, 0.0))
}

/// Per-element chain rule: `g_m = Tr(G_k · h_{t,m}^H h_{r,k,m}^H)`.
pub fn phase_gradient_trace_form(h_r: &CMat, h_t: &CMat, grad_h: &CMat) -> Vec<C64> {
    (0..h_t.nrows())
        .map(|m| {
            let dh_adj = h_t.row(m).adjoint() * h_r.column(m).adjoint();
            (grad_h * dh_adj).trace()
        })
        .collect()
}

/// Vectorized chain rule: `diag(H_{r,k}^H G_k H_t^H)`.
pub fn phase_gradient_matrix_form(h_r: &CMat, h_t: &CMat, grad_h: &CMat) -> Vec<C64> {
    let z = grad_h * h_t.adjoint();
    (0..h_t.nrows()).map(|m| h_r.column(m).dotc(&z.column(m))).collect()
}

/// `∂f/∂φ*` for `f = -(a R_1 + b R_2)` with the given weights.
pub fn objective_phase_gradient(
    real: &ChannelRealization,
    eff: &EffectiveChannels,
    pre: &PrecoderPair,
    weights: RateWeights,
    noise: f64,
) -> Result<Vec<C64>> {
    let mut g = vec![C64::new(0.0, 0.0); real.m_ris()];
    for (k, h_r) in [(Receiver::Cpu, &real.h_r1), (Receiver::NearestAp, &real.h_r2)] {
        let w = weights.get(k);
        if w == 0.0 {
            continue;
        }
        let grad_h = rate_channel_gradient(k, eff, pre, noise)?;
        for (acc, v) in g.iter_mut().zip(phase_gradient_matrix_form(h_r, &real.h_t, &grad_h)) {
            *acc -= v * w;
        }
    }
    Ok(g)
}

/// Euclidean gradient of the Lagrangian `R_2 + λ(C_0 - R_1 - R_2)`:
/// `(1 - λ) ∂R_2 - λ ∂R_1`.
pub fn euclidean_phase_gradient(
    real: &ChannelRealization,
    eff: &EffectiveChannels,
    pre: &PrecoderPair,
    lambda: f64,
    noise: f64,
) -> Result<Vec<C64>> {
    objective_phase_gradient(real, eff, pre, RateWeights::from_lambda(lambda), noise)
}

/// Projection onto the tangent space at `phi`:
/// `g_m - Re(conj(g_m) φ_m) φ_m`.
pub fn riemannian_project(egrad: &[C64], phi: &PhaseVector) -> Vec<C64> {
    egrad
        .iter()
        .zip(phi.as_slice())
        .map(|(g, p)| g - p * (g.conj() * p).re)
        .collect()
}

/// Retraction `exp(j ∠(φ - η g))`; an element whose argument vanishes keeps
/// its previous phase.
pub fn retract_update(phi: &PhaseVector, rgrad: &[C64], eta: f64) -> PhaseVector {
    PhaseVector(
        phi.as_slice()
            .iter()
            .zip(rgrad)
            .map(|(&p, &g)| {
                if g == C64::new(0.0, 0.0) {
                    return p;
                }
                let z = p - g * eta;
                if z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
                    p
                } else {
                    C64::from_polar(1.0, z.arg())
                }
            })
            .collect(),
    )
}

/// Cascaded channel of one realization prepared for repeated evaluation.
/// Products run on split real/imaginary storage.
#[derive(Debug, Clone)]
pub struct CascadeModel {
    h_s1: CMat,
    h_s2: CMat,
    /// `[H_r1; H_r2]`.
    h_r: SplitMat,
    h_t: SplitMat,
    h_t_adj: SplitMat,
    n_cpu: usize,
    zero: bool,
}

impl CascadeModel {
    pub fn new(real: &ChannelRealization) -> Result<Self> {
        real.validate_dims()?;
        let (n_cpu, n_ap, m) = (real.n_cpu(), real.n_ap(), real.m_ris());
        let mut stacked = CMat::zeros(n_cpu + n_ap, m);
        stacked.rows_mut(0, n_cpu).copy_from(&real.h_r1);
        stacked.rows_mut(n_cpu, n_ap).copy_from(&real.h_r2);
        let h_t = SplitMat::from_complex(&real.h_t);
        Ok(CascadeModel {
            h_s1: real.h_s1.clone(),
            h_s2: real.h_s2.clone(),
            h_r: SplitMat::from_complex(&stacked),
            h_t_adj: h_t.adjoint(),
            h_t,
            n_cpu,
            zero: real.cascade_is_zero(),
        })
    }

    pub fn m_ris(&self) -> usize {
        self.h_t.nrows()
    }

    /// True when no phase vector changes the effective channels.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn effective(&self, phi: &PhaseVector) -> EffectiveChannels {
        if self.zero {
            return EffectiveChannels {
                h1: self.h_s1.clone(),
                h2: self.h_s2.clone(),
            };
        }
        let (m, n) = (self.h_t.nrows(), self.h_t.ncols());
        let mut scaled = SplitMat::zeros(m, n);
        for j in 0..n {
            for (i, p) in phi.as_slice().iter().enumerate() {
                let (a, b) = (self.h_t.re[(i, j)], self.h_t.im[(i, j)]);
                scaled.re[(i, j)] = p.re * a - p.im * b;
                scaled.im[(i, j)] = p.re * b + p.im * a;
            }
        }
        let cascade = self.h_r.mul(&scaled).to_complex();
        let n_rx2 = cascade.nrows() - self.n_cpu;
        EffectiveChannels {
            h1: &self.h_s1 + cascade.rows(0, self.n_cpu),
            h2: &self.h_s2 + cascade.rows(self.n_cpu, n_rx2),
        }
    }

    /// `Σ_k c_k diag(H_{r,k}^H G_k H_t^H)`.
    pub fn phase_gradient(&self, grads: [&CMat; 2], coeffs: [f64; 2]) -> Vec<C64> {
        let m = self.m_ris();
        if self.zero {
            return vec![C64::new(0.0, 0.0); m];
        }
        let n_rx2 = self.h_r.nrows() - self.n_cpu;
        let mut stacked = CMat::zeros(self.h_r.nrows(), self.h_t.ncols());
        stacked
            .rows_mut(0, self.n_cpu)
            .copy_from(&(grads[0] * C64::new(coeffs[0], 0.0)));
        stacked
            .rows_mut(self.n_cpu, n_rx2)
            .copy_from(&(grads[1] * C64::new(coeffs[1], 0.0)));
        let z = SplitMat::from_complex(&stacked).mul(&self.h_t_adj);
        let rows = self.h_r.nrows();
        (0..m)
            .map(|col| {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..rows {
                    let (hr, hi) = (self.h_r.re[(i, col)], self.h_r.im[(i, col)]);
                    let (zr, zi) = (z.re[(i, col)], z.im[(i, col)]);
                    re += hr * zr + hi * zi;
                    im += hr * zi - hi * zr;
                }
                C64::new(re, im)
            })
            .collect()
    }

    /// `∂f/∂φ*` for `f = -(a R_1 + b R_2)`.
    pub fn objective_gradient(
        &self,
        eff: &EffectiveChannels,
        pre: &PrecoderPair,
        weights: RateWeights,
        noise: f64,
    ) -> Result<Vec<C64>> {
        let g1 = if weights.cpu != 0.0 {
            rate_channel_gradient(Receiver::Cpu, eff, pre, noise)?
        } else {
            CMat::zeros(eff.h1.nrows(), eff.h1.ncols())
        };
        let g2 = if weights.nearest_ap != 0.0 {
            rate_channel_gradient(Receiver::NearestAp, eff, pre, noise)?
        } else {
            CMat::zeros(eff.h2.nrows(), eff.h2.ncols())
        };
        Ok(self.phase_gradient([&g1, &g2], [-weights.cpu, -weights.nearest_ap]))
    }
}

/// Step-size rule of the phase search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSearch {
    /// Number of gradient steps E.
    pub iters: usize,
    /// Largest per-element phase move per step (rad); the step is
    /// `eta0 / max_m |grad_m|`.
    pub eta0: f64,
    /// Halvings tried when a step increases the objective.
    pub max_halvings: usize,
    /// Stop once a step improves the objective by no more than this
    /// fraction of its magnitude. Zero runs all `iters` steps.
    pub rel_tol: f64,
}

impl Default for PhaseSearch {
    fn default() -> Self {
        PhaseSearch {
            iters: 50,
            eta0: 0.1,
            max_halvings: 10,
            rel_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub phases: PhaseVector,
    pub effective: EffectiveChannels,
    /// Objective `-(a R_1 + b R_2)` at `phases`.
    pub objective: f64,
    pub initial_objective: f64,
    pub steps_taken: usize,
}

fn weighted_objective(eff: &EffectiveChannels, pre: &PrecoderPair, weights: RateWeights, noise: f64) -> Result<f64> {
    let mut f = 0.0;
    for k in Receiver::BOTH {
        let w = weights.get(k);
        if w != 0.0 {
            f -= w * individual_rate(k, eff, pre, noise)?;
        }
    }
    Ok(f)
}

/// Minimizes `-(a R_1 + b R_2)` over the phases with precoders held fixed.
///
/// Runs up to `search.iters` projected-gradient steps. A step that fails to
/// decrease the objective after `max_halvings` halvings leaves the iterate
/// unchanged, and every later step would repeat it exactly, so the search
/// stops there. Returns the best iterate seen.
pub fn optimize_phases(
    model: &CascadeModel,
    pre: &PrecoderPair,
    weights: RateWeights,
    noise: f64,
    search: &PhaseSearch,
    start: &PhaseVector,
) -> Result<PhaseOutcome> {
    if start.len() != model.m_ris() {
        return Err(Error::DimensionMismatch {
            context: "optimize_phases start",
            expected: model.m_ris().to_string(),
            actual: start.len().to_string(),
        });
    }
    let mut phases = start.clone();
    let mut eff = model.effective(&phases);
    let mut value = weighted_objective(&eff, pre, weights, noise)?;
    let initial = value;
    let mut steps = 0;
    if !model.is_zero() {
        'outer: for _ in 0..search.iters {
            let egrad = model.objective_gradient(&eff, pre, weights, noise)?;
            let rgrad = riemannian_project(&egrad, &phases);
            let peak = rgrad.iter().fold(0.0f64, |m, g| m.max(g.norm()));
            if !(peak > 0.0) || !peak.is_finite() {
                break;
            }
            let mut eta = search.eta0 / peak;
            for _ in 0..=search.max_halvings {
                let trial = retract_update(&phases, &rgrad, eta);
                let trial_eff = model.effective(&trial);
                let trial_value = weighted_objective(&trial_eff, pre, weights, noise)?;
                if trial_value < value {
                    let gain = value - trial_value;
                    phases = trial;
                    eff = trial_eff;
                    value = trial_value;
                    steps += 1;
                    if gain <= search.rel_tol * value.abs() {
                        break 'outer;
                    }
                    continue 'outer;
                }
                eta *= 0.5;
            }
            break;
        }
    }
    Ok(PhaseOutcome {
        phases,
        effective: eff,
        objective: value,
        initial_objective: initial,
        steps_taken: steps,
    })
}
