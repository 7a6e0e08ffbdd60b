//! Precoder design: single-link water-filling and the λ-weighted WMMSE
//! update with bisection on the power multiplier µ.

use nalgebra::SymmetricEigen;

use crate::linalg::{cmul, frobenius_sq, hermitian_part, CMat, Hpd, C64};
use crate::rate::{individual_rate, mmse_equalizer, mse_inverse, EffectiveChannels, Receiver};
use crate::{Error, Result};

/// Default relative tolerance on the power budget.
pub const DEFAULT_POWER_TOL: f64 = 1e-8;

/// Maximum number of bracket doublings in [`bisect_mu`].
pub const MAX_DOUBLINGS: usize = 60;

/// Transmit precoders `W_1`, `W_2` (both N_AP×N_AP) and the power multiplier
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderPair {
    pub w1: CMat,
    pub w2: CMat,
    pub mu: f64,
}

impl PrecoderPair {
    pub fn new(w1: CMat, w2: CMat) -> Self {
        PrecoderPair { w1, w2, mu: 0.0 }
    }

    pub fn zeros(n_ap: usize) -> Self {
        Self::new(CMat::zeros(n_ap, n_ap), CMat::zeros(n_ap, n_ap))
    }

    pub fn get(&self, k: Receiver) -> &CMat {
        match k {
            Receiver::Cpu => &self.w1,
            Receiver::NearestAp => &self.w2,
        }
    }

    fn get_mut(&mut self, k: Receiver) -> &mut CMat {
        match k {
            Receiver::Cpu => &mut self.w1,
            Receiver::NearestAp => &mut self.w2,
        }
    }

    /// `Tr(W_1 W_1^H) + Tr(W_2 W_2^H)`.
    pub fn power(&self) -> f64 {
        frobenius_sq(&self.w1) + frobenius_sq(&self.w2)
    }

    pub fn n_ap(&self) -> usize {
        self.w1.nrows()
    }
}

/// Objective weights of a weighted sum rate `a R_1 + b R_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateWeights {
    pub cpu: f64,
    pub nearest_ap: f64,
}

impl RateWeights {
    /// Weights induced by the Lagrangian at multiplier `lambda`:
    /// minimizing the Lagrangian maximizes `λ R_1 + (λ - 1) R_2`.
    pub fn from_lambda(lambda: f64) -> Self {
        RateWeights {
            cpu: lambda,
            nearest_ap: lambda - 1.0,
        }
    }

    pub fn sum_rate() -> Self {
        RateWeights {
            cpu: 1.0,
            nearest_ap: 1.0,
        }
    }

    pub fn get(&self, k: Receiver) -> f64 {
        match k {
            Receiver::Cpu => self.cpu,
            Receiver::NearestAp => self.nearest_ap,
        }
    }

    pub fn objective(&self, r1: f64, r2: f64) -> f64 {
        self.cpu * r1 + self.nearest_ap * r2
    }
}

/// MSE weight matrices `V_1`, `V_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseWeights {
    pub v1: CMat,
    pub v2: CMat,
}

impl MseWeights {
    pub fn get(&self, k: Receiver) -> &CMat {
        match k {
            Receiver::Cpu => &self.v1,
            Receiver::NearestAp => &self.v2,
        }
    }
}

/// Receive filters `U_1`, `U_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalizers {
    pub u1: CMat,
    pub u2: CMat,
}

impl Equalizers {
    pub fn mmse(eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<Self> {
        Ok(Equalizers {
            u1: mmse_equalizer(Receiver::Cpu, eff, pre, noise)?,
            u2: mmse_equalizer(Receiver::NearestAp, eff, pre, noise)?,
        })
    }

    pub fn get(&self, k: Receiver) -> &CMat {
        match k {
            Receiver::Cpu => &self.u1,
            Receiver::NearestAp => &self.u2,
        }
    }
}

/// Result of single-link water-filling.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfilling {
    pub precoders: PrecoderPair,
    /// Power per eigenmode, singular values sorted descending.
    pub mode_powers: Vec<f64>,
    /// Achieved rate (bits/s/Hz).
    pub rate: f64,
    /// Set when the channel is all-zero and nothing can be transmitted.
    pub degenerate: bool,
}

/// Classical water-filling over the eigenmodes with gains `g_i`, sorted
/// descending. Zero-gain modes receive exactly zero power.
pub fn waterfill_powers(gains: &[f64], power: f64) -> Vec<f64> {
    let active = gains.iter().take_while(|&&g| g > 0.0).count();
    let mut out = vec![0.0; gains.len()];
    for r in (1..=active).rev() {
        let inv_sum: f64 = gains[..r].iter().map(|g| 1.0 / g).sum();
        let level = (power + inv_sum) / r as f64;
        if level > 1.0 / gains[r - 1] {
            for (p, g) in out.iter_mut().zip(&gains[..r]) {
                *p = level - 1.0 / g;
            }
            break;
        }
    }
    out
}

/// Maximizes `R_1` over `W_1` alone with `W_2 = 0`.
///
/// `h1` is N_CPU×N_AP. `W_1 = V diag(√p)` with `V` the right singular
/// vectors of `h1`; columns beyond the channel rank are zero.
pub fn waterfilling(h1: &CMat, power: f64, noise: f64) -> Waterfilling {
    let n_ap = h1.ncols();
    let zero = || PrecoderPair::zeros(n_ap);
    if frobenius_sq(h1) == 0.0 {
        return Waterfilling {
            precoders: zero(),
            mode_powers: vec![0.0; n_ap],
            rate: 0.0,
            degenerate: true,
        };
    }
    let svd = h1.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let gains: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2) / noise).collect();
    let powers = waterfill_powers(&gains, power);

    let mut w1 = CMat::zeros(n_ap, n_ap);
    for (col, (&mode, &p)) in order.iter().zip(&powers).enumerate() {
        if p > 0.0 {
            let v = v_t.row(mode).adjoint() * C64::new(p.sqrt(), 0.0);
            w1.set_column(col, &v);
        }
    }
    let rate = gains.iter().zip(&powers).map(|(g, p)| (1.0 + g * p).log2()).sum();
    let mut mode_powers = powers;
    mode_powers.resize(n_ap, 0.0);
    Waterfilling {
        precoders: PrecoderPair::new(w1, CMat::zeros(n_ap, n_ap)),
        mode_powers,
        rate,
        degenerate: false,
    }
}

/// `V_1 = λ E_1^{-1}`, `V_2 = (λ - 1) E_2^{-1}`.
pub fn wmmse_weights(lambda: f64, e1: &CMat, e2: &CMat) -> Result<MseWeights> {
    if !(lambda >= 1.0) {
        return Err(Error::LambdaBelowOne(lambda));
    }
    let inv = |e: &CMat| Hpd::new(e, "MSE matrix").map(|h| h.inverse());
    Ok(MseWeights {
        v1: inv(e1)? * C64::new(lambda, 0.0),
        v2: inv(e2)? * C64::new(lambda - 1.0, 0.0),
    })
}

/// Gram matrix `Σ_i H_i^H U_i^H V_i U_i H_i` and right-hand sides
/// `H_k^H U_k^H V_k`.
fn gram_and_rhs(eff: &EffectiveChannels, weights: &MseWeights, eq: &Equalizers) -> (CMat, [CMat; 2]) {
    let n_ap = eff.h1.ncols();
    let mut gram = CMat::zeros(n_ap, n_ap);
    let rhs = Receiver::BOTH.map(|k| {
        let uh = cmul(eq.get(k), eff.get(k));
        let b = cmul(&uh.adjoint(), weights.get(k));
        gram += cmul(&b, &uh);
        b
    });
    (hermitian_part(&gram), rhs)
}

/// Closed-form precoder `W_k = A(µ)^{-1} H_k^H U_k^H V_k` for a given µ.
pub fn precoder_update(
    eff: &EffectiveChannels,
    weights: &MseWeights,
    eq: &Equalizers,
    mu: f64,
) -> Result<PrecoderPair> {
    let (mut gram, [b1, b2]) = gram_and_rhs(eff, weights, eq);
    for i in 0..gram.nrows() {
        gram[(i, i)] += mu;
    }
    let a = match Hpd::new(&gram, "regularized precoder Gram matrix") {
        Ok(a) => a,
        Err(_) if mu == 0.0 => return Err(Error::SingularGram),
        Err(e) => return Err(e),
    };
    Ok(PrecoderPair {
        w1: a.solve(&b1),
        w2: a.solve(&b2),
        mu,
    })
}

/// Precoder family `W(µ)` diagonalized through the eigendecomposition of
/// the Gram matrix, so each power evaluation is O(N).
struct PowerProfile {
    eigvecs: CMat,
    eigvals: Vec<f64>,
    /// `Q^H [B_1 B_2]` with rows in Gram null directions cleared.
    projected: CMat,
    row_energy: Vec<f64>,
}

impl PowerProfile {
    fn new(gram: CMat, rhs: &[CMat; 2]) -> Self {
        let n = gram.nrows();
        let eig = SymmetricEigen::new(gram);
        let eigvals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let top = eigvals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut stacked = CMat::zeros(n, 2 * n);
        stacked.columns_mut(0, n).copy_from(&rhs[0]);
        stacked.columns_mut(n, n).copy_from(&rhs[1]);
        let mut projected = cmul(&eig.eigenvectors.adjoint(), &stacked);
        // B lies in the range of the Gram matrix; anything left in its
        // numerical null space is round-off.
        for (j, &v) in eigvals.iter().enumerate() {
            if v <= 1e-12 * top {
                projected.row_mut(j).fill(C64::new(0.0, 0.0));
            }
        }
        let row_energy = projected
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        PowerProfile {
            eigvecs: eig.eigenvectors,
            eigvals,
            projected,
            row_energy,
        }
    }

    fn power(&self, mu: f64) -> f64 {
        self.eigvals
            .iter()
            .zip(&self.row_energy)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&v, &e)| e / (v.max(0.0) + mu).powi(2))
            .sum()
    }

    fn precoders(&self, mu: f64) -> PrecoderPair {
        let n = self.eigvecs.nrows();
        let mut scaled = self.projected.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            if self.row_energy[j] > 0.0 {
                row *= C64::new(1.0 / (self.eigvals[j].max(0.0) + mu), 0.0);
            }
        }
        let w = cmul(&self.eigvecs, &scaled);
        PrecoderPair {
            w1: w.columns(0, n).into_owned(),
            w2: w.columns(n, n).into_owned(),
            mu,
        }
    }
}

/// Chooses µ ≥ 0 so the precoders meet the power budget.
///
/// Returns the µ = 0 solution when it already satisfies the budget;
/// otherwise doubles an upper bracket and bisects until the power is within
/// `tol_p * power` of the budget, always on the feasible side.
pub fn bisect_mu(
    eff: &EffectiveChannels,
    weights: &MseWeights,
    eq: &Equalizers,
    power: f64,
    tol_p: f64,
) -> Result<PrecoderPair> {
    if !(tol_p > 0.0) {
        return Err(Error::invalid("tol_p", "must be positive"));
    }
    let (gram, rhs) = gram_and_rhs(eff, weights, eq);
    let profile = PowerProfile::new(gram, &rhs);
    if profile.power(0.0) <= power {
        return Ok(profile.precoders(0.0));
    }

    let total: f64 = profile.row_energy.iter().sum();
    // power(µ) <= total / µ², so the doubling below terminates well inside
    // its limit unless the profile is degenerate.
    let mut hi = (total / power).sqrt() * 2f64.powi(-20);
    let mut doublings = 0;
    while profile.power(hi) > power {
        if doublings == MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::BracketNotFound(doublings));
        }
        hi *= 2.0;
        doublings += 1;
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    for _ in 0..200 {
        if (profile.power(hi) - power).abs() <= tol_p * power {
            break;
        }
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if profile.power(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(profile.precoders(hi))
}

/// Channel-matched start `W_k ∝ H_k^H` with `‖W_k‖_F² = power`. Receive
/// dimensions beyond N_AP are dropped and missing ones zero-padded so the
/// block stays N_AP×N_AP.
pub fn matched_precoder(h: &CMat, power: f64) -> CMat {
    let n_ap = h.ncols();
    let mut w = CMat::zeros(n_ap, n_ap);
    let cols = h.nrows().min(n_ap);
    w.columns_mut(0, cols).copy_from(&h.rows(0, cols).adjoint());
    let norm = frobenius_sq(&w).sqrt();
    if norm > 0.0 {
        w *= C64::new(power.sqrt() / norm, 0.0);
    }
    w
}

/// Weighted-sum-rate WMMSE: `inner_iters` passes of
/// equalizer → weights → bisected precoder, warm-started from `init`.
///
/// A block that is exactly zero while its weight is positive is reseeded
/// with [`matched_precoder`]; from a zero block the WMMSE update can never
/// leave zero.
pub fn weighted_wmmse(
    eff: &EffectiveChannels,
    weights: RateWeights,
    power: f64,
    noise: f64,
    inner_iters: usize,
    init: &PrecoderPair,
) -> Result<PrecoderPair> {
    let mut pre = init.clone();
    for k in Receiver::BOTH {
        if weights.get(k) > 0.0 && frobenius_sq(pre.get(k)) == 0.0 {
            *pre.get_mut(k) = matched_precoder(eff.get(k), power / 2.0);
        }
    }
    for _ in 0..inner_iters.max(1) {
        let eq = Equalizers::mmse(eff, &pre, noise)?;
        let v = Receiver::BOTH
            .map(|k| -> Result<CMat> { Ok(mse_inverse(k, eff, &pre, noise)? * C64::new(weights.get(k), 0.0)) });
        let [v1, v2] = v;
        let mse_weights = MseWeights { v1: v1?, v2: v2? };
        pre = bisect_mu(eff, &mse_weights, &eq, power, DEFAULT_POWER_TOL)?;
    }
    Ok(pre)
}

/// Precoder step of the rate controller: water-filling on `H_1` for
/// λ ≤ 1, λ-weighted WMMSE otherwise.
pub fn modified_wmmse(
    eff: &EffectiveChannels,
    lambda: f64,
    power: f64,
    noise: f64,
    inner_iters: usize,
    init: &PrecoderPair,
) -> Result<PrecoderPair> {
    if lambda <= 1.0 {
        Ok(waterfilling(&eff.h1, power, noise).precoders)
    } else {
        weighted_wmmse(eff, RateWeights::from_lambda(lambda), power, noise, inner_iters, init)
    }
}

pub fn weighted_sum_rate(eff: &EffectiveChannels, pre: &PrecoderPair, weights: RateWeights, noise: f64) -> Result<f64> {
    let mut total = 0.0;
    for k in Receiver::BOTH {
        let w = weights.get(k);
        if w != 0.0 {
            total += w * individual_rate(k, eff, pre, noise)?;
        }
    }
    Ok(total)
}
