//! Achievable rates, MMSE quantities and the rate-control Lagrangian.
//!
//! Rates are in bits/s/Hz throughout; multiply by the bandwidth only when
//! reporting (see [`RateReport`]). Every function takes the per-antenna
//! noise power explicitly: `B * N0` for physical channels, `1` for
//! noise-normalized ones.

use std::f64::consts::LN_2;

use crate::channel::ChannelRealization;
use crate::linalg::{cmul, gram_plus_identity, hermitian_part, CMat, Hpd, C64, ONE};
use crate::precoder::PrecoderPair;
use crate::{Error, Result};

/// Receiver index: `Cpu` is k = 1 (primary backup link), `NearestAp` is
/// k = 2 (secondary backup link).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    Cpu,
    NearestAp,
}

impl Receiver {
    pub const BOTH: [Receiver; 2] = [Receiver::Cpu, Receiver::NearestAp];

    pub fn other(self) -> Receiver {
        match self {
            Receiver::Cpu => Receiver::NearestAp,
            Receiver::NearestAp => Receiver::Cpu,
        }
    }
}

/// `H_k = H_{s,k} + H_{r,k} diag(phi) H_t` for both receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub h1: CMat,
    pub h2: CMat,
}

impl EffectiveChannels {
    pub fn get(&self, k: Receiver) -> &CMat {
        match k {
            Receiver::Cpu => &self.h1,
            Receiver::NearestAp => &self.h2,
        }
    }

    pub fn n_rx(&self, k: Receiver) -> usize {
        self.get(k).nrows()
    }
}

pub(crate) const UNIT_MODULUS_TOL: f64 = 1e-12;

/// Effective channels for a unit-modulus phase vector.
pub fn effective_channel(real: &ChannelRealization, phi: &[C64]) -> Result<EffectiveChannels> {
    if let Some((m, z)) = phi
        .iter()
        .enumerate()
        .find(|(_, z)| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL)
    {
        return Err(Error::invalid(
            format!("phi[{m}]"),
            format!("phase entries must have unit modulus, |phi| = {}", z.norm()),
        ));
    }
    effective_channel_linear(real, phi)
}

/// Same map as [`effective_channel`] without the modulus check; linear in `v`.
pub fn effective_channel_linear(real: &ChannelRealization, v: &[C64]) -> Result<EffectiveChannels> {
    real.validate_dims()?;
    if v.len() != real.m_ris() {
        return Err(Error::DimensionMismatch {
            context: "effective_channel phase vector",
            expected: real.m_ris().to_string(),
            actual: v.len().to_string(),
        });
    }
    let mut scaled_t = real.h_t.clone();
    for (mut row, &p) in scaled_t.row_iter_mut().zip(v) {
        row *= p;
    }
    let mut h1 = real.h_s1.clone();
    h1.gemm(ONE, &real.h_r1, &scaled_t, ONE);
    let mut h2 = real.h_s2.clone();
    h2.gemm(ONE, &real.h_r2, &scaled_t, ONE);
    Ok(EffectiveChannels { h1, h2 })
}

/// `(H_k W_k, H_k W_i)` with `i` the other receiver.
pub(crate) fn received_factors(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair) -> (CMat, CMat) {
    let h = eff.get(k);
    (cmul(h, pre.get(k)), cmul(h, pre.get(k.other())))
}

/// `I + (H_k W_k)^H Q_k^{-1} (H_k W_k)`, i.e. the inverse MSE matrix.
pub fn mse_inverse(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<CMat> {
    let (own, cross) = received_factors(k, eff, pre);
    let q = Hpd::new(
        &gram_plus_identity(&[&cross], noise, eff.n_rx(k)),
        "interference-plus-noise covariance",
    )?;
    let f = q.whiten(&own);
    let n = own.ncols();
    let m = CMat::identity(n, n) + cmul(&f.adjoint(), &f);
    Ok(hermitian_part(&m))
}

/// Rate of receiver `k` in bits/s/Hz.
pub fn individual_rate(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<f64> {
    let m = mse_inverse(k, eff, pre, noise)?;
    let rate = Hpd::new(&m, "inverse MSE matrix")?.ln_det() / LN_2;
    if !rate.is_finite() {
        return Err(Error::NonFinite {
            context: "individual_rate",
            detail: format!("receiver {k:?}: log-determinant evaluated to {rate}"),
        });
    }
    Ok(rate.max(0.0))
}

pub fn rates(eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<(f64, f64)> {
    Ok((
        individual_rate(Receiver::Cpu, eff, pre, noise)?,
        individual_rate(Receiver::NearestAp, eff, pre, noise)?,
    ))
}

/// Posterior MSE matrix `E_k = (I + W_k^H H_k^H Q_k^{-1} H_k W_k)^{-1}`.
pub fn mse_matrix(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<CMat> {
    let m = mse_inverse(k, eff, pre, noise)?;
    Ok(Hpd::new(&m, "inverse MSE matrix")?.inverse())
}

/// MMSE receive filter `U_k = W_k^H H_k^H (H_k W W^H H_k^H + noise I)^{-1}`.
pub fn mmse_equalizer(k: Receiver, eff: &EffectiveChannels, pre: &PrecoderPair, noise: f64) -> Result<CMat> {
    let (own, cross) = received_factors(k, eff, pre);
    let x = Hpd::new(
        &gram_plus_identity(&[&own, &cross], noise, eff.n_rx(k)),
        "received signal covariance",
    )?;
    Ok(x.solve(&own).adjoint())
}

/// `R_2 + lambda (c0 - R_1 - R_2)`, all rates in one unit.
pub fn lagrangian(r1: f64, r2: f64, lambda: f64, c0: f64) -> f64 {
    r2 + lambda * (c0 - r1 - r2)
}

pub fn lagrangian_at(eff: &EffectiveChannels, pre: &PrecoderPair, lambda: f64, c0: f64, noise: f64) -> Result<f64> {
    let (r1, r2) = rates(eff, pre, noise)?;
    Ok(lagrangian(r1, r2, lambda, c0))
}

/// Rates of one solution reported in bits/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub r1: f64,
    pub r2: f64,
    pub sum: f64,
    /// Redundant capacity needed on the neighbour's cable, `C_Δ = R_2`.
    pub c_delta: f64,
    pub feasible: bool,
}

impl RateReport {
    /// `r1`, `r2` and `c0` in bits/s/Hz; the report is scaled by `bandwidth_hz`.
    pub fn from_spectral(r1: f64, r2: f64, c0: f64, tol_rate: f64, bandwidth_hz: f64) -> Self {
        let (r1, r2) = (r1.max(0.0), r2.max(0.0));
        RateReport {
            r1: r1 * bandwidth_hz,
            r2: r2 * bandwidth_hz,
            sum: (r1 + r2) * bandwidth_hz,
            c_delta: r2 * bandwidth_hz,
            feasible: r1 + r2 >= c0 * (1.0 - tol_rate),
        }
    }
}
