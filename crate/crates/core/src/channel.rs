//! Stochastic mmWave channel model for the backup fronthaul links.
//!
//! Every direct link falls into one of three large-scale states (outage,
//! LOS, NLOS) with distance-dependent probabilities. LOS links carry Rician
//! fading whose deterministic part is built from array responses computed
//! from the 2D deployment geometry, NLOS links carry i.i.d. Rayleigh fading
//! and outage links are exactly zero. The RIS is placed to keep LOS towards
//! every node, so the three RIS-side links are always Rician.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, complex_gaussian, CMat, C64};
use crate::{Error, Result};

/// Point in the deployment plane (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(self, other: Point) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// y-component of the unit vector pointing from `self` towards `other`.
    fn direction_y(self, other: Point) -> f64 {
        (other.y - self.y) / self.distance(other)
    }
}

/// Deployment geometry. The disconnected master AP sits at the origin, the
/// nearest master AP at `(0, d_ap)`, the CPU radio head at `(d_cpu, 0)` and
/// the RIS at `(d_cpu, d_ris_cpu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub d_ap: f64,
    pub d_cpu: f64,
    pub d_ris_cpu: f64,
}

impl Geometry {
    pub fn new(d_ap: f64, d_cpu: f64, d_ris_cpu: f64) -> Result<Self> {
        let g = Geometry { d_ap, d_cpu, d_ris_cpu };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d_ap", self.d_ap),
            ("d_cpu", self.d_cpu),
            ("d_ris_cpu", self.d_ris_cpu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn disconnected_ap(&self) -> Point {
        Point { x: 0.0, y: 0.0 }
    }

    pub fn nearest_ap(&self) -> Point {
        Point { x: 0.0, y: self.d_ap }
    }

    pub fn cpu(&self) -> Point {
        Point { x: self.d_cpu, y: 0.0 }
    }

    pub fn ris(&self) -> Point {
        Point {
            x: self.d_cpu,
            y: self.d_ris_cpu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbLine {
    /// Intercept (dB).
    pub a: f64,
    /// Slope, in decades of distance per 10 dB.
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateCoeffs {
    /// 1/m.
    pub a_out: f64,
    pub b_out: f64,
    /// 1/m.
    pub a_los_decay: f64,
}

/// Large-scale pathloss and state-probability coefficients, loaded from the
/// coefficient file (see `config/pathloss_28ghz.toml`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossCoeffs {
    /// Reference distance (m).
    pub d0: f64,
    pub los: DbLine,
    pub nlos: DbLine,
    pub state: StateCoeffs,
}

impl PathlossCoeffs {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: PathlossCoeffs = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("los.b", self.los.b),
            ("nlos.b", self.nlos.b),
            ("state.a_out", self.state.a_out),
            ("d0", self.d0),
        ];
        for (field, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [
            ("los.a", self.los.a),
            ("nlos.a", self.nlos.a),
            ("state.b_out", self.state.b_out),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(field, "must be finite"));
            }
        }
        if !(self.state.a_los_decay.is_finite() && self.state.a_los_decay >= 0.0) {
            return Err(Error::invalid("state.a_los_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationState {
    Outage,
    Los,
    Nlos,
}

impl fmt::Display for PropagationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PropagationState::Outage => "outage",
            PropagationState::Los => "los",
            PropagationState::Nlos => "nlos",
        })
    }
}

/// Static radio parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub bandwidth_hz: f64,
    /// Noise power spectral density N0 (W/Hz).
    pub noise_psd: f64,
    pub power_budget_w: f64,
    pub n_ap: usize,
    pub n_cpu: usize,
    pub m_ris: usize,
    /// Linear Rician factor of LOS links.
    pub rician_kappa: f64,
    /// Build LOS components from geometric array responses (ULAs at the
    /// APs and CPU, square UPA at the RIS). When off, the LOS component is
    /// the all-ones matrix.
    pub geometric_steering: bool,
}

/// Thermal noise floor used by the defaults (dBm/Hz).
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Receiver noise figure used by the defaults (dB).
pub const DEFAULT_NOISE_FIGURE_DB: f64 = 7.0;

impl Default for SystemParams {
    /// 28 GHz fronthaul: 200 MHz, 10 W, 32 antennas at both ends, a
    /// 1024-element RIS and κ = 10.
    fn default() -> Self {
        SystemParams {
            bandwidth_hz: 200e6,
            noise_psd: Self::noise_psd_from_db(THERMAL_NOISE_DBM_PER_HZ, DEFAULT_NOISE_FIGURE_DB),
            power_budget_w: 10.0,
            n_ap: 32,
            n_cpu: 32,
            m_ris: 1024,
            rician_kappa: 10.0,
            geometric_steering: true,
        }
    }
}

impl SystemParams {
    /// N0 in W/Hz from a thermal floor in dBm/Hz and a receiver noise figure.
    pub fn noise_psd_from_db(thermal_dbm_per_hz: f64, noise_figure_db: f64) -> f64 {
        10f64.powf((thermal_dbm_per_hz + noise_figure_db - 30.0) / 10.0)
    }

    /// Receiver noise power `B * N0` (W).
    pub fn noise_power(&self) -> f64 {
        self.bandwidth_hz * self.noise_psd
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_psd", self.noise_psd),
            ("power_budget_w", self.power_budget_w),
            ("rician_kappa", self.rician_kappa),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("n_ap", self.n_ap), ("n_cpu", self.n_cpu), ("m_ris", self.m_ris)] {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if self.geometric_steering && square_side(self.m_ris).is_none() {
            return Err(Error::invalid(
                "m_ris",
                format!(
                    "{} elements admit no square planar layout; disable geometric_steering or use a square count",
                    self.m_ris
                ),
            ));
        }
        Ok(())
    }
}

pub(crate) fn square_side(m: usize) -> Option<usize> {
    let side = (m as f64).sqrt().round() as usize;
    (side * side == m).then_some(side)
}

/// Linear power gain of the large-scale attenuation at distance `d`.
pub fn largescale_gain(d: f64, cond: PropagationState, coeffs: &PathlossCoeffs) -> Result<f64> {
    let line = match cond {
        PropagationState::Outage => return Err(Error::Outage),
        PropagationState::Los => coeffs.los,
        PropagationState::Nlos => coeffs.nlos,
    };
    if !(d > 0.0) {
        return Err(Error::invalid("d", format!("distance must be positive, got {d}")));
    }
    let rho_db = -line.a - 10.0 * line.b * (d / coeffs.d0).log10();
    Ok(10f64.powf(rho_db / 10.0))
}

/// Probabilities of the outage, LOS and NLOS states at distance `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePmf {
    pub p_out: f64,
    pub p_los: f64,
    pub p_nlos: f64,
}

impl StatePmf {
    pub fn probability(&self, s: PropagationState) -> f64 {
        match s {
            PropagationState::Outage => self.p_out,
            PropagationState::Los => self.p_los,
            PropagationState::Nlos => self.p_nlos,
        }
    }
}

pub fn state_pmf(d: f64, coeffs: &PathlossCoeffs) -> StatePmf {
    let st = &coeffs.state;
    let p_out = (1.0 - (-st.a_out * d + st.b_out).exp()).max(0.0);
    let p_los = (1.0 - p_out) * (-st.a_los_decay * d).exp();
    let p_nlos = (1.0 - p_los - p_out).max(0.0);
    StatePmf { p_out, p_los, p_nlos }
}

/// Inverse-CDF draw of the propagation state; consumes one uniform.
pub fn sample_state<R: Rng + ?Sized>(d: f64, coeffs: &PathlossCoeffs, rng: &mut R) -> PropagationState {
    let pmf = state_pmf(d, coeffs);
    let u: f64 = rng.random();
    if u < pmf.p_out {
        PropagationState::Outage
    } else if u < pmf.p_out + pmf.p_los {
        PropagationState::Los
    } else {
        PropagationState::Nlos
    }
}

/// Response of a half-wavelength ULA laid along the y-axis towards a
/// direction with y-component `dir_y`.
pub fn ula_response(n: usize, dir_y: f64) -> Vec<C64> {
    (0..n)
        .map(|i| C64::from_polar(1.0, std::f64::consts::PI * i as f64 * dir_y))
        .collect()
}

/// Response of a square half-wavelength UPA in the vertical plane with its
/// horizontal axis along y. Heights are neglected, so only the horizontal
/// index contributes phase.
pub fn upa_response(m: usize, dir_y: f64) -> Result<Vec<C64>> {
    let side = square_side(m).ok_or_else(|| Error::invalid("m_ris", format!("{m} is not a perfect square")))?;
    let row = ula_response(side, dir_y);
    Ok((0..m).map(|idx| row[idx % side]).collect())
}

/// Small-scale fading matrix for a non-outage link.
///
/// `steering` is `(a_rx, a_tx)`; without it the LOS component is the
/// all-ones matrix. Every entry has unit average power in both states.
pub fn smallscale_fading<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    cond: PropagationState,
    kappa: f64,
    steering: Option<(&[C64], &[C64])>,
    rng: &mut R,
) -> Result<CMat> {
    let scatter = complex_gaussian(rows, cols, rng);
    match cond {
        PropagationState::Outage => Err(Error::Outage),
        PropagationState::Nlos => Ok(scatter),
        PropagationState::Los => {
            if let Some((a_rx, a_tx)) = steering {
                if a_rx.len() != rows || a_tx.len() != cols {
                    return Err(Error::DimensionMismatch {
                        context: "smallscale_fading steering",
                        expected: format!("{rows}x{cols}"),
                        actual: format!("{}x{}", a_rx.len(), a_tx.len()),
                    });
                }
            }
            let (los_w, nlos_w) = rician_weights(kappa);
            let los = CMat::from_fn(rows, cols, |i, j| match steering {
                Some((a_rx, a_tx)) => a_rx[i] * a_tx[j].conj(),
                None => C64::new(1.0, 0.0),
            });
            Ok(los * C64::new(los_w, 0.0) + scatter * C64::new(nlos_w, 0.0))
        }
    }
}

fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
    }
}

/// Whether the RIS-side links exist in a realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisPresence {
    Deployed,
    Absent,
}

/// One sampled draw of all five channel matrices.
///
/// Direct links: `h_s1` (CPU ← AP, N_CPU×N_AP) and `h_s2` (nearest AP ← AP,
/// N_AP×N_AP). RIS links: `h_t` (RIS ← AP, M×N_AP), `h_r1` (CPU ← RIS,
/// N_CPU×M) and `h_r2` (nearest AP ← RIS, N_AP×M).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_s1: CMat,
    pub h_s2: CMat,
    pub h_t: CMat,
    pub h_r1: CMat,
    pub h_r2: CMat,
    pub state_s1: PropagationState,
    pub state_s2: PropagationState,
    pub seed_id: u64,
}

impl ChannelRealization {
    pub fn n_ap(&self) -> usize {
        self.h_s2.ncols()
    }

    pub fn n_cpu(&self) -> usize {
        self.h_s1.nrows()
    }

    pub fn m_ris(&self) -> usize {
        self.h_t.nrows()
    }

    pub fn remove_ris(&mut self) {
        self.h_t.fill(C64::new(0.0, 0.0));
        self.h_r1.fill(C64::new(0.0, 0.0));
        self.h_r2.fill(C64::new(0.0, 0.0));
    }

    /// True when the cascaded term vanishes for every phase vector.
    pub fn cascade_is_zero(&self) -> bool {
        use crate::linalg::is_zero;
        is_zero(&self.h_t) || (is_zero(&self.h_r1) && is_zero(&self.h_r2))
    }

    /// Copy with every receiver-side matrix divided by `sqrt(noise_power)`,
    /// so rates can be evaluated with unit noise.
    pub fn noise_normalized(&self, noise_power: f64) -> ChannelRealization {
        let s = C64::new(1.0 / noise_power.sqrt(), 0.0);
        ChannelRealization {
            h_s1: &self.h_s1 * s,
            h_s2: &self.h_s2 * s,
            h_t: self.h_t.clone(),
            h_r1: &self.h_r1 * s,
            h_r2: &self.h_r2 * s,
            ..self.clone()
        }
    }

    pub fn validate_dims(&self) -> Result<()> {
        let (n_cpu, n_ap, m) = (self.n_cpu(), self.n_ap(), self.m_ris());
        let expect = [
            ("h_s1", &self.h_s1, n_cpu, n_ap),
            ("h_s2", &self.h_s2, n_ap, n_ap),
            ("h_t", &self.h_t, m, n_ap),
            ("h_r1", &self.h_r1, n_cpu, m),
            ("h_r2", &self.h_r2, n_ap, m),
        ];
        for (name, mat, r, c) in expect {
            if mat.shape() != (r, c) {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: format!("{r}x{c}"),
                    actual: format!("{}x{}", mat.nrows(), mat.ncols()),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.h_s1, &self.h_s2, &self.h_t, &self.h_r1, &self.h_r2]
            .into_iter()
            .all(all_finite)
    }
}

/// Independent deterministic stream for realization `index` under `master_seed`.
pub fn realization_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

enum ArrayKind {
    Ula(usize),
    Upa(usize),
}

impl ArrayKind {
    fn size(&self) -> usize {
        match *self {
            ArrayKind::Ula(n) | ArrayKind::Upa(n) => n,
        }
    }

    fn response(&self, dir_y: f64) -> Result<Vec<C64>> {
        match *self {
            ArrayKind::Ula(n) => Ok(ula_response(n, dir_y)),
            ArrayKind::Upa(m) => upa_response(m, dir_y),
        }
    }
}

struct LinkSpec {
    tx: Point,
    tx_array: ArrayKind,
    rx: Point,
    rx_array: ArrayKind,
}

/// Draws one link. The Gaussian scatter matrix is drawn in every state so a
/// realization always consumes the same amount of the stream.
fn draw_link<R: Rng + ?Sized>(
    link: &LinkSpec,
    state: PropagationState,
    params: &SystemParams,
    coeffs: &PathlossCoeffs,
    rng: &mut R,
) -> Result<CMat> {
    let (rows, cols) = (link.rx_array.size(), link.tx_array.size());
    if state == PropagationState::Outage {
        let _ = complex_gaussian(rows, cols, rng);
        return Ok(CMat::zeros(rows, cols));
    }
    let steering = if params.geometric_steering {
        let a_rx = link.rx_array.response(link.rx.direction_y(link.tx))?;
        let a_tx = link.tx_array.response(link.tx.direction_y(link.rx))?;
        Some((a_rx, a_tx))
    } else {
        None
    };
    let beta = smallscale_fading(
        rows,
        cols,
        state,
        params.rician_kappa,
        steering.as_ref().map(|(r, t)| (r.as_slice(), t.as_slice())),
        rng,
    )?;
    let gain = largescale_gain(link.tx.distance(link.rx), state, coeffs)?;
    Ok(beta * C64::new(gain.sqrt(), 0.0))
}

/// Samples the direct-link states and all five channel matrices.
///
/// Stream layout: state of `h_s1`, state of `h_s2`, then fading for
/// `h_s1, h_s2, h_t, h_r1, h_r2`. With [`RisPresence::Absent`] the RIS links
/// are still drawn and then zeroed, so draws stay paired across RIS modes.
pub fn draw_realization<R: Rng + ?Sized>(
    geom: &Geometry,
    params: &SystemParams,
    coeffs: &PathlossCoeffs,
    ris: RisPresence,
    rng: &mut R,
) -> Result<ChannelRealization> {
    geom.validate()?;
    params.validate()?;
    let ap = geom.disconnected_ap();
    let state_s1 = sample_state(ap.distance(geom.cpu()), coeffs, rng);
    let state_s2 = sample_state(ap.distance(geom.nearest_ap()), coeffs, rng);

    let link = |tx: Point, tx_array: ArrayKind, rx: Point, rx_array: ArrayKind| LinkSpec {
        tx,
        tx_array,
        rx,
        rx_array,
    };
    let los = PropagationState::Los;
    let h_s1 = draw_link(
        &link(
            ap,
            ArrayKind::Ula(params.n_ap),
            geom.cpu(),
            ArrayKind::Ula(params.n_cpu),
        ),
        state_s1,
        params,
        coeffs,
        rng,
    )?;
    let h_s2 = draw_link(
        &link(
            ap,
            ArrayKind::Ula(params.n_ap),
            geom.nearest_ap(),
            ArrayKind::Ula(params.n_ap),
        ),
        state_s2,
        params,
        coeffs,
        rng,
    )?;
    let h_t = draw_link(
        &link(
            ap,
            ArrayKind::Ula(params.n_ap),
            geom.ris(),
            ArrayKind::Upa(params.m_ris),
        ),
        los,
        params,
        coeffs,
        rng,
    )?;
    let h_r1 = draw_link(
        &link(
            geom.ris(),
            ArrayKind::Upa(params.m_ris),
            geom.cpu(),
            ArrayKind::Ula(params.n_cpu),
        ),
        los,
        params,
        coeffs,
        rng,
    )?;
    let h_r2 = draw_link(
        &link(
            geom.ris(),
            ArrayKind::Upa(params.m_ris),
            geom.nearest_ap(),
            ArrayKind::Ula(params.n_ap),
        ),
        los,
        params,
        coeffs,
        rng,
    )?;

    let mut real = ChannelRealization {
        h_s1,
        h_s2,
        h_t,
        h_r1,
        h_r2,
        state_s1,
        state_s2,
        seed_id: 0,
    };
    if ris == RisPresence::Absent {
        real.remove_ris();
    }
    if !real.is_finite() {
        return Err(Error::NonFinite {
            context: "draw_realization",
            detail: "channel matrix contains NaN or Inf".into(),
        });
    }
    Ok(real)
}
