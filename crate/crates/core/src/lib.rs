//! Simulation and optimization library for RIS-assisted survivable wireless
//! fronthaul in cell-free massive MIMO.
//!
//! A disconnected master AP backs up its failed cable by transmitting over
//! mmWave to two receivers at once: the CPU radio head (receiver 1, possibly
//! helped by an RIS) and the nearest master AP (receiver 2), whose cable must
//! carry the extra load as redundant capacity `C_Δ = R_2`. The crate provides
//!
//! - [`channel`]: three-state (outage/LOS/NLOS) stochastic mmWave channels,
//! - [`rate`]: per-receiver rates, MMSE quantities and the Lagrangian,
//! - [`precoder`]: water-filling and the λ-weighted WMMSE precoder,
//! - [`phase`]: Riemannian gradient descent over unit-modulus RIS phases,
//! - [`controller`]: the alternating rate-control solver with dual ascent,
//! - [`survivability`]: Monte Carlo scenarios and survivability curves.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod phase;
pub mod precoder;
pub mod rate;
pub mod survivability;

pub use error::{Error, Result};
