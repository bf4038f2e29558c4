//! Physical constants, Gaussian/SI conversions and per-cell material data.
//!
//! Everything inside the engine is SI. Oersted and Gauss only appear at the
//! configuration boundary, where they are converted with the functions below.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};
use crate::vec3::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("4*pi*Ms must be non-negative, got {0} G")]
    NegativeMagnetization(f64),
    #[error("material field `{field}` out of range: {value} ({reason})")]
    OutOfRange {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Vacuum constants and the electron gyromagnetic ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants<T> {
    /// F/m
    pub eps0: T,
    /// H/m
    pub mu0: T,
    /// m/s
    pub c0: T,
    /// C/kg, negative for electrons.
    pub gamma_e: T,
}

pub const C0: f64 = 299_792_458.0;
pub const MU0: f64 = 1.256_637_062_12e-6;
pub const GAMMA_E: f64 = -1.759e11;

impl<T: Real> Default for PhysicalConstants<T> {
    fn default() -> Self {
        let eps0 = 1.0 / (MU0 * C0 * C0);
        Self {
            eps0: lit(eps0),
            mu0: lit(MU0),
            c0: lit(C0),
            gamma_e: lit(GAMMA_E),
        }
    }
}

impl<T: Real> PhysicalConstants<T> {
    /// `mu0 * |gamma|` in m/(A s): the angular precession rate per unit field.
    pub fn mu0_gamma_abs(&self) -> T {
        self.mu0 * self.gamma_e.abs()
    }
}

/// Oersted to A/m.
pub fn oersted_to_si<T: Real>(h_oe: T) -> T {
    h_oe * lit(1000.0 / (4.0 * PI))
}

/// A/m to Oersted.
pub fn si_to_oersted<T: Real>(h: T) -> T {
    h * lit(4.0 * PI / 1000.0)
}

/// Converts a quoted `4*pi*Ms` in Gauss to `Ms` in A/m.
///
/// `4 pi Ms [G] = 4 pi Ms [emu/cm^3]` and `1 emu/cm^3 = 1000 A/m`, so the
/// conversion factor is the same `1000 / (4 pi)` as for Oersted. This is the
/// convention that reproduces both the 15.027 GHz (2050 Oe, 12 kG) and the
/// 14.17 GHz (1800 Oe, 9.7e5 A/m) Kittel points.
pub fn gauss_4pi_ms_to_si<T: Real>(b_gauss: T) -> Result<T, MaterialError> {
    if b_gauss < T::zero() {
        return Err(MaterialError::NegativeMagnetization(b_gauss.to_f64_lossy()));
    }
    Ok(b_gauss * lit(1000.0 / (4.0 * PI)))
}

/// Material description of one Yee cell, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialCell<T> {
    /// S/m
    pub sigma: T,
    pub eps_r: T,
    /// A/m; zero marks a non-magnetic cell.
    pub ms: T,
    pub alpha: T,
    /// Static bias, A/m.
    pub hbias: Vec3<T>,
}

impl<T: Real> MaterialCell<T> {
    pub fn vacuum() -> Self {
        Self {
            sigma: T::zero(),
            eps_r: T::one(),
            ms: T::zero(),
            alpha: T::zero(),
            hbias: Vec3::zeros(),
        }
    }

    pub fn dielectric(eps_r: T, sigma: T) -> Self {
        Self {
            eps_r,
            sigma,
            ..Self::vacuum()
        }
    }

    pub fn magnet(ms: T, alpha: T, eps_r: T, sigma: T) -> Self {
        Self {
            sigma,
            eps_r,
            ms,
            alpha,
            hbias: Vec3::zeros(),
        }
    }

    pub fn is_magnetic(&self) -> bool {
        self.ms > T::zero()
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |field, value: T, reason| MaterialError::OutOfRange {
            field,
            value: value.to_f64_lossy(),
            reason,
        };
        if !(self.sigma >= T::zero()) {
            return Err(bad("sigma", self.sigma, "must be >= 0"));
        }
        if !(self.eps_r >= T::one()) {
            return Err(bad("eps_r", self.eps_r, "must be >= 1"));
        }
        if !(self.ms >= T::zero()) {
            return Err(bad("ms", self.ms, "must be >= 0"));
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(bad("alpha", self.alpha, "must lie in [0, 1]"));
        }
        Ok(())
    }
}
