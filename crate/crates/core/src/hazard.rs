//! Probit dose-response: steady-state gas concentration and exposure time to
//! a probability that the dose is critical.
//!
//! With a constant concentration `C` (ppm) over `t` minutes the toxic dose is
//! `Cⁿ·t`, the probit value is `Y = a + b·ln(dose)` and the probability of
//! criticality is `Φ(Y − 5)`, the continuous function that probit tables
//! tabulate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HazardError {
    #[error("dose must be positive, got {0}")]
    NonPositiveDose(f64),

    #[error("exposure needs positive concentration and duration, got {concentration} ppm for {duration} min")]
    InvalidExposure { concentration: f64, duration: f64 },

    #[error("probit parameters for `{substance}` need b > 0 and n > 0")]
    InvalidParams { substance: String },

    #[error("unknown substance `{0}`")]
    UnknownSubstance(String),
}

pub type Result<T> = std::result::Result<T, HazardError>;

/// Fitted probit constants for one substance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbitParams {
    pub substance: String,
    pub a: f64,
    pub b: f64,
    pub n: f64,
}

impl ProbitParams {
    pub fn new(substance: impl Into<String>, a: f64, b: f64, n: f64) -> Result<Self> {
        let substance = substance.into();
        if !(b > 0.0 && n > 0.0 && a.is_finite() && b.is_finite() && n.is_finite()) {
            return Err(HazardError::InvalidParams { substance });
        }
        Ok(Self { substance, a, b, n })
    }

    pub fn chlorine() -> Self {
        Self {
            substance: "chlorine".into(),
            a: -8.29,
            b: 0.92,
            n: 2.0,
        }
    }
}

/// Contents of a substance parameter file:
/// `{"chlorine": {"a": -8.29, "b": 0.92, "n": 2}}`.
#[derive(Debug, Clone, Default)]
pub struct SubstanceTable {
    params: BTreeMap<String, ProbitParams>,
}

impl SubstanceTable {
    pub fn from_json(text: &str) -> std::result::Result<Self, SubstanceFileError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            a: f64,
            b: f64,
            n: f64,
        }
        let raw: BTreeMap<String, Raw> = serde_json::from_str(text)?;
        let params = raw
            .into_iter()
            .map(|(name, r)| Ok((name.clone(), ProbitParams::new(name, r.a, r.b, r.n)?)))
            .collect::<Result<_>>()?;
        Ok(Self { params })
    }

    pub fn get(&self, substance: &str) -> Result<&ProbitParams> {
        self.params
            .get(substance)
            .ok_or_else(|| HazardError::UnknownSubstance(substance.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

#[derive(Debug, Error)]
pub enum SubstanceFileError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Params(#[from] HazardError),
}

/// Constant concentration held for a duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    /// ppm
    pub concentration: f64,
    /// minutes
    pub duration: f64,
}

impl Exposure {
    pub fn new(concentration: f64, duration: f64) -> Result<Self> {
        if !(concentration > 0.0
            && duration > 0.0
            && concentration.is_finite()
            && duration.is_finite())
        {
            return Err(HazardError::InvalidExposure {
                concentration,
                duration,
            });
        }
        Ok(Self {
            concentration,
            duration,
        })
    }
}

/// `Cⁿ·t` in ppmⁿ·min.
pub fn dose(exposure: Exposure, n: f64) -> f64 {
    exposure.concentration.powf(n) * exposure.duration
}

pub fn probit_value(dose: f64, params: &ProbitParams) -> Result<f64> {
    if dose.is_nan() || dose <= 0.0 {
        return Err(HazardError::NonPositiveDose(dose));
    }
    Ok(params.a + params.b * dose.ln())
}

/// `Φ(Y − 5)`.
pub fn probit_to_probability(y: f64) -> f64 {
    0.5 * erfc(-(y - 5.0) / std::f64::consts::SQRT_2)
}

/// Soft-evidence payload `(q, 1 − q)` over `(True, False)` for the node that
/// tracks a critical dose around an area.
pub fn exposure_to_soft_evidence(exposure: Exposure, params: &ProbitParams) -> Result<[f64; 2]> {
    let y = probit_value(dose(exposure, params.n), params)?;
    let q = probit_to_probability(y);
    Ok([q, 1.0 - q])
}
