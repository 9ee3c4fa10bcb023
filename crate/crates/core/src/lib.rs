//! Spatial Bayesian-network engine for estimating, area by area, the
//! probability that people are affected during an industrial emergency.
//!
//! A single discrete network is instantiated once per area. Field reports,
//! GIS attribute layers and dispersion-model outputs become evidence on that
//! network; the pipeline turns a stream of observations into a timeline of
//! per-area beliefs.

pub mod bn;
pub mod bundle;
pub mod evidence;
pub mod export;
pub mod hazard;
pub mod observation;
pub mod pipeline;
pub mod spatial;
