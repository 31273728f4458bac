//! Diffusion-based CDR loop design with energy-guided preference alignment.
//!
//! The geometry, noise schedule, energy and evaluation layers are generic
//! over the float type; the learning stack (tape, denoiser, diffusion,
//! alignment) runs in `f64`.

pub mod align;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tape;

pub use error::{Error, Result};
pub use scalar::{Real, Vec3};

pub type Rotation = geom::Rotation<f64>;
pub type Rotation32 = geom::Rotation<f32>;
pub type NoiseSchedule = schedule::NoiseSchedule<f64>;
pub type NoiseSchedule32 = schedule::NoiseSchedule<f32>;
pub type EnergyReport = energy::EnergyReport<f64>;
pub type EnergyReport32 = energy::EnergyReport<f32>;
pub type Weights = energy::Weights<f64>;
