//! Parameter estimation for an Ornstein–Uhlenbeck signal observed through
//! thermal and multiplicative measurement noise.
//!
//! * [`gaussian`]: scaled Gaussian products, convolutions and the pairwise cross moment.
//! * [`model`]: simulation, noise injection, exact marginal likelihood and the joint density.
//! * [`em`]: expectation–maximization smoother for thermal noise.
//! * [`mcmc`]: no-U-turn Hamiltonian sampler over latents and parameters.
//! * [`spectra`]: first/second order spectra and fourth-order correlations.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the sampler, the spectra and the CLI use.

pub mod em;
pub mod error;
pub mod gaussian;
pub mod mcmc;
pub mod model;
pub mod scalar;
pub mod series;
pub mod spectra;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Gaussian = gaussian::Gaussian1<f64>;
pub type OuParams = model::OuParams<f64>;
pub type NoiseParams = model::NoiseParams<f64>;
pub type NoiseRatio = model::NoiseRatio<f64>;
pub type TimeSeries = series::TimeSeries<f64>;
pub type FitResult = em::FitResult<f64>;
pub type EmConfig = em::EmConfig<f64>;
pub type PosteriorMoments = em::PosteriorMoments<f64>;
pub type MessageSet = em::MessageSet<f64>;
