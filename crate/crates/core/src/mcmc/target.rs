//! Joint posterior over the latent path and the log-parameters.
//!
//! Coordinates are `[u_1 .. u_N, ln A, ln tau, (ln sigma_n), (ln sigma_m)]`;
//! which noise coordinates exist depends on the [`NoiseMode`]. The latent
//! block `u` is either the path itself or its standardized residual
//! `(y - x) / sigma_n`, see [`LatentCoords`]. Priors are
//! uniform on each parameter inside its box, so in log coordinates every free
//! parameter contributes its log-Jacobian `ln theta`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{joint_logdensity_into, joint_logdensity_residual_into};
use crate::{NoiseParams, NoiseRatio, OuParams, TimeSeries};

/// Differentiable log density used by the sampler.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(q)` and writes its gradient into `grad`. Points outside
    /// the support give `-inf`.
    fn logp_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    AdditiveOnly,
    MultiplicativeOnly,
    MixedFree,
    MixedKnownRatio,
}

impl NoiseMode {
    pub fn has_sigma_n(self) -> bool {
        !matches!(self, NoiseMode::MultiplicativeOnly)
    }

    pub fn has_free_sigma_m(self) -> bool {
        matches!(self, NoiseMode::MultiplicativeOnly | NoiseMode::MixedFree)
    }
}

/// How the latent path is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentCoords {
    /// `u = x`.
    Centered,
    /// `x = y - sigma_n u`. Mixes much better in `sigma_n` when the path is
    /// tightly pinned by the data.
    NoiseScaled,
}

impl LatentCoords {
    /// Noise-scaled whenever there is a thermal noise scale to scale by.
    pub fn default_for(mode: NoiseMode) -> Self {
        if mode.has_sigma_n() {
            LatentCoords::NoiseScaled
        } else {
            LatentCoords::Centered
        }
    }
}

/// Half-open interval `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid(format!("prior bounds must satisfy 0 <= lo < hi < inf, got ({lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v <= self.hi
    }
}

/// Uniform prior boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    #[serde(rename = "A")]
    pub amplitude: Bounds,
    pub tau: Bounds,
    pub sigma_n: Bounds,
    pub sigma_m: Bounds,
}

impl PriorBox {
    /// `A in (0, 25 var y]`, `tau in (dt/100, 100 N dt]`, `sigma_n in (0, 5 sd y]`,
    /// `sigma_m in (0, 5]`.
    pub fn default_for(y: &TimeSeries) -> Result<Self> {
        y.require_len(2)?;
        let var = y.variance();
        if !(var > 0.0) {
            return Err(invalid("series has zero variance"));
        }
        Ok(Self {
            amplitude: Bounds::new(0.0, 25.0 * var)?,
            tau: Bounds::new(y.dt / 100.0, 100.0 * y.len() as f64 * y.dt)?,
            sigma_n: Bounds::new(0.0, 5.0 * var.sqrt())?,
            sigma_m: Bounds::new(0.0, 5.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub noise_mode: NoiseMode,
    pub known_ratio: Option<NoiseRatio>,
    /// `None` uses [`PriorBox::default_for`].
    pub priors: Option<PriorBox>,
    /// `None` uses [`LatentCoords::default_for`].
    #[serde(default)]
    pub latents: Option<LatentCoords>,
}

impl ModelSpec {
    pub fn new(noise_mode: NoiseMode) -> Self {
        Self { noise_mode, known_ratio: None, priors: None, latents: None }
    }

    pub fn known_ratio(rho: NoiseRatio) -> Self {
        Self { noise_mode: NoiseMode::MixedKnownRatio, known_ratio: Some(rho), priors: None, latents: None }
    }

    pub fn with_latents(mut self, latents: LatentCoords) -> Self {
        self.latents = Some(latents);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents == Some(LatentCoords::NoiseScaled) && !self.noise_mode.has_sigma_n() {
            return Err(invalid("noise-scaled latents need thermal noise"));
        }
        match (self.noise_mode, self.known_ratio) {
            (NoiseMode::MixedKnownRatio, None) => Err(invalid("mixed-known-ratio needs a known ratio")),
            (NoiseMode::MixedKnownRatio, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(invalid("a known ratio only applies to mixed-known-ratio")),
        }
    }
}

/// Parameters at one point of the chain, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub params: OuParams,
    pub noise: NoiseParams,
}

#[derive(Debug, Clone)]
pub struct OuTarget {
    y: Vec<f64>,
    dt: f64,
    mode: NoiseMode,
    rho: f64,
    priors: PriorBox,
    latents: LatentCoords,
}

/// Builds the posterior for `y` under `spec`.
pub fn build_target(y: &TimeSeries, spec: &ModelSpec) -> Result<OuTarget> {
    spec.validate()?;
    y.require_len(2)?;
    let priors = match spec.priors {
        Some(p) => p,
        None => PriorBox::default_for(y)?,
    };
    Ok(OuTarget {
        y: y.values.clone(),
        dt: y.dt,
        mode: spec.noise_mode,
        rho: spec.known_ratio.map_or(0.0, |r| r.get()),
        priors,
        latents: spec.latents.unwrap_or(LatentCoords::default_for(spec.noise_mode)),
    })
}

impl OuTarget {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn priors(&self) -> &PriorBox {
        &self.priors
    }

    pub fn latent_coords(&self) -> LatentCoords {
        self.latents
    }

    /// Number of parameter coordinates after the latents.
    pub fn n_params(&self) -> usize {
        2 + usize::from(self.mode.has_sigma_n()) + usize::from(self.mode.has_free_sigma_m())
    }

    /// Names of the reported parameters (always all four; derived ones included).
    pub fn param_names() -> [&'static str; 4] {
        ["A", "tau", "sigma_N", "sigma_M"]
    }

    /// Maps a coordinate vector to natural-unit parameters.
    pub fn project(&self, q: &[f64]) -> ParamPoint {
        let n = self.len();
        let a = q[n].exp();
        let tau = q[n + 1].exp();
        let mut k = n + 2;
        let sigma_n = if self.mode.has_sigma_n() {
            k += 1;
            q[k - 1].exp()
        } else {
            0.0
        };
        let sigma_m = match self.mode {
            NoiseMode::AdditiveOnly => 0.0,
            NoiseMode::MixedKnownRatio => (self.rho * sigma_n * sigma_n / a).sqrt(),
            _ => q[k].exp(),
        };
        ParamPoint { params: OuParams { amplitude: a, tau }, noise: NoiseParams { sigma_n, sigma_m } }
    }

    /// The latent path at `q`.
    pub fn path(&self, q: &[f64]) -> Vec<f64> {
        let n = self.len();
        match self.latents {
            LatentCoords::Centered => q[..n].to_vec(),
            LatentCoords::NoiseScaled => {
                let sn = self.project(q).noise.sigma_n;
                self.y.iter().zip(&q[..n]).map(|(y, u)| y - sn * u).collect()
            }
        }
    }

    /// Coordinates for a latent path and a parameter point (the reverse of
    /// [`OuTarget::project`]; a derived `sigma_m` is dropped).
    pub fn embed(&self, x: &[f64], p: &ParamPoint) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(crate::Error::DimensionMismatch { expected: self.len(), got: x.len() });
        }
        let mut q = match self.latents {
            LatentCoords::Centered => x.to_vec(),
            LatentCoords::NoiseScaled => self.y.iter().zip(x).map(|(y, x)| (y - x) / p.noise.sigma_n).collect(),
        };
        q.push(p.params.amplitude.ln());
        q.push(p.params.tau.ln());
        if self.mode.has_sigma_n() {
            q.push(p.noise.sigma_n.ln());
        }
        if self.mode.has_free_sigma_m() {
            q.push(p.noise.sigma_m.ln());
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial point has a non-positive parameter"));
        }
        Ok(q)
    }

    pub fn in_support(&self, p: &ParamPoint) -> bool {
        let pr = &self.priors;
        pr.amplitude.contains(p.params.amplitude)
            && pr.tau.contains(p.params.tau)
            && (!self.mode.has_sigma_n() || pr.sigma_n.contains(p.noise.sigma_n))
            && (!self.mode.has_free_sigma_m() || pr.sigma_m.contains(p.noise.sigma_m))
    }
}

impl LogDensity for OuTarget {
    fn dim(&self) -> usize {
        self.len() + self.n_params()
    }

    fn logp_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.len();
        let p = self.project(q);
        if !self.in_support(&p) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        let (gx, gp) = grad.split_at_mut(n);
        let scaled = self.latents == LatentCoords::NoiseScaled;
        let result = if scaled {
            // residuals y - x = sigma_n u are kept exact even when sigma_n u is below rounding of y
            let sn = p.noise.sigma_n;
            let r: Vec<f64> = q[..n].iter().map(|u| sn * u).collect();
            let x: Vec<f64> = self.y.iter().zip(&r).map(|(y, r)| y - r).collect();
            joint_logdensity_residual_into(&self.y, self.dt, &x, &r, &p.params, &p.noise, gx)
        } else {
            joint_logdensity_into(&self.y, self.dt, &q[..n], &p.params, &p.noise, gx)
        };
        let Ok((mut lp, d)) = result else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        };
        let [mut d_a, d_tau, mut d_sn, d_sm] = d;
        if self.mode == NoiseMode::MixedKnownRatio {
            // ln sigma_m = ln sigma_n - ln A / 2 + const
            d_sn += d_sm;
            d_a += -0.5 * d_sm;
        }
        if scaled {
            // x = y - sigma_n u, d ln|dx/du| = N ln sigma_n
            let sn = p.noise.sigma_n;
            lp += n as f64 * sn.ln();
            d_sn += n as f64;
            for (g, u) in gx.iter_mut().zip(&q[..n]) {
                d_sn -= sn * u * *g;
                *g *= -sn;
            }
        }
        // uniform priors in natural units: Jacobian of theta = exp(u)
        let mut jac = q[n] + q[n + 1];
        gp[0] = d_a + 1.0;
        gp[1] = d_tau + 1.0;
        let mut k = 2;
        if self.mode.has_sigma_n() {
            gp[k] = d_sn + 1.0;
            jac += q[n + k];
            k += 1;
        }
        if self.mode.has_free_sigma_m() {
            gp[k] = d_sm + 1.0;
            jac += q[n + k];
        }
        lp + jac
    }
}
