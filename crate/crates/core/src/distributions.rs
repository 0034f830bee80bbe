//! Component densities and random generation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StratError};
use crate::model::ComponentFamily;
use crate::normal;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Location/scale of one mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentParams {
    pub location: f64,
    pub scale: f64,
    pub family: ComponentFamily,
}

impl ComponentParams {
    pub fn new(location: f64, scale: f64, family: ComponentFamily) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) || !location.is_finite() {
            return Err(StratError::InvalidParams(format!(
                "component needs finite location and positive scale, got ({location}, {scale})"
            )));
        }
        Ok(Self {
            location,
            scale,
            family,
        })
    }

    /// Mean of the observed outcome: the location for normal components,
    /// `E[max(0, X)]` for tobit.
    #[must_use]
    pub fn observed_mean(&self) -> f64 {
        match self.family {
            ComponentFamily::Normal => self.location,
            ComponentFamily::Tobit => censored_mean(self.location, self.scale),
        }
    }
}

/// `E[max(0, X)]` for `X ~ N(η, ζ²)`: `η Φ(η/ζ) + ζ φ(η/ζ)`.
#[must_use]
pub fn censored_mean(location: f64, scale: f64) -> f64 {
    let z = location / scale;
    location * normal::cdf(z) + scale * normal::pdf(z)
}

/// Log density of a normal component, without validation.
#[inline]
pub(crate) fn normal_log_density(y: f64, location: f64, scale: f64) -> f64 {
    let z = (y - location) / scale;
    -0.5 * z * z - scale.ln() - LN_SQRT_2PI
}

/// Log of the censoring mass `Φ(-η/ζ)` of a tobit component.
#[inline]
pub(crate) fn tobit_log_zero_mass(location: f64, scale: f64) -> f64 {
    normal::ln_cdf(-location / scale)
}

/// Log density (or log point mass at zero, for tobit) of `y`.
pub fn log_density(y: f64, cp: &ComponentParams) -> Result<f64> {
    if !(cp.scale > 0.0) {
        return Err(StratError::InvalidParams(format!("scale must be > 0, got {}", cp.scale)));
    }
    match cp.family {
        ComponentFamily::Normal => Ok(normal_log_density(y, cp.location, cp.scale)),
        ComponentFamily::Tobit => {
            if y < 0.0 {
                Err(StratError::NegativeCensoredOutcome { index: 0, y })
            } else if y == 0.0 {
                Ok(tobit_log_zero_mass(cp.location, cp.scale))
            } else {
                Ok(normal_log_density(y, cp.location, cp.scale))
            }
        }
    }
}

/// Draw an outcome: exact normal, or the normal latent censored at zero.
pub fn sample<R: Rng + ?Sized>(cp: &ComponentParams, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    censor(cp.family, cp.location + cp.scale * z)
}

#[inline]
fn censor(family: ComponentFamily, latent: f64) -> f64 {
    match family {
        ComponentFamily::Normal => latent,
        ComponentFamily::Tobit => latent.max(0.0),
    }
}

/// Error law used to generate outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Normal,
    /// Student-t with `df` degrees of freedom, rescaled to unit variance.
    HeavyTail { df: f64 },
    /// Shifted log-normal with the given skewness, standardized to mean 0 and
    /// unit variance. Negative skewness mirrors the draw.
    Skewed { skewness: f64 },
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Normal => write!(f, "normal"),
            Shape::HeavyTail { df } => write!(f, "heavy_tail:{df}"),
            Shape::Skewed { skewness } => write!(f, "skewed:{skewness}"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = StratError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || StratError::InvalidShape(format!("cannot parse shape {s:?}"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let value = || arg.ok_or_else(bad)?.parse::<f64>().map_err(|_| bad());
        let shape = match name {
            "normal" if arg.is_none() => Shape::Normal,
            "heavy_tail" | "t" => Shape::HeavyTail { df: value()? },
            "skewed" => Shape::Skewed { skewness: value()? },
            _ => return Err(bad()),
        };
        ShapeSampler::new(shape)?;
        Ok(shape)
    }
}

/// Prepared standardized draw for a [`Shape`].
#[derive(Debug, Clone)]
pub struct ShapeSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Normal,
    StudentT { dist: StudentT<f64>, rescale: f64 },
    LogNormal { sigma: f64, mean: f64, sd: f64, sign: f64 },
}

/// Log-normal variance parameter `u = e^{σ²} - 1` with skewness `(u + 3)√u = γ`.
fn lognormal_u_for_skewness(gamma: f64) -> f64 {
    // (u + 3)√u is increasing in u; bracket and bisect.
    let skew = |u: f64| (u + 3.0) * u.sqrt();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while skew(hi) < gamma {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if skew(mid) < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl ShapeSampler {
    pub fn new(shape: Shape) -> Result<Self> {
        let kind = match shape {
            Shape::Normal => SamplerKind::Normal,
            Shape::HeavyTail { df } => {
                if df.is_nan() || df <= 2.0 {
                    return Err(StratError::InvalidShape(format!(
                        "heavy-tail df must exceed 2 for a finite variance, got {df}"
                    )));
                }
                if df.is_infinite() {
                    SamplerKind::Normal
                } else {
                    let dist = StudentT::new(df)
                        .map_err(|e| StratError::InvalidShape(format!("student t: {e}")))?;
                    SamplerKind::StudentT {
                        dist,
                        rescale: ((df - 2.0) / df).sqrt(),
                    }
                }
            }
            Shape::Skewed { skewness } => {
                if !skewness.is_finite() {
                    return Err(StratError::InvalidShape(format!("skewness must be finite, got {skewness}")));
                }
                if skewness == 0.0 {
                    SamplerKind::Normal
                } else {
                    let u = lognormal_u_for_skewness(skewness.abs());
                    SamplerKind::LogNormal {
                        sigma: u.ln_1p().sqrt(),
                        mean: (1.0 + u).sqrt(),
                        sd: (u * (1.0 + u)).sqrt(),
                        sign: skewness.signum(),
                    }
                }
            }
        };
        Ok(Self { kind })
    }

    /// Draw with mean 0 and variance 1.
    pub fn draw_standard<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Normal => StandardNormal.sample(rng),
            SamplerKind::StudentT { dist, rescale } => dist.sample(rng) * rescale,
            SamplerKind::LogNormal { sigma, mean, sd, sign } => {
                let z: f64 = StandardNormal.sample(rng);
                sign * ((sigma * z).exp() - mean) / sd
            }
        }
    }

    /// `location + scale · draw`, censored at zero for tobit components.
    pub fn draw<R: Rng + ?Sized>(&self, cp: &ComponentParams, rng: &mut R) -> f64 {
        censor(cp.family, cp.location + cp.scale * self.draw_standard(rng))
    }
}

/// Draw from a component whose error law is replaced by `shape`, keeping the
/// component's mean and standard deviation.
pub fn sample_misspecified<R: Rng + ?Sized>(cp: &ComponentParams, shape: Shape, rng: &mut R) -> Result<f64> {
    Ok(ShapeSampler::new(shape)?.draw(cp, rng))
}
