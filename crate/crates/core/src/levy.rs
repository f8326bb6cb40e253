//! Standardized Levy drivers: analytic cumulant rates and exact increment sampling.
//!
//! Three families are supported. Gaussian increments are exact normals, NIG
//! increments use the normal mean-variance mixture over an inverse-Gaussian
//! subordinator, and bilateral-gamma increments are differences of two
//! independent gamma variates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STANDARDIZATION_TOL: f64 = 1e-8;

/// Law of the driving Levy process `Z`, parameterized per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LevySpec {
    /// Standard Wiener process.
    Gaussian,
    /// Normal inverse Gaussian `NIG(alpha, beta, delta_rate * t, mu_rate * t)`.
    Nig {
        alpha: f64,
        beta: f64,
        delta_rate: f64,
        mu_rate: f64,
    },
    /// Bilateral gamma `bGamma(shape_pos_rate * t, rate_pos, shape_neg_rate * t, rate_neg)`.
    #[serde(rename = "bgamma")]
    BilateralGamma {
        shape_pos_rate: f64,
        rate_pos: f64,
        shape_neg_rate: f64,
        rate_neg: f64,
    },
}

/// Per-unit-time cumulants of `Z_1`. For pure-jump drivers `nu3`, `nu4` are
/// the third and fourth moments of the Levy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantRates {
    pub mean_rate: f64,
    pub var_rate: f64,
    pub nu3: f64,
    pub nu4: f64,
}

impl LevySpec {
    pub fn nig(alpha: f64, beta: f64, delta_rate: f64, mu_rate: f64) -> Result<Self> {
        let spec = LevySpec::Nig { alpha, beta, delta_rate, mu_rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bilateral_gamma(
        shape_pos_rate: f64,
        rate_pos: f64,
        shape_neg_rate: f64,
        rate_neg: f64,
    ) -> Result<Self> {
        let spec = LevySpec::BilateralGamma { shape_pos_rate, rate_pos, shape_neg_rate, rate_neg };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks parameter constraints. A non-standardized law only triggers a warning.
    pub fn validate(&self) -> Result<()> {
        match *self {
            LevySpec::Gaussian => {}
            LevySpec::Nig { alpha, beta, delta_rate, mu_rate } => {
                if !(alpha.is_finite() && beta.is_finite() && delta_rate.is_finite() && mu_rate.is_finite()) {
                    return Err(Error::InvalidSpec("NIG parameters must be finite".into()));
                }
                if !(alpha > beta.abs()) {
                    return Err(Error::InvalidSpec(format!(
                        "NIG requires alpha > |beta|, got alpha = {alpha}, beta = {beta}"
                    )));
                }
                if !(delta_rate > 0.0) {
                    return Err(Error::InvalidSpec(format!("NIG requires delta_rate > 0, got {delta_rate}")));
                }
            }
            LevySpec::BilateralGamma { shape_pos_rate, rate_pos, shape_neg_rate, rate_neg } => {
                for (name, v) in [
                    ("shape_pos_rate", shape_pos_rate),
                    ("rate_pos", rate_pos),
                    ("shape_neg_rate", shape_neg_rate),
                    ("rate_neg", rate_neg),
                ] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidSpec(format!("bilateral gamma requires {name} > 0, got {v}")));
                    }
                }
            }
        }
        if !self.is_standardized(STANDARDIZATION_TOL) {
            let c = self.cumulant_rates();
            log::warn!(
                "Levy driver is not standardized: mean rate {:.6}, variance rate {:.6}",
                c.mean_rate,
                c.var_rate
            );
        }
        Ok(())
    }

    pub fn is_standardized(&self, tol: f64) -> bool {
        let c = self.cumulant_rates();
        c.mean_rate.abs() <= tol && (c.var_rate - 1.0).abs() <= tol
    }

    pub fn cumulant_rates(&self) -> CumulantRates {
        match *self {
            LevySpec::Gaussian => CumulantRates { mean_rate: 0.0, var_rate: 1.0, nu3: 0.0, nu4: 0.0 },
            LevySpec::Nig { alpha, beta, delta_rate: d, mu_rate: mu } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                let a2 = alpha * alpha;
                CumulantRates {
                    mean_rate: mu + d * beta / g,
                    var_rate: d * a2 / g.powi(3),
                    nu3: 3.0 * d * beta * a2 / g.powi(5),
                    nu4: 3.0 * d * a2 * (a2 + 4.0 * beta * beta) / g.powi(7),
                }
            }
            LevySpec::BilateralGamma { shape_pos_rate: ap, rate_pos: lp, shape_neg_rate: an, rate_neg: ln } => {
                CumulantRates {
                    mean_rate: ap / lp - an / ln,
                    var_rate: ap / lp.powi(2) + an / ln.powi(2),
                    nu3: 2.0 * ap / lp.powi(3) - 2.0 * an / ln.powi(3),
                    nu4: 6.0 * ap / lp.powi(4) + 6.0 * an / ln.powi(4),
                }
            }
        }
    }

    /// Builds a sampler for increments `Z_h`.
    pub fn sampler(&self, h: f64) -> Result<IncrementSampler> {
        self.validate()?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Precondition(format!("stepsize must be positive, got {h}")));
        }
        let kind = match *self {
            LevySpec::Gaussian => SamplerKind::Gaussian { sd: h.sqrt() },
            LevySpec::Nig { alpha, beta, delta_rate, mu_rate } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                let delta = delta_rate * h;
                SamplerKind::Nig {
                    beta,
                    mu: mu_rate * h,
                    ig: InverseGaussian { mean: delta / g, shape: delta * delta },
                }
            }
            LevySpec::BilateralGamma { shape_pos_rate, rate_pos, shape_neg_rate, rate_neg } => {
                let pos = Gamma::new(shape_pos_rate * h, 1.0 / rate_pos)
                    .map_err(|e| Error::InvalidSpec(format!("positive gamma part: {e}")))?;
                let neg = Gamma::new(shape_neg_rate * h, 1.0 / rate_neg)
                    .map_err(|e| Error::InvalidSpec(format!("negative gamma part: {e}")))?;
                SamplerKind::BilateralGamma { pos, neg }
            }
        };
        Ok(IncrementSampler { kind })
    }
}

/// Seed plus stream selector for a ChaCha generator. Equal pairs reproduce
/// identical sequences; distinct stream ids give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream for replication `index` of an experiment seeded by `base_seed`.
    pub fn for_replication(base_seed: u64, index: u64) -> Self {
        Self { seed: base_seed, stream_id: base_seed ^ index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Inverse Gaussian `IG(mean, shape)` drawn by the transformation-with-rejection
/// method of Michael, Schucany and Haas.
#[derive(Debug, Clone, Copy)]
pub struct InverseGaussian {
    mean: f64,
    shape: f64,
}

impl InverseGaussian {
    pub fn new(mean: f64, shape: f64) -> Result<Self> {
        if !(mean > 0.0 && shape > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "inverse Gaussian requires positive mean and shape, got ({mean}, {shape})"
            )));
        }
        Ok(Self { mean, shape })
    }
}

impl Distribution<f64> for InverseGaussian {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.mean;
        let v: f64 = rng.sample(StandardNormal);
        let y = m * v * v;
        // smaller root of the quadratic, written without cancellation
        let x = if y == 0.0 {
            m
        } else {
            let s = (y * y + 4.0 * self.shape * y).sqrt();
            4.0 * m * self.shape * y / ((y + s) * (y + s))
        };
        let u: f64 = rng.random();
        if u <= m / (m + x) {
            x
        } else {
            m * m / x
        }
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gaussian { sd: f64 },
    Nig { beta: f64, mu: f64, ig: InverseGaussian },
    BilateralGamma { pos: Gamma<f64>, neg: Gamma<f64> },
}

/// Sampler of `Z_h` for a fixed stepsize.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    kind: SamplerKind,
}

impl IncrementSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            SamplerKind::Nig { beta, mu, ig } => {
                let v = ig.sample(rng);
                let z: f64 = rng.sample(StandardNormal);
                mu + beta * v + v.sqrt() * z
            }
            SamplerKind::BilateralGamma { pos, neg } => pos.sample(rng) - neg.sample(rng),
        }
    }

    /// One increment; a non-finite draw is retried once before failing.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let x = self.draw(rng);
        if x.is_finite() {
            return Ok(x);
        }
        let retry = self.draw(rng);
        if retry.is_finite() {
            Ok(retry)
        } else {
            Err(Error::NonFinite(format!("increment draw {x} then {retry} with sampler {:?}", self.kind)))
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        for slot in out.iter_mut() {
            *slot = self.sample(rng)?;
        }
        Ok(())
    }
}

/// `n` i.i.d. increments `Z_h` drawn from `stream`.
pub fn increments(spec: &LevySpec, n: usize, h: f64, stream: &RngStream) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Precondition("increment count must be at least 1".into()));
    }
    let sampler = spec.sampler(h)?;
    let mut rng = stream.rng();
    let mut out = vec![0.0; n];
    sampler.fill(&mut rng, &mut out)?;
    Ok(out)
}
