//! Pauli spectrum, its moments and Rényi entropies, and the scrambled reference.

use serde::{Deserialize, Serialize};

use crate::circuits::CircuitSpec;
use crate::error::{Error, Result};
use crate::pauli::PauliCoefficients;
use crate::stats::{double_factorial_odd, neumaier_sum};

pub const DEFAULT_BINS: usize = 60;
pub const DEFAULT_U_MIN: f64 = 1e-6;
pub const DEFAULT_U_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mu,
    Nu,
    NuOverF2k,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Mu => "mu",
            Quantity::Nu => "nu",
            Quantity::NuOverF2k => "nu_over_F2k",
        }
    }
}

/// Ensemble average of one moment with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub quantity: Quantity,
    pub k: usize,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub meta: CircuitSpec,
}

fn nonzero_norm(coeffs: &PauliCoefficients) -> Result<f64> {
    let norm = coeffs.norm_sq();
    if norm <= 0.0 {
        return Err(Error::ZeroOperator);
    }
    Ok(norm)
}

/// `π(P) = a_P² / Σ_Q a_Q²`.
pub fn pi_distribution(coeffs: &PauliCoefficients) -> Result<Vec<f64>> {
    let norm = nonzero_norm(coeffs)?;
    Ok(coeffs.values().iter().map(|a| a * a / norm).collect())
}

fn d_pow(coeffs: &PauliCoefficients, k: usize) -> f64 {
    // D^{2k−2} = 2^{N(2k−2)}, exact in floating point
    2f64.powi((coeffs.n_sites() * (2 * k - 2)) as i32)
}

/// `μ_k = D^{2k−2} Σ_P π(P)^k`.
pub fn moment_mu(coeffs: &PauliCoefficients, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment index must be >= 1".into()));
    }
    let norm = nonzero_norm(coeffs)?;
    if k == 1 {
        return Ok(1.0);
    }
    let s = neumaier_sum(coeffs.values().iter().map(|a| (a * a / norm).powi(k as i32)));
    Ok(d_pow(coeffs, k) * s)
}

/// `ν_k = D^{2k−2} Σ_P a_P^{2k}`.
pub fn moment_nu(coeffs: &PauliCoefficients, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment index must be >= 1".into()));
    }
    let s = neumaier_sum(coeffs.values().iter().map(|a| (a * a).powi(k as i32)));
    Ok(d_pow(coeffs, k) * s)
}

/// Rényi-`k` entropy of `π`, `k ≥ 0`, `k ≠ 1`.
pub fn ose(coeffs: &PauliCoefficients, k: f64) -> Result<f64> {
    if !(k >= 0.0) || k == 1.0 {
        return Err(Error::InvalidParameter(format!("Renyi index {k} must be >= 0 and != 1")));
    }
    let pi = pi_distribution(coeffs)?;
    let s = if k == 0.0 {
        pi.iter().filter(|p| **p > 0.0).count() as f64
    } else {
        neumaier_sum(pi.iter().filter(|p| **p > 0.0).map(|p| p.powf(k)))
    };
    Ok(s.ln() / (1.0 - k))
}

/// Shannon entropy of `π`, the `k → 1` limit of [`ose`].
pub fn shannon_entropy(coeffs: &PauliCoefficients) -> Result<f64> {
    let pi = pi_distribution(coeffs)?;
    Ok(-neumaier_sum(pi.iter().filter(|p| **p > 0.0).map(|p| p * p.ln())))
}

/// Log-binned density of `u = D² π(P)`, each string carrying weight `D⁻²`.
/// Mass outside `[u_min, u_max)` goes to `zero_mass` (below) and
/// `overflow_mass` (above).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumHistogram {
    pub bins: Vec<(f64, f64)>,
    pub density: Vec<f64>,
    pub zero_mass: f64,
    pub overflow_mass: f64,
}

impl SpectrumHistogram {
    pub fn total_mass(&self) -> f64 {
        self.zero_mass
            + self.overflow_mass
            + neumaier_sum(self.bins.iter().zip(&self.density).map(|((lo, hi), d)| d * (hi - lo)))
    }

    /// `Σ density · u_mid^k · Δu` with geometric bin midpoints.
    pub fn moment(&self, k: i32) -> f64 {
        neumaier_sum(
            self.bins
                .iter()
                .zip(&self.density)
                .map(|((lo, hi), d)| d * (lo * hi).sqrt().powi(k) * (hi - lo)),
        )
    }
}

/// Log-spaced bin edges.
pub fn log_bins(n_bins: usize, u_min: f64, u_max: f64) -> Result<Vec<(f64, f64)>> {
    if n_bins == 0 || !(u_min > 0.0) || !(u_max > u_min) || !u_max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need n_bins >= 1 and 0 < u_min < u_max, got {n_bins}, {u_min}, {u_max}"
        )));
    }
    let (a, b) = (u_min.ln(), u_max.ln());
    let step = (b - a) / n_bins as f64;
    let edge = |i: usize| if i == n_bins { u_max } else { (a + step * i as f64).exp() };
    Ok((0..n_bins).map(|i| (edge(i), edge(i + 1))).collect())
}

pub fn spectrum_histogram(coeffs: &PauliCoefficients, n_bins: usize, u_min: f64, u_max: f64) -> Result<SpectrumHistogram> {
    let bins = log_bins(n_bins, u_min, u_max)?;
    let norm = nonzero_norm(coeffs)?;
    let d2 = (coeffs.dim() * coeffs.dim()) as f64;
    let weight = 1.0 / d2;
    let (la, lb) = (u_min.ln(), u_max.ln());
    let mut counts = vec![0u64; n_bins];
    let mut below = 0u64;
    let mut above = 0u64;
    for a in coeffs.values() {
        let u = d2 * a * a / norm;
        if u < u_min {
            below += 1;
        } else if u >= u_max {
            above += 1;
        } else {
            let mut i = (((u.ln() - la) / (lb - la)) * n_bins as f64) as usize;
            i = i.min(n_bins - 1);
            // guard against rounding at the edges
            while i > 0 && u < bins[i].0 {
                i -= 1;
            }
            while i + 1 < n_bins && u >= bins[i].1 {
                i += 1;
            }
            counts[i] += 1;
        }
    }
    let density = counts
        .iter()
        .zip(&bins)
        .map(|(c, (lo, hi))| *c as f64 * weight / (hi - lo))
        .collect();
    Ok(SpectrumHistogram {
        bins,
        density,
        zero_mass: below as f64 * weight,
        overflow_mass: above as f64 * weight,
    })
}

/// Haar value of the normalized moment, `(2k−1)!!`.
pub fn haar_moment(k: usize) -> f64 {
    double_factorial_odd(k)
}

/// Scrambled-limit density `e^{−u/2} / √(2πu)`.
pub fn opt_density(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    (-u / 2.0).exp() / (2.0 * std::f64::consts::PI * u).sqrt()
}

/// `∫₀^u` of [`opt_density`], equal to `erf(√(u/2))`.
pub fn opt_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    statrs::function::erf::erf((u / 2.0).sqrt())
}

/// Mean of [`opt_density`] over `[lo, hi)`.
pub fn opt_bin_density(lo: f64, hi: f64) -> f64 {
    (opt_cdf(hi) - opt_cdf(lo)) / (hi - lo)
}
