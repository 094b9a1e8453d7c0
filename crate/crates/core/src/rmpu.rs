//! Exact transfer matrices for staircase (RMPU) circuits and the closed-form
//! predictions derived from them.
//!
//! Gate `l` acts on sites `l..=l+r`, the operator starts on site 0 and every
//! gate is followed by one depolarizing channel on its whole support. The
//! ensemble moment is `Lᵀ T^{m−1} R` with
//! `T = Λ₁(d) W̃g(dχ, γ) Λ₂(d) G(χ)`, `L_σ = χ^{#σ} 1_E(σ)` and
//! `R_σ = Σ_π Λ₁_σ W̃g_{σπ} Λ₂_π^{r+1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::double_factorial_odd;
use crate::weingarten::{noisy_weingarten, symmetric_group, MAX_MATRIX_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmpuParams {
    pub n_sites: usize,
    pub r: usize,
    pub d: usize,
    pub k: usize,
    pub gamma: f64,
}

impl RmpuParams {
    pub fn new(n_sites: usize, r: usize, k: usize, gamma: f64) -> Self {
        Self { n_sites, r, d: 2, k, gamma }
    }

    pub fn with_d(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn chi(&self) -> f64 {
        (self.d as f64).powi(self.r as i32)
    }

    pub fn m(&self) -> usize {
        self.n_sites - self.r
    }

    /// Gate dimension `dχ`.
    pub fn q(&self) -> f64 {
        self.d as f64 * self.chi()
    }

    /// `x = d^{N(1−1/k)} / χ`.
    pub fn x(&self) -> f64 {
        let d = self.d as f64;
        d.powf(self.n_sites as f64 * (1.0 - 1.0 / self.k as f64)) / self.chi()
    }

    /// `F = (1−γ)^m`.
    pub fn fidelity(&self) -> f64 {
        (1.0 - self.gamma).powi(self.m() as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r >= self.n_sites {
            return Err(Error::InvalidParameter(format!(
                "overlap must satisfy 1 <= r <= N-1, got r={}, N={}",
                self.r, self.n_sites
            )));
        }
        if self.d < 2 || !self.d.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("local dimension {} must be a power of two >= 2", self.d)));
        }
        if self.k == 0 || 2 * self.k > MAX_MATRIX_DEGREE {
            return Err(Error::InvalidParameter(format!("moment index {} outside 1..=3", self.k)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidRate(self.gamma));
        }
        Ok(())
    }
}

/// Diagonals of `Λ₁(d)` and `Λ₂(d)` over `S_n`:
/// `d^{#σ}` and `d^{#σ + 2·1_E(σ) − 2}`.
pub fn lambda_matrices(n: usize, d: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n % 2 != 0 {
        return Err(Error::InvalidParameter(format!("replica number {n} must be even")));
    }
    let g = symmetric_group(n)?;
    let l1 = g.elements().iter().map(|p| d.powi(p.cycles() as i32)).collect();
    let l2 = g
        .elements()
        .iter()
        .map(|p| d.powi(p.cycles() as i32 + 2 * p.even_cycles_only() as i32 - 2))
        .collect();
    Ok((l1, l2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperator {
    pub n: usize,
    pub t: DMatrix<f64>,
    pub l: DVector<f64>,
    pub r: DVector<f64>,
    /// Set when `dχ < 2k` and the Weingarten matrix is a pseudo-inverse.
    pub pseudo_inverse: bool,
}

/// Left and right boundary vectors.
pub fn boundary_vectors(params: &RmpuParams) -> Result<(DVector<f64>, DVector<f64>)> {
    let op = transfer_matrix(params)?;
    Ok((op.l, op.r))
}

pub fn transfer_matrix(params: &RmpuParams) -> Result<TransferOperator> {
    params.validate()?;
    let n = 2 * params.k;
    let g = symmetric_group(n)?;
    let d = params.d as f64;
    let chi = params.chi();
    let (l1, l2) = lambda_matrices(n, d)?;
    let wg = noisy_weingarten(n, params.q(), params.gamma)?;
    let order = g.order();
    let gram_chi: Vec<f64> = g.classes().iter().map(|t| chi.powi(t.len() as i32)).collect();
    let gc = g.class_matrix(&gram_chi);
    // Λ₁ W̃g Λ₂ G(χ)
    let mut left = wg.entries.clone();
    for i in 0..order {
        for j in 0..order {
            left[(i, j)] *= l1[i] * l2[j];
        }
    }
    let t = left * gc;
    let l = DVector::from_iterator(
        order,
        g.elements()
            .iter()
            .map(|p| if p.even_cycles_only() { chi.powi(p.cycles() as i32) } else { 0.0 }),
    );
    let rpow: Vec<f64> = l2.iter().map(|v| v.powi(params.r as i32 + 1)).collect();
    let r = DVector::from_iterator(
        order,
        (0..order).map(|s| l1[s] * (0..order).map(|p| wg.entries[(s, p)] * rpow[p]).sum::<f64>()),
    );
    Ok(TransferOperator { n, t, l, r, pseudo_inverse: wg.pseudo_inverse })
}

/// `Lᵀ T^{m−1} R`: the ensemble-averaged `ν_k` (equal to `μ_k` at `γ = 0`).
pub fn rmpu_moment_exact(params: &RmpuParams) -> Result<f64> {
    let op = transfer_matrix(params)?;
    let mut v = op.r.clone();
    let mut log_scale = 0.0f64;
    for _ in 1..params.m() {
        v = &op.t * v;
        let s = v.amax();
        if s == 0.0 {
            return Ok(0.0);
        }
        v /= s;
        log_scale += s.ln();
    }
    Ok(op.l.dot(&v) * log_scale.exp())
}

/// `C_k(γ) = (d²−1) / (d^{2k}(1−γ)^{−2k} − d²)`.
pub fn c_k(d: f64, k: usize, gamma: f64) -> f64 {
    let k2 = 2 * k as i32;
    (d * d - 1.0) / (d.powi(k2) * (1.0 - gamma).powi(-k2) - d * d)
}

/// Large-χ prediction `F^{2k}(2k−1)!![1 + C_k(γ)(x/F)^{2k}]` with `F = (1−γ)^m`.
pub fn rmpu_moment_asymptotic(params: &RmpuParams) -> Result<f64> {
    params.validate()?;
    if params.k < 2 {
        return Err(Error::InvalidParameter("asymptotic form needs k >= 2".into()));
    }
    let k2 = 2 * params.k as i32;
    let f = params.fidelity();
    let c = c_k(params.d as f64, params.k, params.gamma);
    Ok(f.powi(k2) * double_factorial_odd(params.k) * (1.0 + c * (params.x() / f).powi(k2)))
}

/// Closed-form brickwork timescales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPredictions {
    pub d: usize,
    pub k: usize,
    pub tau: f64,
    /// Prefactor of the finite-depth correction; not fixed by the theory.
    pub c_prime: f64,
}

/// `τ⁻¹ = ln((d²+1)/(2d))`.
pub fn tau_brickwork(d: usize) -> f64 {
    let d = d as f64;
    1.0 / ((d * d + 1.0) / (2.0 * d)).ln()
}

/// Timescales for `(d, k)`; `tau_override` replaces the brickwork `τ`.
pub fn scaling_predictions(d: usize, k: usize, tau_override: Option<f64>) -> ScalingPredictions {
    ScalingPredictions {
        d,
        k,
        tau: tau_override.unwrap_or_else(|| tau_brickwork(d)),
        c_prime: 1.0,
    }
}

impl ScalingPredictions {
    /// `t_k* = N τ (1 − 1/k) ln d`.
    pub fn t_k_star(&self, n_sites: usize) -> f64 {
        n_sites as f64 * self.tau * (1.0 - 1.0 / self.k as f64) * (self.d as f64).ln()
    }

    /// Critical error per cycle, `γ_c N = 1/τ`.
    pub fn gamma_c_times_n(&self) -> f64 {
        1.0 / self.tau
    }

    /// `1 + C′ (e^{γNt} d^{N(1−1/k)} / e^{t/τ})^{2k}`.
    pub fn brickwork_correction(&self, n_sites: usize, t: f64, gamma: f64) -> f64 {
        let n = n_sites as f64;
        let log_ratio = gamma * n * t + n * (1.0 - 1.0 / self.k as f64) * (self.d as f64).ln() - t / self.tau;
        1.0 + self.c_prime * (2.0 * self.k as f64 * log_ratio).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weingarten::{gram_matrix, weingarten_matrix};

    #[test]
    fn lambda_examples() {
        let (l1, l2) = lambda_matrices(4, 2.0).unwrap();
        assert_eq!(l1[0], 16.0);
        assert_eq!(l2[0], 4.0);
        let g = symmetric_group(4).unwrap();
        for (i, p) in g.elements().iter().enumerate() {
            if p.even_cycles_only() && p.cycles() == 2 {
                assert_eq!(l2[i], 4.0);
            }
            let e = if p.even_cycles_only() { 4.0 } else { 1.0 };
            assert_eq!(l2[i], l1[i] / 4.0 * e);
        }
        assert!(lambda_matrices(3, 2.0).is_err());
    }

    #[test]
    fn left_boundary_support() {
        let p = RmpuParams::new(3, 1, 2, 0.0);
        let (l, _) = boundary_vectors(&p).unwrap();
        let g = symmetric_group(4).unwrap();
        let nonzero: Vec<usize> = (0..24).filter(|&i| l[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 9);
        let pairings = nonzero.iter().filter(|&&i| l[i] == 4.0 && g.element(i).cycles() == 2).count();
        let four_cycles = nonzero.iter().filter(|&&i| l[i] == 2.0 && g.element(i).cycles() == 1).count();
        assert_eq!((pairings, four_cycles), (3, 6));
        assert_eq!(l[0], 0.0);
    }

    /// Global Haar on `q = D = 2^N` straight from `Wg(D)`:
    /// `μ̄_k = D^{−2} Σ_{σ,π} A_σ Wg_{σπ} B_π` with `A_σ = Tr[O^{⊗n} σ]` for
    /// `O = Z ⊗ 1` and `B_π = Σ_P Tr[P^{⊗n} π]`, which factorizes over sites.
    fn global_haar_oracle(n_sites: usize, k: usize) -> f64 {
        let n = 2 * k;
        let g = symmetric_group(n).unwrap();
        let d = 2.0f64;
        let q = d.powi(n_sites as i32);
        let wg = weingarten_matrix(n, q).unwrap();
        // Tr[O^l] is D for even l and 0 for odd l
        let a: Vec<f64> = g
            .elements()
            .iter()
            .map(|p| if p.even_cycles_only() { q.powi(p.cycles() as i32) } else { 0.0 })
            .collect();
        // one site: the identity gives d^{#π}, each of the d²−1 others d^{#π}·1_E(π)
        let b: Vec<f64> = g
            .elements()
            .iter()
            .map(|p| {
                let site = d.powi(p.cycles() as i32) * (1.0 + (d * d - 1.0) * p.even_cycles_only() as i32 as f64);
                site.powi(n_sites as i32)
            })
            .collect();
        let mut total = 0.0;
        for s in 0..g.order() {
            for p in 0..g.order() {
                total += a[s] * wg.get(s, p) * b[p];
            }
        }
        total / (q * q)
    }

    #[test]
    fn single_gate_is_global_haar() {
        for (n_sites, k) in [(2, 1), (2, 2), (3, 2), (3, 3), (4, 2)] {
            let p = RmpuParams::new(n_sites, n_sites - 1, k, 0.0);
            let exact = rmpu_moment_exact(&p).unwrap();
            let oracle = global_haar_oracle(n_sites, k);
            assert!((exact - oracle).abs() < 1e-9 * oracle, "N={n_sites} k={k}: {exact} vs {oracle}");
        }
    }

    #[test]
    fn k1_noiseless_is_one() {
        for (n, r) in [(3, 1), (5, 2), (6, 1)] {
            let v = rmpu_moment_exact(&RmpuParams::new(n, r, 1, 0.0)).unwrap();
            assert!((v - 1.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn transfer_matrix_structure() {
        let g = symmetric_group(4).unwrap();
        let e = 0;
        let tau = g.elements().iter().position(|p| p.image() == [1, 0, 3, 2]).unwrap();
        let mut prev_gap = f64::INFINITY;
        for r in [6usize, 8, 10, 12] {
            let p = RmpuParams::new(r + 1, r, 2, 0.0);
            let t = transfer_matrix(&p).unwrap().t;
            // diagonal weights d^{a(σ)} with a(σ) = 2#σ + 2·1_E − 2 − 2k
            for s in 0..24 {
                let el = g.element(s);
                let a = 2 * el.cycles() as i32 + 2 * el.even_cycles_only() as i32 - 2 - 4;
                let rel = (t[(s, s)] / 2f64.powi(a) - 1.0).abs();
                assert!(rel < 20.0 / p.chi(), "r={r} s={s} rel={rel}");
            }
            // the pairing-to-identity jump carries χ^{−k}
            let gap = (t[(tau, e)] * p.chi().powi(2) - 0.75).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
        let full = transfer_matrix(&RmpuParams::new(4, 2, 2, 1.0)).unwrap();
        assert!(full.t.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn asymptotic_examples() {
        assert!((c_k(2.0, 2, 0.0) - 0.25).abs() < 1e-15);
        assert!((c_k(2.0, 2, 0.1) - 3.0 / (16.0 / 0.9f64.powi(4) - 4.0)).abs() < 1e-15);
        assert!((c_k(2.0, 2, 0.1) - 0.14715).abs() < 1e-5);
        // N = 2r makes x = 1 at k = 2
        let p = RmpuParams::new(8, 4, 2, 0.0);
        assert!((p.x() - 1.0).abs() < 1e-15);
        assert!((rmpu_moment_asymptotic(&p).unwrap() - 3.75).abs() < 1e-14);
        for (n, r, k) in [(8, 4, 2), (9, 3, 3), (12, 5, 2)] {
            let a = rmpu_moment_asymptotic(&RmpuParams::new(n, r, k, 0.0)).unwrap();
            let x = RmpuParams::new(n, r, k, 0.0).x();
            let plain = double_factorial_odd(k) * (1.0 + c_k(2.0, k, 0.0) * x.powi(2 * k as i32));
            assert_eq!(a, plain);
        }
        assert!(rmpu_moment_asymptotic(&RmpuParams::new(4, 2, 1, 0.0)).is_err());
    }

    #[test]
    fn scaling_examples() {
        let s = scaling_predictions(2, 2, None);
        assert!((s.tau - 4.4814).abs() < 1e-4);
        assert!((s.gamma_c_times_n() - 0.22314).abs() < 1e-5);
        assert!((s.t_k_star(10) - 15.53).abs() < 1e-2);
        let o = scaling_predictions(2, 2, Some(3.0));
        assert_eq!(o.tau, 3.0);
        // at t = t₂* and γ = 0 the bracket equals 1 + C′
        assert!((s.brickwork_correction(10, s.t_k_star(10), 0.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_pipeline_is_identical_at_zero_rate() {
        let p = RmpuParams::new(6, 2, 2, 0.0);
        let a = transfer_matrix(&p).unwrap();
        // rebuild T by hand from the plain Weingarten matrix
        let g = symmetric_group(4).unwrap();
        let wg = weingarten_matrix(4, p.q()).unwrap();
        let gc = gram_matrix(4, p.chi()).unwrap();
        let (l1, l2) = lambda_matrices(4, 2.0).unwrap();
        let mut t = wg.entries.clone();
        for i in 0..g.order() {
            for j in 0..g.order() {
                t[(i, j)] *= l1[i] * l2[j];
            }
        }
        assert_eq!(a.t, t * gc.entries);
    }

    #[test]
    fn exact_approaches_asymptotic() {
        for log_x in [0i32, -1] {
            let mut prev = f64::INFINITY;
            for r in 3..=7usize {
                let n = (2 * r as i32 + 2 * log_x) as usize;
                let p = RmpuParams::new(n, r, 2, 0.0);
                let exact = rmpu_moment_exact(&p).unwrap();
                let asym = rmpu_moment_asymptotic(&p).unwrap();
                let gap = (exact - asym).abs() / asym;
                assert!(gap < prev, "log_x={log_x} r={r} gap={gap} prev={prev}");
                prev = gap;
            }
        }
    }

    #[test]
    fn haar_floor() {
        for n in [4usize, 6, 8] {
            let p = RmpuParams::new(n, n - 1, 2, 0.0);
            let v = rmpu_moment_exact(&p).unwrap();
            let eps = 4.0 / p.chi();
            assert!(v >= 3.0 * (1.0 - eps), "N={n} v={v}");
        }
    }
}
