//! Keeping the `N_P` largest Pauli coefficients of an evolved operator, the
//! error this causes, and the entropy lower bound on it.

use faer::{c64, Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{run_circuit, CircuitSpec};
use crate::error::{Error, Result};
use crate::pauli::{inverse_pauli_transform, is_zdiag_index, pauli_transform, PauliCoefficients};
use crate::spectrum::ose;
use crate::stats::{jackknife, linear_fit, mean_stderr, neumaier_sum};

/// Largest chain for the dense eigensolve of the residual.
pub const ADVERSARIAL_MAX_SITES: usize = 6;

/// Default `N_P` grid: `1, 2, 4, …, 2^12`.
pub fn default_np_grid() -> Vec<usize> {
    (0..=12).map(|e| 1usize << e).collect()
}

/// Strings sorted by `|a|` descending, ties by ascending index.
fn ranking(coeffs: &PauliCoefficients) -> Vec<usize> {
    let v = coeffs.values();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&x, &y| v[y].abs().total_cmp(&v[x].abs()).then(x.cmp(&y)));
    idx
}

fn check_np(n_p: usize, len: usize) -> Result<()> {
    if n_p == 0 || n_p > len {
        return Err(Error::InvalidParameter(format!("N_P = {n_p} outside 1..={len}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationResult {
    pub n_sites: usize,
    /// `(Pauli index, a_P)`, `|a|` descending with ties by ascending index.
    pub kept: Vec<(usize, f64)>,
    /// `Σ a_P²` over dropped strings.
    pub dropped_weight: f64,
}

impl TruncationResult {
    /// The truncated operator `Õ` as a full coefficient vector.
    pub fn to_coefficients(&self) -> Result<PauliCoefficients> {
        let mut values = vec![0.0; 1usize << (2 * self.n_sites)];
        for &(i, a) in &self.kept {
            values[i] = a;
        }
        PauliCoefficients::new(self.n_sites, values)
    }
}

pub fn truncate_top(coeffs: &PauliCoefficients, n_p: usize) -> Result<TruncationResult> {
    let v = coeffs.values();
    check_np(n_p, v.len())?;
    let order = ranking(coeffs);
    let kept = order[..n_p].iter().map(|&i| (i, v[i])).collect();
    let dropped_weight = neumaier_sum(order[n_p..].iter().map(|&i| v[i] * v[i]));
    Ok(TruncationResult { n_sites: coeffs.n_sites(), kept, dropped_weight })
}

/// `Tr[O ρ]` for `ρ = |0…0⟩⟨0…0|`: the sum of the coefficients on `{I, Z}^N`.
pub fn expectation_zero_state(coeffs: &PauliCoefficients) -> f64 {
    let n = coeffs.n_sites();
    neumaier_sum(coeffs.values().iter().enumerate().filter(|(i, _)| is_zdiag_index(*i, n)).map(|(_, a)| *a))
}

/// [`expectation_zero_state`] of the truncated operator.
pub fn expectation_zero_state_truncated(t: &TruncationResult) -> f64 {
    neumaier_sum(t.kept.iter().filter(|(i, _)| is_zdiag_index(*i, t.n_sites)).map(|(_, a)| *a))
}

/// Lower bound `(‖O‖₂ / 2N)(M₂ − ln N_P − 1)` on the worst-case error of the
/// top-`N_P` truncation, with `‖O‖₂² = Σ a_P²`. Negative values are vacuous.
pub fn simulability_bound(norm: f64, m2: f64, n_p: usize, n_sites: usize) -> f64 {
    norm / (2.0 * n_sites as f64) * (m2 - (n_p as f64).ln() - 1.0)
}

/// The relative bound from an ensemble-averaged `μ̄₂`, i.e. with `M₂`
/// replaced by `−ln(D⁻² μ̄₂)`. By Jensen it lies below the mean of the
/// per-realization relative bounds.
pub fn ensemble_bound(mean_mu2: f64, n_p: usize, n_sites: usize) -> f64 {
    let log_d2 = 2.0 * n_sites as f64 * std::f64::consts::LN_2;
    simulability_bound(1.0, log_d2 - mean_mu2.ln(), n_p, n_sites)
}

/// `‖O − Õ‖_∞` for the top-`N_P` truncation, which is the error reached by
/// the adversarial state (top eigenvector of the residual).
pub fn adversarial_error(coeffs: &PauliCoefficients, n_p: usize) -> Result<f64> {
    let n = coeffs.n_sites();
    if n > ADVERSARIAL_MAX_SITES {
        return Err(Error::InvalidParameter(format!(
            "dense residual eigensolve limited to {ADVERSARIAL_MAX_SITES} sites, got {n}"
        )));
    }
    let t = truncate_top(coeffs, n_p)?;
    let mut residual = coeffs.values().to_vec();
    for &(i, _) in &t.kept {
        residual[i] = 0.0;
    }
    let op = inverse_pauli_transform(&PauliCoefficients::new(n, residual)?);
    let dim = op.dim();
    let m = op.matrix();
    let a = Mat::<c64>::from_fn(dim, dim, |i, j| m[i * dim + j]);
    let eig = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::InvalidParameter(format!("residual eigensolve failed: {e:?}")))?;
    Ok(eig.iter().fold(0.0f64, |acc, x| acc.max(x.abs())))
}

/// One `(N_P, MSE)` point of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub n_p: usize,
    pub mse: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// Squared zero-state errors of one operator for every `N_P` in the grid.
pub fn squared_errors(coeffs: &PauliCoefficients, np_grid: &[usize]) -> Result<Vec<f64>> {
    let v = coeffs.values();
    let n = coeffs.n_sites();
    for &n_p in np_grid {
        check_np(n_p, v.len())?;
    }
    let order = ranking(coeffs);
    // the error is the dropped part of the zero-state sum
    let mut suffix = vec![0.0; order.len() + 1];
    let mut comp = vec![0.0; order.len() + 1];
    for (pos, &i) in order.iter().enumerate().rev() {
        let a = if is_zdiag_index(i, n) { v[i] } else { 0.0 };
        // Neumaier running sum from the tail
        let s = suffix[pos + 1];
        let t = s + a;
        let c = if s.abs() >= a.abs() { (s - t) + a } else { (a - t) + s };
        suffix[pos] = t;
        comp[pos] = comp[pos + 1] + c;
    }
    Ok(np_grid
        .iter()
        .map(|&n_p| {
            let e = suffix[n_p] + comp[n_p];
            e * e
        })
        .collect())
}

/// Per-realization squared errors, `[realization][grid point]`.
pub fn truncation_errors(spec: &CircuitSpec, np_grid: &[usize], n_realizations: usize) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    (0..n_realizations as u64)
        .into_par_iter()
        .map(|r| {
            let op = run_circuit(spec, r)?;
            squared_errors(&pauli_transform(&op)?, np_grid)
        })
        .collect()
}

/// Ensemble MSE of the zero-state expectation for each `N_P`.
pub fn truncation_mse(spec: &CircuitSpec, np_grid: &[usize], n_realizations: usize) -> Result<Vec<MsePoint>> {
    if n_realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let errs = truncation_errors(spec, np_grid, n_realizations)?;
    Ok(np_grid
        .iter()
        .enumerate()
        .map(|(g, &n_p)| {
            let col: Vec<f64> = errs.iter().map(|row| row[g]).collect();
            let m = mean_stderr(&col);
            MsePoint { n_p, mse: m.mean, stderr: m.stderr, n_samples: m.n }
        })
        .collect())
}

/// Log-log slope of the MSE against `N_P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSlope {
    pub slope: f64,
    /// Jackknife over realizations; the grid points share realizations, so
    /// per-point errors would overstate the precision.
    pub stderr: f64,
}

/// Unweighted fit of `ln MSE` against `ln N_P` from `[realization][grid]`
/// squared errors. Grid points with zero MSE are skipped.
pub fn mse_slope(errors: &[Vec<f64>], np_grid: &[usize]) -> Result<MseSlope> {
    let n = errors.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two realizations".into()));
    }
    let sums: Vec<f64> = (0..np_grid.len()).map(|g| neumaier_sum(errors.iter().map(|row| row[g]))).collect();
    let fit = |skip: Option<usize>| -> f64 {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (g, &n_p) in np_grid.iter().enumerate() {
            let (total, count) = match skip {
                Some(i) => (sums[g] - errors[i][g], (n - 1) as f64),
                None => (sums[g], n as f64),
            };
            let mse = total / count;
            if mse > 0.0 {
                x.push((n_p as f64).ln());
                y.push(mse.ln());
            }
        }
        linear_fit(&x, &y, None).map(|f| f.slope).unwrap_or(f64::NAN)
    };
    let est = jackknife(n, fit);
    if !est.mean.is_finite() {
        return Err(Error::InvalidParameter("fewer than two grid points with nonzero MSE".into()));
    }
    Ok(MseSlope { slope: est.mean, stderr: est.stderr })
}

/// Adversarial error against the entropy bound for one operator and `N_P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub realization: u64,
    pub n_p: usize,
    pub observed: f64,
    pub bound: f64,
}

pub fn bound_samples(spec: &CircuitSpec, np_grid: &[usize], n_realizations: usize) -> Result<Vec<BoundSample>> {
    spec.validate()?;
    let per: Result<Vec<Vec<BoundSample>>> = (0..n_realizations as u64)
        .into_par_iter()
        .map(|r| {
            let coeffs = pauli_transform(&run_circuit(spec, r)?)?;
            let norm = coeffs.norm_sq().sqrt();
            let m2 = ose(&coeffs, 2.0)?;
            np_grid
                .iter()
                .map(|&n_p| {
                    Ok(BoundSample {
                        realization: r,
                        n_p,
                        observed: adversarial_error(&coeffs, n_p)?,
                        bound: simulability_bound(norm, m2, n_p, coeffs.n_sites()),
                    })
                })
                .collect()
        })
        .collect();
    Ok(per?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::OperatorState;
    use crate::pauli::encode_pauli;
    use proptest::prelude::*;
    use rand::seq::index::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coeffs_from(n: usize, entries: &[(&str, f64)]) -> PauliCoefficients {
        let mut v = vec![0.0; 1 << (2 * n)];
        for (w, a) in entries {
            v[encode_pauli(w).unwrap().index()] = *a;
        }
        PauliCoefficients::new(n, v).unwrap()
    }

    #[test]
    fn truncate_examples() {
        let c = coeffs_from(1, &[("X", 0.5), ("Z", 0.8), ("Y", -0.3)]);
        let t = truncate_top(&c, 2).unwrap();
        assert_eq!(t.kept.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.8, 0.5]);
        assert!((t.dropped_weight - 0.09).abs() < 1e-15);
        assert_eq!(truncate_top(&c, 4).unwrap().dropped_weight, 0.0);
        let single = coeffs_from(2, &[("XZ", 1.0)]);
        let t = truncate_top(&single, 1).unwrap();
        assert_eq!(t.to_coefficients().unwrap(), single);
        assert!(truncate_top(&c, 0).is_err());
        assert!(truncate_top(&c, 5).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let c = coeffs_from(1, &[("Z", 0.5), ("X", -0.5), ("Y", 0.5)]);
        let t = truncate_top(&c, 2).unwrap();
        let x = encode_pauli("X").unwrap().index();
        let y = encode_pauli("Y").unwrap().index();
        assert_eq!(t.kept, vec![(x, -0.5), (y, 0.5)]);
    }

    #[test]
    fn zero_state_examples() {
        assert_eq!(expectation_zero_state(&coeffs_from(2, &[("ZI", 1.0)])), 1.0);
        assert_eq!(expectation_zero_state(&coeffs_from(2, &[("XI", 1.0)])), 0.0);
        let proj = coeffs_from(1, &[("I", 0.5), ("Z", 0.5)]);
        assert_eq!(expectation_zero_state(&proj), 1.0);
        let t = truncate_top(&coeffs_from(2, &[("ZZ", 0.6), ("XI", 0.7), ("IZ", 0.1)]), 2).unwrap();
        assert!((expectation_zero_state_truncated(&t) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_state_matches_matrix_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..64).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let c = PauliCoefficients::new(3, v).unwrap();
        let op = inverse_pauli_transform(&c);
        assert!((op.matrix()[0].re - expectation_zero_state(&c)).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        let np = 5usize;
        assert!(simulability_bound(2.0, (np as f64).ln() + 1.0, np, 4).abs() < 1e-15);
        let b = simulability_bound(1.5, 0.0, 1, 3);
        assert!((b + 1.5 / 6.0).abs() < 1e-15);
        // D⁻²μ̄₂ = 1 ⇒ M₂ = 0
        assert!((ensemble_bound(16.0, 1, 2) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn squared_errors_match_direct_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..256).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let c = PauliCoefficients::new(4, v).unwrap();
        let grid = [1, 3, 16, 100, 256];
        let fast = squared_errors(&c, &grid).unwrap();
        let full = expectation_zero_state(&c);
        for (&n_p, f) in grid.iter().zip(&fast) {
            let e = full - expectation_zero_state_truncated(&truncate_top(&c, n_p).unwrap());
            assert!((e * e - f).abs() < 1e-12, "N_P={n_p}");
        }
        assert!(fast[4] < 1e-28);
    }

    #[test]
    fn adversarial_error_of_single_residual_string() {
        // residual ±0.3·XY has spectral norm 0.3
        let c = coeffs_from(2, &[("ZZ", 0.9), ("XY", -0.3)]);
        assert!((adversarial_error(&c, 1).unwrap() - 0.3).abs() < 1e-12);
        assert!(adversarial_error(&c, 16).unwrap() < 1e-15);
    }

    #[test]
    fn mse_vanishes_without_truncation() {
        let spec = CircuitSpec::chain(4, 3).with_gamma(0.02).with_seed(5);
        let pts = truncation_mse(&spec, &[1, 8, 256], 6).unwrap();
        assert_eq!(pts[2].mse, 0.0);
        assert!(pts[0].mse >= pts[1].mse);
        let again = truncation_mse(&spec, &[1, 8, 256], 6).unwrap();
        assert_eq!(pts, again);
    }

    #[test]
    fn bound_holds_on_random_circuits() {
        let spec = CircuitSpec::chain(4, 4).with_seed(2);
        for s in bound_samples(&spec, &[1, 4, 16, 64], 4).unwrap() {
            assert!(s.observed >= s.bound - 1e-10, "{s:?}");
        }
    }

    #[test]
    fn bound_holds_for_identity_heavy_operator() {
        let id = OperatorState::identity(3);
        let c = pauli_transform(&id).unwrap();
        let m2 = ose(&c, 2.0).unwrap();
        assert!(m2.abs() < 1e-12);
        assert!(adversarial_error(&c, 1).unwrap() >= simulability_bound(1.0, m2, 1, 3));
    }

    #[test]
    fn mse_slope_of_power_laws() {
        let grid = default_np_grid();
        let power: Vec<Vec<f64>> =
            (1..=5).map(|c| grid.iter().map(|&n| c as f64 * (n as f64).powf(-0.5)).collect()).collect();
        let s = mse_slope(&power, &grid).unwrap();
        assert!((s.slope + 0.5).abs() < 1e-12);
        assert!(s.stderr < 1e-12);
        // independent scatter per realization only moves the level
        let flat: Vec<Vec<f64>> = (1..=5).map(|c| vec![c as f64; grid.len()]).collect();
        assert!(mse_slope(&flat, &grid).unwrap().slope.abs() < 1e-12);
        assert!(mse_slope(&flat[..1], &grid).is_err());
        assert!(mse_slope(&[vec![0.0; 13], vec![0.0; 13]], &grid).is_err());
    }

    proptest! {
        #[test]
        fn top_subset_is_optimal(seed in 0u64..1000, n_p in 1usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..16).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let c = PauliCoefficients::new(2, v.clone()).unwrap();
            let top = truncate_top(&c, n_p).unwrap();
            let total: f64 = v.iter().map(|a| a * a).sum();
            for _ in 0..20 {
                let alt = sample(&mut rng, 16, n_p);
                let kept: f64 = alt.iter().map(|i| v[i] * v[i]).sum();
                prop_assert!(top.dropped_weight <= total - kept + 1e-12);
            }
            prop_assert!(top.dropped_weight >= 0.0);
        }

        #[test]
        fn residual_norm_dominates_tail(seed in 0u64..200, n_p in 1usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..64).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let c = PauliCoefficients::new(3, v).unwrap();
            let t = truncate_top(&c, n_p).unwrap();
            prop_assert!(adversarial_error(&c, n_p).unwrap() >= t.dropped_weight.sqrt() - 1e-12);
        }
    }
}
