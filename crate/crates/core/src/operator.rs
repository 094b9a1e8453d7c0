//! Dense Heisenberg-picture evolution of an operator on `N` qubits.
//!
//! The operator is a row-major `D × D` complex matrix, `D = 2^N`. Viewed as a
//! flat tensor with `2N` binary legs, column bit `s` sits at position `s` and
//! row bit `s` at position `N + s`, so `U O U†` is `U` on the row legs of the
//! support and `U*` on the column legs.

use num_complex::Complex64;

use crate::bits::{apply_local, insert_zero_bits, local_offsets};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};

/// Largest system accepted without an explicit limit: `2^26 · 16` bytes ≈ 1.1 GB.
pub const DEFAULT_MAX_SITES: usize = 13;

const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorState {
    n_sites: usize,
    matrix: Vec<Complex64>,
}

/// A unitary acting on an ordered list of sites. `support[0]` is the least
/// significant bit of the gate's local index.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    support: Vec<usize>,
    matrix: Vec<Complex64>,
}

impl GateMatrix {
    pub fn new(support: Vec<usize>, matrix: Vec<Complex64>) -> Result<Self> {
        let q = 1usize << support.len();
        if matrix.len() != q * q {
            return Err(Error::GateDimensionMismatch {
                dim: (matrix.len() as f64).sqrt() as usize,
                support: support.len(),
            });
        }
        for (i, s) in support.iter().enumerate() {
            if support[..i].contains(s) {
                return Err(Error::DuplicateSite(*s));
            }
        }
        let dev = unitarity_deviation(&matrix, q);
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(Self { support, matrix })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        1 << self.support.len()
    }
}

/// `max |(U U†)_{ij} − δ_{ij}|` for a row-major `q × q` matrix.
pub fn unitarity_deviation(u: &[Complex64], q: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..q {
        for j in 0..q {
            let s: Complex64 = (0..q).map(|k| u[i * q + k] * u[j * q + k].conj()).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).norm());
        }
    }
    worst
}

impl OperatorState {
    pub fn from_matrix(n_sites: usize, matrix: Vec<Complex64>) -> Result<Self> {
        let len = matrix.len();
        let dim = (len as f64).sqrt().round() as usize;
        if dim * dim != len {
            return Err(Error::NotSquare(len));
        }
        if !dim.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(dim));
        }
        if dim != 1usize << n_sites {
            return Err(Error::InvalidParameter(format!(
                "matrix dimension {dim} does not match {n_sites} sites"
            )));
        }
        Ok(Self { n_sites, matrix })
    }

    pub(crate) fn from_raw(n_sites: usize, matrix: Vec<Complex64>) -> Self {
        Self { n_sites, matrix }
    }

    /// `axis` on `site`, identity elsewhere, with the default memory guard.
    pub fn local_pauli(n_sites: usize, site: usize, axis: Pauli) -> Result<Self> {
        Self::local_pauli_with_limit(n_sites, site, axis, DEFAULT_MAX_SITES)
    }

    pub fn local_pauli_with_limit(n_sites: usize, site: usize, axis: Pauli, max_sites: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidParameter("need at least one site".into()));
        }
        if n_sites > max_sites {
            return Err(Error::TooManySites { n_sites, limit: max_sites });
        }
        if site >= n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites });
        }
        let mut letters = vec![Pauli::I; n_sites];
        letters[site] = axis;
        Ok(Self::pauli_string(&PauliString::from_letters(&letters)?))
    }

    /// The matrix of a full Pauli string.
    pub fn pauli_string(p: &PauliString) -> Self {
        let n = p.n_sites();
        let dim = 1usize << n;
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        let locals: Vec<[Complex64; 4]> = (0..n).map(|s| p.letter(s).matrix()).collect();
        // each row of a Pauli string has exactly one nonzero column
        for row in 0..dim {
            let mut col = 0usize;
            let mut val = Complex64::new(1.0, 0.0);
            for (s, loc) in locals.iter().enumerate() {
                let r = (row >> s) & 1;
                let c = if loc[r * 2 + r].norm_sqr() > 0.0 { r } else { 1 - r };
                col |= c << s;
                val *= loc[r * 2 + c];
            }
            m[row * dim + col] = val;
        }
        Self { n_sites: n, matrix: m }
    }

    pub fn identity(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Self { n_sites, matrix: m }
    }

    pub fn zero(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        Self {
            n_sites,
            matrix: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        let dim = self.dim();
        (0..dim).map(|i| self.matrix[i * dim + i]).sum()
    }

    /// `max |O − O†|` entrywise.
    pub fn hermiticity_deviation(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.matrix[r * dim + c] - self.matrix[c * dim + r].conj()).norm());
            }
        }
        worst
    }

    fn check_sites(&self, sites: &[usize]) -> Result<()> {
        for (i, &s) in sites.iter().enumerate() {
            if s >= self.n_sites {
                return Err(Error::SiteOutOfRange { site: s, n_sites: self.n_sites });
            }
            if sites[..i].contains(&s) {
                return Err(Error::DuplicateSite(s));
            }
        }
        Ok(())
    }

    /// `O ← U O U†` on the gate's support.
    pub fn apply_gate(&mut self, gate: &GateMatrix) -> Result<()> {
        self.check_sites(gate.support())?;
        let n = self.n_sites;
        let row_bits: Vec<usize> = gate.support().iter().map(|&s| s + n).collect();
        apply_local(&mut self.matrix, &row_bits, gate.matrix());
        let conj: Vec<Complex64> = gate.matrix().iter().map(|z| z.conj()).collect();
        apply_local(&mut self.matrix, gate.support(), &conj);
        Ok(())
    }

    /// Single-site depolarizing channel with rate `gamma` on each of `sites`
    /// in turn: `O ← (1−γ) O + γ Tr_s[O] ⊗ 1_s / 2`.
    pub fn apply_depolarizing(&mut self, gamma: f64, sites: &[usize]) -> Result<()> {
        check_rate(gamma)?;
        self.check_sites(sites)?;
        if gamma == 0.0 {
            return Ok(());
        }
        let n = self.n_sites;
        let keep = 1.0 - gamma;
        for &s in sites {
            let (cb, rb) = (1usize << s, 1usize << (n + s));
            let sorted = [s, n + s];
            for c in 0..self.matrix.len() / 4 {
                let base = insert_zero_bits(c, &sorted);
                let e00 = self.matrix[base];
                let e11 = self.matrix[base | cb | rb];
                let half_tr = (e00 + e11) * 0.5;
                self.matrix[base] = e00 * keep + half_tr * gamma;
                self.matrix[base | cb | rb] = e11 * keep + half_tr * gamma;
                self.matrix[base | cb] *= keep;
                self.matrix[base | rb] *= keep;
            }
        }
        Ok(())
    }

    /// One depolarizing channel acting jointly on all of `sites`:
    /// `O ← (1−γ) O + γ Tr_S[O] ⊗ 1_S / 2^|S|`. In the Pauli picture every
    /// string that is not the identity on all of `S` is scaled by `1 − γ`.
    pub fn apply_depolarizing_joint(&mut self, gamma: f64, sites: &[usize]) -> Result<()> {
        check_rate(gamma)?;
        self.check_sites(sites)?;
        if gamma == 0.0 || sites.is_empty() {
            return Ok(());
        }
        let n = self.n_sites;
        let q = 1usize << sites.len();
        let col_off = local_offsets(sites);
        let row_bits: Vec<usize> = sites.iter().map(|&s| s + n).collect();
        let row_off = local_offsets(&row_bits);
        let mut all_bits: Vec<usize> = sites.iter().copied().chain(row_bits.iter().copied()).collect();
        all_bits.sort_unstable();
        let keep = 1.0 - gamma;
        for c in 0..self.matrix.len() / (q * q) {
            let base = insert_zero_bits(c, &all_bits);
            let tr: Complex64 = (0..q).map(|a| self.matrix[base + row_off[a] + col_off[a]]).sum();
            let shift = tr * (gamma / q as f64);
            for a in 0..q {
                for b in 0..q {
                    let idx = base + row_off[a] + col_off[b];
                    self.matrix[idx] *= keep;
                    if a == b {
                        self.matrix[idx] += shift;
                    }
                }
            }
        }
        Ok(())
    }

    /// `Tr[O²] / D`, i.e. the unnormalized first moment `ν₁`.
    pub fn hs_norm_sq(&self) -> f64 {
        crate::stats::neumaier_sum(self.matrix.iter().map(|z| z.norm_sqr())) / self.dim() as f64
    }
}

fn check_rate(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidRate(gamma));
    }
    Ok(())
}

pub fn hs_norm_sq(op: &OperatorState) -> f64 {
    op.hs_norm_sq()
}
