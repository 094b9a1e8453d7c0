//! Pauli strings and the operator → Pauli-coefficient transform.
//!
//! A string on `N` sites is indexed by two bits per site, site 0 in the lowest
//! bits, with `I = 0`, `X = 1`, `Y = 2`, `Z = 3`. The transform works on the
//! operator matrix in place with one 2×2 → 4 basis rotation per site, so a
//! full set of `4^N` coefficients costs `O(N · 4^N)`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bits::{insert_zero_bits, spread_bits};
use crate::error::{Error, Result};
use crate::operator::OperatorState;

/// Tolerance on the imaginary part of a transformed Hermitian operator.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn code(self) -> usize {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn from_code(code: usize) -> Pauli {
        match code & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn from_char(c: char) -> Result<Pauli> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::InvalidPauliLetter(other)),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// The 2×2 matrix, row-major.
    pub fn matrix(self) -> [Complex64; 4] {
        let o = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => [one, o, o, one],
            Pauli::X => [o, one, one, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [one, o, o, -one],
        }
    }
}

/// A Pauli string on `n_sites` sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    n_sites: usize,
    index: usize,
}

impl PauliString {
    pub fn from_index(n_sites: usize, index: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::EmptyPauliWord);
        }
        if n_sites < usize::BITS as usize / 2 && index >> (2 * n_sites) != 0 {
            return Err(Error::InvalidParameter(format!(
                "index {index} out of range for {n_sites} sites"
            )));
        }
        Ok(Self { n_sites, index })
    }

    pub fn from_letters(letters: &[Pauli]) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::EmptyPauliWord);
        }
        let index = letters
            .iter()
            .enumerate()
            .fold(0usize, |acc, (s, p)| acc | (p.code() << (2 * s)));
        Ok(Self {
            n_sites: letters.len(),
            index,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn letter(&self, site: usize) -> Pauli {
        Pauli::from_code(self.index >> (2 * site))
    }

    pub fn letters(&self) -> Vec<Pauli> {
        (0..self.n_sites).map(|s| self.letter(s)).collect()
    }

    /// Number of non-identity letters.
    pub fn weight(&self) -> usize {
        (0..self.n_sites).filter(|&s| self.letter(s) != Pauli::I).count()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.letters() {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

/// Parses a word such as `"XZ"`; the first character is site 0.
pub fn encode_pauli(word: &str) -> Result<PauliString> {
    let letters = word.chars().map(Pauli::from_char).collect::<Result<Vec<_>>>()?;
    PauliString::from_letters(&letters)
}

pub fn decode_pauli(p: &PauliString) -> String {
    p.to_string()
}

/// True iff every letter is `I` or `Z`, i.e. `Tr[P |0…0⟩⟨0…0|] = 1`.
pub fn zdiag_indicator(p: &PauliString) -> bool {
    is_zdiag_index(p.index, p.n_sites)
}

/// Index form of [`zdiag_indicator`]: the low bit of every 2-bit letter must
/// equal the high bit (`I = 00`, `Z = 11`).
#[inline]
pub fn is_zdiag_index(index: usize, n_sites: usize) -> bool {
    let mask = spread_bits((1usize << n_sites) - 1);
    (index & mask) == ((index >> 1) & mask)
}

/// All `a_P = Tr[O P] / D` of an operator, indexed by Pauli string index.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliCoefficients {
    n_sites: usize,
    values: Vec<f64>,
}

impl PauliCoefficients {
    pub fn new(n_sites: usize, values: Vec<f64>) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::EmptyPauliWord);
        }
        if values.len() != 1usize << (2 * n_sites) {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients for {n_sites} sites, got {}",
                1usize << (2 * n_sites),
                values.len()
            )));
        }
        Ok(Self { n_sites, values })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Hilbert-space dimension `D = 2^N`.
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, p: &PauliString) -> f64 {
        self.values[p.index]
    }

    /// `Σ_P a_P²`, equal to `Tr[O²] / D`.
    pub fn norm_sq(&self) -> f64 {
        crate::stats::neumaier_sum(self.values.iter().map(|a| a * a))
    }
}

/// Computes every Pauli coefficient of a Hermitian operator.
pub fn pauli_transform(op: &OperatorState) -> Result<PauliCoefficients> {
    let n = op.n_sites();
    let mut data = op.matrix().to_vec();
    forward_sites(&mut data, n);

    let mut values = vec![0.0f64; data.len()];
    let dim = 1usize << n;
    let mut residual = 0.0f64;
    let mut scale = 1.0f64;
    for row in 0..dim {
        let hi = spread_bits(row) << 1;
        for col in 0..dim {
            let c = data[row * dim + col];
            residual = residual.max(c.im.abs());
            scale = scale.max(c.re.abs());
            values[hi | spread_bits(col)] = c.re;
        }
    }
    if residual > HERMITIAN_TOL * scale {
        return Err(Error::NonHermitian { residual });
    }
    PauliCoefficients::new(n, values)
}

/// Rebuilds the operator matrix `Σ_P a_P P` from its coefficients.
pub fn inverse_pauli_transform(coeffs: &PauliCoefficients) -> OperatorState {
    let n = coeffs.n_sites();
    let dim = 1usize << n;
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for row in 0..dim {
        let hi = spread_bits(row) << 1;
        for col in 0..dim {
            data[row * dim + col] = Complex64::new(coeffs.values[hi | spread_bits(col)], 0.0);
        }
    }
    inverse_sites(&mut data, n);
    OperatorState::from_raw(n, data)
}

// Row bit `s` lives at position `n + s`, column bit `s` at position `s`. After
// the rotation of site `s` the local code `2·r_s + c_s` is the Pauli letter.
fn forward_sites(data: &mut [Complex64], n: usize) {
    let i = Complex64::new(0.0, 1.0);
    for s in 0..n {
        let (cb, rb) = (1usize << s, 1usize << (n + s));
        let sorted = [s, n + s];
        for c in 0..data.len() / 4 {
            let base = insert_zero_bits(c, &sorted);
            let e00 = data[base];
            let e01 = data[base | cb];
            let e10 = data[base | rb];
            let e11 = data[base | cb | rb];
            data[base] = (e00 + e11) * 0.5;
            data[base | cb] = (e01 + e10) * 0.5;
            data[base | rb] = i * (e01 - e10) * 0.5;
            data[base | cb | rb] = (e00 - e11) * 0.5;
        }
    }
}

fn inverse_sites(data: &mut [Complex64], n: usize) {
    let i = Complex64::new(0.0, 1.0);
    for s in 0..n {
        let (cb, rb) = (1usize << s, 1usize << (n + s));
        let sorted = [s, n + s];
        for c in 0..data.len() / 4 {
            let base = insert_zero_bits(c, &sorted);
            let a_i = data[base];
            let a_x = data[base | cb];
            let a_y = data[base | rb];
            let a_z = data[base | cb | rb];
            data[base] = a_i + a_z;
            data[base | cb] = a_x - i * a_y;
            data[base | rb] = a_x + i * a_y;
            data[base | cb | rb] = a_i - a_z;
        }
    }
}
