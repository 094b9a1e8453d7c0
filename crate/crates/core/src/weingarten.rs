//! Symmetric-group combinatorics and (noisy) Weingarten matrices.
//!
//! Elements of `S_n` are enumerated lexicographically by image, so the
//! identity has index 0 and the index of a permutation is its Lehmer rank.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use once_cell::sync::Lazy;

use crate::error::{Error, Result};

/// Largest degree that can be enumerated.
pub const MAX_ENUM_DEGREE: usize = 8;
/// Largest degree for which dense group matrices are built.
pub const MAX_MATRIX_DEGREE: usize = 6;
/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    image: Vec<usize>,
    cycles: usize,
    fixed_points: usize,
    even_cycles_only: bool,
}

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &v in &image {
            if v >= n || seen[v] {
                return Err(Error::InvalidParameter(format!("{image:?} is not a permutation")));
            }
            seen[v] = true;
        }
        Ok(Self::from_valid(image))
    }

    fn from_valid(image: Vec<usize>) -> Self {
        let lengths = cycle_lengths(&image);
        Self {
            cycles: lengths.len(),
            fixed_points: lengths.iter().filter(|&&l| l == 1).count(),
            even_cycles_only: lengths.iter().all(|l| l % 2 == 0),
            image,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_valid((0..n).collect())
    }

    /// Builds a permutation from disjoint cycles; unlisted points are fixed.
    pub fn from_cycles(n: usize, cycles: &[&[usize]]) -> Result<Self> {
        let mut image: Vec<usize> = (0..n).collect();
        for c in cycles {
            for (i, &a) in c.iter().enumerate() {
                if a >= n {
                    return Err(Error::InvalidParameter(format!("point {a} outside degree {n}")));
                }
                image[a] = c[(i + 1) % c.len()];
            }
        }
        Self::new(image)
    }

    pub fn degree(&self) -> usize {
        self.image.len()
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn fixed_points(&self) -> usize {
        self.fixed_points
    }

    pub fn even_cycles_only(&self) -> bool {
        self.even_cycles_only
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.image.len()];
        for (i, &v) in self.image.iter().enumerate() {
            inv[v] = i;
        }
        Self::from_valid(inv)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.degree() != other.degree() {
            return Err(Error::DegreeMismatch(self.degree(), other.degree()));
        }
        Ok(Self::from_valid(other.image.iter().map(|&i| self.image[i]).collect()))
    }

    /// Cycle lengths, sorted descending.
    pub fn cycle_type(&self) -> Vec<usize> {
        let mut l = cycle_lengths(&self.image);
        l.sort_unstable_by(|a, b| b.cmp(a));
        l
    }

    /// Position in the lexicographic enumeration of `S_n`.
    pub fn rank(&self) -> usize {
        let n = self.image.len();
        let mut rank = 0;
        for i in 0..n {
            let smaller = self.image[i + 1..].iter().filter(|&&v| v < self.image[i]).count();
            rank = rank * (n - i) + smaller;
        }
        rank
    }
}

fn cycle_lengths(image: &[usize]) -> Vec<usize> {
    let n = image.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = image[i];
            len += 1;
        }
        out.push(len);
    }
    out
}

pub fn cycle_count(sigma: &Permutation) -> usize {
    sigma.cycles()
}

pub fn even_indicator(sigma: &Permutation) -> bool {
    sigma.even_cycles_only()
}

/// Number of points fixed by both permutations.
pub fn common_fixed_points(sigma: &Permutation, pi: &Permutation) -> Result<usize> {
    if sigma.degree() != pi.degree() {
        return Err(Error::DegreeMismatch(sigma.degree(), pi.degree()));
    }
    Ok((0..sigma.degree()).filter(|&i| sigma.image[i] == i && pi.image[i] == i).count())
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All `n!` permutations in lexicographic order of their images.
pub fn enumerate_group(n: usize) -> Result<Vec<Permutation>> {
    if n == 0 || n > MAX_ENUM_DEGREE {
        return Err(Error::DegreeOutOfRange(n));
    }
    let mut out = Vec::with_capacity(factorial(n));
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(Permutation::from_valid(cur.clone()));
        // next lexicographic permutation
        let Some(i) = (0..n - 1).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).expect("successor exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    Ok(out)
}

/// `S_n` with the data needed to evaluate class functions of `π⁻¹σ` quickly.
#[derive(Debug)]
pub struct SymmetricGroup {
    n: usize,
    elements: Vec<Permutation>,
    classes: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    inverse: Vec<usize>,
}

impl SymmetricGroup {
    fn build(n: usize) -> Result<Self> {
        let elements = enumerate_group(n)?;
        let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut classes = Vec::new();
        let class_of = elements
            .iter()
            .map(|p| {
                let t = p.cycle_type();
                *ids.entry(t.clone()).or_insert_with(|| {
                    classes.push(t);
                    classes.len() - 1
                })
            })
            .collect();
        let inverse = elements.iter().map(|p| p.inverse().rank()).collect();
        Ok(Self { n, elements, classes, class_of, inverse })
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Permutation] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Permutation {
        &self.elements[i]
    }

    /// Cycle types indexed by class id.
    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.class_of[i]
    }

    pub fn inverse_index(&self, i: usize) -> usize {
        self.inverse[i]
    }

    /// Index of `π_i⁻¹ σ_j`.
    pub fn relative(&self, i: usize, j: usize) -> usize {
        let pi_inv = &self.elements[self.inverse[i]].image;
        let sigma = &self.elements[j].image;
        let n = self.n;
        let mut rank = 0;
        let mut img = [0usize; MAX_ENUM_DEGREE];
        for t in 0..n {
            img[t] = pi_inv[sigma[t]];
        }
        for t in 0..n {
            let smaller = img[t + 1..n].iter().filter(|&&v| v < img[t]).count();
            rank = rank * (n - t) + smaller;
        }
        rank
    }

    /// The `n! × n!` matrix `f(π⁻¹σ)` of a class function given per class id.
    pub fn class_matrix(&self, f: &[f64]) -> DMatrix<f64> {
        let m = self.order();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] = f[self.class_of[self.relative(i, j)]];
            }
        }
        out
    }
}

static GROUPS: Lazy<RwLock<HashMap<usize, Arc<SymmetricGroup>>>> = Lazy::new(|| RwLock::new(HashMap::new()));

/// Shared, lazily built `S_n`.
pub fn symmetric_group(n: usize) -> Result<Arc<SymmetricGroup>> {
    if let Some(g) = GROUPS.read().expect("group cache poisoned").get(&n) {
        return Ok(g.clone());
    }
    let g = Arc::new(SymmetricGroup::build(n)?);
    Ok(GROUPS.write().expect("group cache poisoned").entry(n).or_insert(g).clone())
}

/// Dense matrix over a fixed enumeration of `S_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatrix {
    pub n: usize,
    pub entries: DMatrix<f64>,
    /// Set when the matrix is a pseudo-inverse of a singular Gram matrix.
    pub pseudo_inverse: bool,
}

impl GroupMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
}

fn check_matrix_degree(n: usize) -> Result<()> {
    if n == 0 || n > MAX_MATRIX_DEGREE {
        return Err(Error::DegreeOutOfRange(n));
    }
    Ok(())
}

/// `G_{π,σ}(q) = q^{#(π⁻¹σ)}`.
pub fn gram_matrix(n: usize, q: f64) -> Result<GroupMatrix> {
    check_matrix_degree(n)?;
    let g = symmetric_group(n)?;
    let f: Vec<f64> = g.classes().iter().map(|t| q.powi(t.len() as i32)).collect();
    Ok(GroupMatrix { n, entries: g.class_matrix(&f), pseudo_inverse: false })
}

/// Values of `Wg(q)` per class of `S_n`, and whether a pseudo-inverse was used.
fn weingarten_class_values(n: usize, q: f64) -> Result<(Vec<f64>, bool)> {
    let g = symmetric_group(n)?;
    let scale = q.powi(n as i32);
    // G / q^n has unit diagonal, which keeps the solve well scaled
    let f: Vec<f64> = g.classes().iter().map(|t| q.powi(t.len() as i32 - n as i32)).collect();
    let a = g.class_matrix(&f);
    let m = g.order();
    let (inv, pinv) = if q >= n as f64 {
        let lu = a.clone().lu();
        let id = DMatrix::<f64>::identity(m, m);
        let mut x = lu.solve(&id).ok_or_else(|| Error::InvalidParameter("singular Gram matrix".into()))?;
        let resid = &id - &a * &x;
        if let Some(dx) = lu.solve(&resid) {
            x += dx;
        }
        (x, false)
    } else {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let p = svd
            .pseudo_inverse(PINV_CUTOFF * smax)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (p, true)
    };
    let mut vals = vec![0.0; g.classes().len()];
    for j in 0..m {
        vals[g.class_of(j)] = inv[(0, j)] / scale;
    }
    Ok((vals, pinv))
}

type CacheKey = (usize, u64, u64);

static WG_CACHE: Lazy<RwLock<HashMap<CacheKey, Arc<GroupMatrix>>>> = Lazy::new(|| RwLock::new(HashMap::new()));

fn cached<F>(key: CacheKey, build: F) -> Result<Arc<GroupMatrix>>
where
    F: FnOnce() -> Result<GroupMatrix>,
{
    if let Some(m) = WG_CACHE.read().expect("weingarten cache poisoned").get(&key) {
        return Ok(m.clone());
    }
    let m = Arc::new(build()?);
    Ok(WG_CACHE.write().expect("weingarten cache poisoned").entry(key).or_insert(m).clone())
}

/// `Wg(q) = G(q)⁻¹`, or its pseudo-inverse when `q < n`.
pub fn weingarten_matrix(n: usize, q: f64) -> Result<Arc<GroupMatrix>> {
    check_matrix_degree(n)?;
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("local dimension {q} must be >= 1")));
    }
    cached((n, q.to_bits(), 0f64.to_bits()), || {
        let g = symmetric_group(n)?;
        let (vals, pinv) = weingarten_class_values(n, q)?;
        Ok(GroupMatrix { n, entries: g.class_matrix(&vals), pseudo_inverse: pinv })
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weingarten coefficients of a Haar gate followed by a depolarizing channel
/// of rate `gamma` on each replica: for `n_F` common fixed points of `π, σ`,
/// `Σ_i C(n_F, i) (γ/q)^i (1−γ)^{n−i} Wg^{(n−i)}` with `i` fixed points
/// removed from `π⁻¹σ`.
pub fn noisy_weingarten(n: usize, q: f64, gamma: f64) -> Result<Arc<GroupMatrix>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidRate(gamma));
    }
    if gamma == 0.0 {
        return weingarten_matrix(n, q);
    }
    check_matrix_degree(n)?;
    cached((n, q.to_bits(), gamma.to_bits()), || {
        let g = symmetric_group(n)?;
        // Wg^{(m)} per cycle type for every m ≤ n; m = 0 is the empty product
        let mut by_type: HashMap<Vec<usize>, f64> = HashMap::new();
        by_type.insert(Vec::new(), 1.0);
        let mut pinv = false;
        for m in 1..=n {
            let gm = symmetric_group(m)?;
            let (vals, p) = weingarten_class_values(m, q)?;
            pinv |= p;
            for (t, v) in gm.classes().iter().zip(vals) {
                by_type.insert(t.clone(), v);
            }
        }
        // value depends on (class of π⁻¹σ, n_F)
        let mut table: HashMap<(usize, usize), f64> = HashMap::new();
        let order = g.order();
        let mut out = DMatrix::zeros(order, order);
        for i in 0..order {
            for j in 0..order {
                let c = g.class_of(g.relative(i, j));
                let nf = (0..n)
                    .filter(|&t| g.element(i).image()[t] == t && g.element(j).image()[t] == t)
                    .count();
                let v = *table.entry((c, nf)).or_insert_with(|| {
                    let mut ty = g.classes()[c].clone();
                    let mut total = 0.0;
                    for removed in 0..=nf {
                        let w = binomial(nf, removed)
                            * (gamma / q).powi(removed as i32)
                            * (1.0 - gamma).powi((n - removed) as i32);
                        if w != 0.0 {
                            total += w * by_type[&ty];
                        }
                        // drop one 1-cycle (sorted descending, so the last entry)
                        if removed < nf {
                            debug_assert_eq!(ty.last(), Some(&1));
                            ty.pop();
                        }
                    }
                    total
                });
                out[(i, j)] = v;
            }
        }
        Ok(GroupMatrix { n, entries: out, pseudo_inverse: pinv })
    })
}
