//! Replica tensor-network contraction for brickwork chains.
//!
//! After averaging, every site carries a vector over `S_n` (`n = 2k`) plus one
//! extra basis state `O` for the initial operator. A gate on two sites maps
//! `|s₁⟩⟩|s₂⟩⟩` to `Σ_ρ J[s₁][s₂][ρ] |ρ⟩⟩|ρ⟩⟩` with
//! `J[s₁][s₂][ρ] = Σ_δ W̃g_{ρδ}(d², γ) Ĝ[s₁][δ] Ĝ[s₂][δ]`, where `Ĝ` holds the
//! overlaps `⟨⟨δ|s⟩⟩`. The state is kept as an MPS in this (non-orthogonal)
//! basis and closed at the end by a product of per-site top weights.
//!
//! Because the gate output is diagonal in `ρ`, the two-site SVD splits into
//! one SVD per `ρ`, truncated jointly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::circuits::{layer_supports, CircuitSpec};
use crate::error::{Error, Result};
use crate::weingarten::{noisy_weingarten, symmetric_group};

pub const DEFAULT_CHI_MPS: usize = 256;
pub const DEFAULT_THRESHOLD: f64 = 1e-12;
/// Truncation errors above this are flagged on the result.
pub const REPORT_THRESHOLD: f64 = 1e-6;
pub const MAX_SITES: usize = 24;

/// Plaquette weights with the first two indices running over `S_n ∪ {O}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaquetteTensor {
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    pub d: f64,
    /// `|S_n|`; the index `order` is the operator state `O`.
    pub order: usize,
    /// `Ĝ[s][δ]`, row-major `(order+1) × order`.
    overlaps: Vec<f64>,
    /// `W̃g_{ρδ}(d², γ)`, row-major `order × order`.
    weingarten: Vec<f64>,
}

impl PlaquetteTensor {
    pub fn o_index(&self) -> usize {
        self.order
    }

    pub fn phys_dim(&self) -> usize {
        self.order + 1
    }

    pub fn overlap(&self, s: usize, delta: usize) -> f64 {
        self.overlaps[s * self.order + delta]
    }

    pub fn wg(&self, rho: usize, delta: usize) -> f64 {
        self.weingarten[rho * self.order + delta]
    }

    /// `J[s₁][s₂][ρ]`.
    pub fn get(&self, s1: usize, s2: usize, rho: usize) -> f64 {
        (0..self.order)
            .map(|d| self.wg(rho, d) * self.overlap(s1, d) * self.overlap(s2, d))
            .sum()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > 2 {
        return Err(Error::InvalidParameter(format!(
            "replica contraction supports k = 1 or 2, got {k}"
        )));
    }
    Ok(())
}

pub fn plaquette_weights(k: usize, d: f64, gamma: f64) -> Result<PlaquetteTensor> {
    check_k(k)?;
    let n = 2 * k;
    let g = symmetric_group(n)?;
    let order = g.order();
    let wg = noisy_weingarten(n, d * d, gamma)?;
    let mut overlaps = vec![0.0; (order + 1) * order];
    for s in 0..order {
        for delta in 0..order {
            overlaps[s * order + delta] = d.powi(g.element(g.relative(delta, s)).cycles() as i32);
        }
    }
    // ⟨⟨δ|P^{⊗n}⟩⟩ for a traceless single-site Pauli
    for delta in 0..order {
        let p = g.element(delta);
        overlaps[order * order + delta] = if p.even_cycles_only() { d.powi(p.cycles() as i32) } else { 0.0 };
    }
    let weingarten = wg.entries.transpose().as_slice().to_vec();
    Ok(PlaquetteTensor { k, n, gamma, d, order, overlaps, weingarten })
}

/// Top weights per site (`S_n` then `O`) and the bottom weights of the
/// operator site, `d^{#σ} 1_E(σ)`.
pub fn boundary_weights(k: usize, d: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_k(k)?;
    let n = 2 * k;
    let g = symmetric_group(n)?;
    let mut top: Vec<f64> = g
        .elements()
        .iter()
        .map(|p| d.powi(p.cycles() as i32 + 2 * p.even_cycles_only() as i32 - 2))
        .collect();
    top.push(d.powi(n as i32 - 2));
    let bottom = g
        .elements()
        .iter()
        .map(|p| if p.even_cycles_only() { d.powi(p.cycles() as i32) } else { 0.0 })
        .collect();
    Ok((top, bottom))
}

/// Largest replica state, in amplitudes, contracted without compression.
pub const EXACT_MAX_STATES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contraction {
    /// Exact when the full replica state fits in [`EXACT_MAX_STATES`].
    Auto,
    Mps,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtnOptions {
    pub method: Contraction,
    pub chi_mps: usize,
    pub threshold: f64,
    /// Skip gates acting only on sites outside the causal cone.
    pub pin_lightcone: bool,
    pub initial_site: Option<usize>,
}

impl Default for RtnOptions {
    fn default() -> Self {
        Self {
            method: Contraction::Auto,
            chi_mps: DEFAULT_CHI_MPS,
            threshold: DEFAULT_THRESHOLD,
            pin_lightcone: true,
            initial_site: None,
        }
    }
}

/// Depth series of `ν̄_k` from one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RtnResult {
    /// `values[t−1]` is the moment after `t` layers.
    pub values: Vec<f64>,
    /// Accumulated `Σ √(discarded/total)` after each layer.
    pub truncation_error: Vec<f64>,
    /// Largest MPS bond reached; 0 for an exact contraction.
    pub max_bond: usize,
    pub method: Contraction,
}

impl RtnResult {
    pub fn value(&self) -> f64 {
        *self.values.last().expect("at least one layer")
    }

    pub fn error(&self) -> f64 {
        *self.truncation_error.last().expect("at least one layer")
    }

    pub fn flagged(&self) -> bool {
        self.error() > REPORT_THRESHOLD
    }
}

/// Orthonormal coordinates for the span of the local replica states.
///
/// The `(2k)!` permutations are linearly dependent on `(C^d)^{⊗2k}` once
/// `d < 2k`, so coefficients over them carry a gauge redundancy that inflates
/// bond dimensions. The MPS therefore stores coordinates `y` in an
/// orthonormal basis of the span, with `coords[:, s]` the image of state `s`.
#[derive(Debug, Clone)]
struct LocalBasis {
    coords: DMatrix<f64>,
    /// Top weights as a covector on the coordinates.
    top: DVector<f64>,
}

const BASIS_CUTOFF: f64 = 1e-12;

impl LocalBasis {
    fn new(plaq: &PlaquetteTensor, top: &[f64]) -> Result<Self> {
        let m = plaq.phys_dim();
        let o = plaq.o_index();
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for a in 0..plaq.order {
            for b in 0..plaq.order {
                gram[(a, b)] = plaq.overlap(b, a);
            }
            gram[(a, o)] = plaq.overlap(o, a);
            gram[(o, a)] = plaq.overlap(o, a);
        }
        gram[(o, o)] = plaq.d.powi(plaq.n as i32);
        let eig = gram.symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        let kept: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > BASIS_CUTOFF * lmax).collect();
        let dim = kept.len();
        let mut coords = DMatrix::zeros(dim, m);
        let mut top_y = DVector::zeros(dim);
        let top_v = DVector::from_column_slice(top);
        for (row, &i) in kept.iter().enumerate() {
            let v = eig.eigenvectors.column(i);
            let l = eig.eigenvalues[i];
            for s in 0..m {
                coords[(row, s)] = l.sqrt() * v[s];
            }
            top_y[row] = v.dot(&top_v) / l.sqrt();
        }
        // the top weights must be a functional of the operator, not of the gauge
        let residual = (coords.transpose() * &top_y - &top_v).amax();
        if residual > 1e-8 * top_v.amax() {
            return Err(Error::InvalidParameter(format!(
                "top boundary is not a function of the replica state (residual {residual:e})"
            )));
        }
        Ok(Self { coords, top: top_y })
    }

    fn dim(&self) -> usize {
        self.coords.nrows()
    }
}

/// Sizes at or below which the two-site tensor is decomposed by a full SVD.
const FULL_SVD_MAX: usize = 384;
const OVERSAMPLE: usize = 16;
const POWER_ITERATIONS: usize = 2;

/// `m = U·diag(s)·Vᵀ` with thin factors. nalgebra's bidiagonal SVD can
/// misreport singular values of nearly rank-one inputs, which are common
/// here, so the decomposition goes through faer.
fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a.thin_svd().expect("SVD of a finite matrix converges");
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let k = s.nrows();
    (
        DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)]),
        DVector::from_fn(k, |i, _| s[i]),
        DMatrix::from_fn(m.ncols(), k, |i, j| v[(i, j)]),
    )
}

/// Two-site tensor `θ = Σ_ρ b_ρ ⊗ b_ρ ⊗ X_ρ`, seen as a matrix with rows
/// `(y₁, a)` at `y₁·l + a` and columns `(y₂, c)` at `y₂·r + c`.
struct TwoSite<'a> {
    blocks: Vec<DMatrix<f64>>,
    coords: &'a DMatrix<f64>,
    l: usize,
    r: usize,
    p: usize,
}

struct Split {
    u: DMatrix<f64>,
    s: DVector<f64>,
    vt: DMatrix<f64>,
    /// `√(discarded/total)` in the Frobenius norm.
    discarded: f64,
}

impl TwoSite<'_> {
    fn dense(&self) -> DMatrix<f64> {
        let (l, r, p) = (self.l, self.r, self.p);
        let mut out = DMatrix::zeros(p * l, p * r);
        for y1 in 0..p {
            for y2 in 0..p {
                let mut m = DMatrix::<f64>::zeros(l, r);
                for (rho, x) in self.blocks.iter().enumerate() {
                    let w = self.coords[(y1, rho)] * self.coords[(y2, rho)];
                    if w != 0.0 {
                        m += x * w;
                    }
                }
                out.view_mut((y1 * l, y2 * r), (l, r)).copy_from(&m);
            }
        }
        out
    }

    /// `θ·ω` for `ω` of shape `(p·r) × s`.
    fn apply(&self, omega: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, r, p) = (self.l, self.r, self.p);
        let s = omega.ncols();
        let mut out = DMatrix::zeros(p * l, s);
        for (rho, x) in self.blocks.iter().enumerate() {
            let mut w = DMatrix::<f64>::zeros(r, s);
            for y2 in 0..p {
                let c = self.coords[(y2, rho)];
                if c != 0.0 {
                    w += omega.rows(y2 * r, r) * c;
                }
            }
            let z = x * w;
            for y1 in 0..p {
                let c = self.coords[(y1, rho)];
                if c != 0.0 {
                    let mut dst = out.rows_mut(y1 * l, l);
                    dst += &z * c;
                }
            }
        }
        out
    }

    /// `θᵀ·u` for `u` of shape `(p·l) × s`.
    fn apply_t(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, r, p) = (self.l, self.r, self.p);
        let s = u.ncols();
        let mut out = DMatrix::zeros(p * r, s);
        for (rho, x) in self.blocks.iter().enumerate() {
            let mut w = DMatrix::<f64>::zeros(l, s);
            for y1 in 0..p {
                let c = self.coords[(y1, rho)];
                if c != 0.0 {
                    w += u.rows(y1 * l, l) * c;
                }
            }
            let z = x.tr_mul(&w);
            for y2 in 0..p {
                let c = self.coords[(y2, rho)];
                if c != 0.0 {
                    let mut dst = out.rows_mut(y2 * r, r);
                    dst += &z * c;
                }
            }
        }
        out
    }

    /// `‖θ‖² = Σ_{ρρ'} (b_ρ·b_ρ')² ⟨X_ρ, X_ρ'⟩`.
    fn norm_sq(&self) -> f64 {
        let gram = self.coords.tr_mul(self.coords);
        let m = self.blocks.len();
        let mut total = 0.0;
        for a in 0..m {
            for b in a..m {
                let g = gram[(a, b)];
                if g == 0.0 {
                    continue;
                }
                let v = g * g * self.blocks[a].dot(&self.blocks[b]);
                total += if a == b { v } else { 2.0 * v };
            }
        }
        total
    }

    /// Keeps at most `chi` singular triples above `threshold·s_max`. Large
    /// tensors use a randomized range finder seeded by `seed`, so results are
    /// reproducible; the discarded weight is measured against the exact norm.
    fn truncated_svd(&self, chi: usize, threshold: f64, seed: u64) -> Option<Split> {
        let rows = self.p * self.l;
        let cols = self.p * self.r;
        let small = rows.min(cols);
        let (u, s, vt, total) = if small <= FULL_SVD_MAX || chi + OVERSAMPLE >= small {
            let theta = self.dense();
            let total = theta.norm_squared();
            let (u, s, v) = thin_svd(&theta);
            (u, s, v.transpose(), total)
        } else {
            let width = chi + OVERSAMPLE;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let omega = DMatrix::from_fn(cols, width, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut q = self.apply(&omega).qr().q();
            for _ in 0..POWER_ITERATIONS {
                let z = self.apply_t(&q).qr().q();
                q = self.apply(&z).qr().q();
            }
            // B = Qᵀθ = (θᵀQ)ᵀ
            let bt = self.apply_t(&q);
            let (ub, s, vb) = thin_svd(&bt);
            (&q * vb, s, ub.transpose(), self.norm_sq())
        };
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&x, &y| s[y].total_cmp(&s[x]).then(x.cmp(&y)));
        let smax = idx.first().map(|&j| s[j]).unwrap_or(0.0);
        if !(smax > 0.0) || !(total > 0.0) {
            return None;
        }
        let keep = idx.iter().take(chi).take_while(|&&j| s[j] >= threshold * smax).count();
        let kept = &idx[..keep];
        let kept_w: f64 = kept.iter().map(|&j| s[j] * s[j]).sum();
        let discarded = ((total - kept_w).max(0.0) / total).sqrt();
        let u = DMatrix::from_fn(rows, keep, |row, c| u[(row, kept[c])]);
        let vt = DMatrix::from_fn(keep, cols, |c, col| vt[(kept[c], col)]);
        let s = DVector::from_iterator(keep, kept.iter().map(|&j| s[j]));
        Some(Split { u, s, vt, discarded })
    }
}

/// Site tensor with shape `(left, phys, right)`, row-major.
#[derive(Debug, Clone)]
struct Site {
    left: usize,
    right: usize,
    data: Vec<f64>,
}

struct Mps {
    phys: usize,
    sites: Vec<Site>,
    /// Orthogonality center.
    center: usize,
    log_norm: f64,
}

impl Mps {
    fn product(states: &[usize], basis: &LocalBasis) -> Self {
        let sites = states
            .iter()
            .map(|&s| Site { left: 1, right: 1, data: basis.coords.column(s).iter().copied().collect() })
            .collect();
        Self { phys: basis.dim(), sites, center: 0, log_norm: 0.0 }
    }

    fn max_bond(&self) -> usize {
        self.sites.iter().map(|s| s.right).max().unwrap_or(1)
    }

    /// Moves the center one site to the right with a QR of `(l·p) × r`.
    fn shift_right(&mut self) {
        let i = self.center;
        let p = self.phys;
        let (l, r) = (self.sites[i].left, self.sites[i].right);
        let a = DMatrix::from_row_slice(l * p, r, &self.sites[i].data);
        let qr = a.qr();
        let (q, rm) = (qr.q(), qr.r());
        let kdim = q.ncols();
        self.sites[i] = Site { left: l, right: kdim, data: row_major(&q) };
        let next = &self.sites[i + 1];
        let b = DMatrix::from_row_slice(next.left, p * next.right, &next.data);
        let nb = rm * b;
        let right = next.right;
        self.sites[i + 1] = Site { left: kdim, right, data: row_major(&nb) };
        self.center += 1;
    }

    /// Moves the center one site to the left with a QR of the transpose.
    fn shift_left(&mut self) {
        let i = self.center;
        let p = self.phys;
        let (l, r) = (self.sites[i].left, self.sites[i].right);
        let a = DMatrix::from_row_slice(l, p * r, &self.sites[i].data);
        let qr = a.transpose().qr();
        let (q, rm) = (qr.q(), qr.r());
        let kdim = q.ncols();
        self.sites[i] = Site { left: kdim, right: r, data: row_major(&q.transpose()) };
        let prev = &self.sites[i - 1];
        let b = DMatrix::from_row_slice(prev.left * p, prev.right, &prev.data);
        let nb = b * rm.transpose();
        let left = prev.left;
        self.sites[i - 1] = Site { left, right: kdim, data: row_major(&nb) };
        self.center -= 1;
    }

    fn move_center(&mut self, target: usize) {
        while self.center < target {
            self.shift_right();
        }
        while self.center > target {
            self.shift_left();
        }
    }

    /// `⟨⟨δ|A⟩⟩` on the physical leg for every permutation `δ`, each as an
    /// `l × r` matrix.
    fn overlaps(&self, i: usize, basis: &LocalBasis, order: usize) -> Vec<DMatrix<f64>> {
        let site = &self.sites[i];
        let (l, r, p) = (site.left, site.right, self.phys);
        let mut out = vec![DMatrix::zeros(l, r); order];
        for a in 0..l {
            for y in 0..p {
                let row = &site.data[(a * p + y) * r..(a * p + y + 1) * r];
                for (delta, m) in out.iter_mut().enumerate() {
                    let c = basis.coords[(y, delta)];
                    for (b, v) in row.iter().enumerate() {
                        m[(a, b)] += c * v;
                    }
                }
            }
        }
        out
    }

    /// Applies the averaged gate to sites `(i, i+1)`; returns the discarded
    /// relative weight. The center must be at `i` or `i+1`; afterwards it is
    /// at `i+1` when `center_right` holds and at `i` otherwise.
    fn apply_gate(
        &mut self,
        i: usize,
        plaq: &PlaquetteTensor,
        basis: &LocalBasis,
        chi: usize,
        threshold: f64,
        center_right: bool,
    ) -> f64 {
        debug_assert!(self.center == i || self.center == i + 1);
        let order = plaq.order;
        let p = self.phys;
        let a = self.overlaps(i, basis, order);
        let b = self.overlaps(i + 1, basis, order);
        let (l, r) = (self.sites[i].left, self.sites[i + 1].right);
        let y: Vec<DMatrix<f64>> = a.iter().zip(&b).map(|(x, z)| x * z).collect();
        let mut blocks = Vec::with_capacity(order);
        for rho in 0..order {
            let mut x = DMatrix::<f64>::zeros(l, r);
            for (delta, yd) in y.iter().enumerate() {
                let w = plaq.wg(rho, delta);
                if w != 0.0 {
                    x += yd * w;
                }
            }
            blocks.push(x);
        }
        let op = TwoSite { blocks, coords: &basis.coords, l, r, p };
        let split = op.truncated_svd(chi, threshold, i as u64);
        let Some(split) = split else {
            // the state vanished; keep a single zero bond
            self.sites[i] = Site { left: l, right: 1, data: vec![0.0; l * p] };
            self.sites[i + 1] = Site { left: 1, right: r, data: vec![0.0; p * r] };
            self.center = if center_right { i + 1 } else { i };
            return 0.0;
        };
        let keep = split.s.len();
        let norm = split.s.norm();
        self.log_norm += norm.ln();
        let mut left = vec![0.0; l * p * keep];
        let mut right = vec![0.0; keep * p * r];
        for col in 0..keep {
            let s = split.s[col] / norm;
            let (su, sv) = if center_right { (1.0, s) } else { (s, 1.0) };
            for y1 in 0..p {
                for a in 0..l {
                    left[(a * p + y1) * keep + col] = split.u[(y1 * l + a, col)] * su;
                }
            }
            for c in 0..p * r {
                right[col * p * r + c] = split.vt[(col, c)] * sv;
            }
        }
        self.sites[i] = Site { left: l, right: keep, data: left };
        self.sites[i + 1] = Site { left: keep, right: r, data: right };
        self.center = if center_right { i + 1 } else { i };
        split.discarded
    }

    /// Contracts every physical leg with the top covector.
    fn close(&self, top: &DVector<f64>) -> f64 {
        let p = self.phys;
        let mut v = vec![1.0f64];
        for site in &self.sites {
            let mut next = vec![0.0; site.right];
            for (a, va) in v.iter().enumerate() {
                if *va == 0.0 {
                    continue;
                }
                for (y, w) in top.iter().enumerate().take(p) {
                    let coef = va * w;
                    let row = &site.data[(a * p + y) * site.right..(a * p + y + 1) * site.right];
                    for (n, x) in next.iter_mut().zip(row) {
                        *n += coef * x;
                    }
                }
            }
            v = next;
        }
        v[0] * self.log_norm.exp()
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn validate(n_sites: usize, depth: usize, k: usize, d: f64, gamma: f64, opts: &RtnOptions) -> Result<usize> {
    check_k(k)?;
    if n_sites < 2 || n_sites > MAX_SITES {
        return Err(Error::InvalidParameter(format!("chain length {n_sites} outside 2..={MAX_SITES}")));
    }
    if depth == 0 {
        return Err(Error::InvalidCircuit("depth must be at least 1".into()));
    }
    if !(d >= 2.0) {
        return Err(Error::InvalidParameter(format!("local dimension {d} must be >= 2")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidRate(gamma));
    }
    if opts.chi_mps == 0 {
        return Err(Error::InvalidParameter("bond dimension must be positive".into()));
    }
    let site = opts.initial_site.unwrap_or(n_sites / 2);
    if site >= n_sites {
        return Err(Error::SiteOutOfRange { site, n_sites });
    }
    Ok(site)
}

/// Contracts the replica lattice of a brickwork chain with per-gate noise of
/// rate `gamma` on each two-site support, returning `ν̄_k` after every layer.
pub fn contract_brickwork_series(
    n_sites: usize,
    depth: usize,
    k: usize,
    d: f64,
    gamma: f64,
    opts: &RtnOptions,
) -> Result<RtnResult> {
    let start = validate(n_sites, depth, k, d, gamma, opts)?;
    let plaq = plaquette_weights(k, d, gamma)?;
    let (top, _) = boundary_weights(k, d)?;
    let basis = LocalBasis::new(&plaq, &top)?;
    let fits = basis.dim().checked_pow(n_sites as u32).is_some_and(|v| v <= EXACT_MAX_STATES);
    match opts.method {
        Contraction::Exact if !fits => {
            return Err(Error::InvalidParameter(format!(
                "exact replica state for {n_sites} sites exceeds {EXACT_MAX_STATES} amplitudes"
            )))
        }
        Contraction::Exact | Contraction::Auto if fits => {
            return exact_series(n_sites, depth, start, &plaq, &basis, opts.pin_lightcone)
        }
        _ => {}
    }
    let mut states = vec![0usize; n_sites];
    states[start] = plaq.o_index();
    let mut mps = Mps::product(&states, &basis);
    let layout = CircuitSpec::chain(n_sites, depth);
    let mut cone = vec![false; n_sites];
    cone[start] = true;
    let mut err = 0.0;
    let mut values = Vec::with_capacity(depth);
    let mut errors = Vec::with_capacity(depth);
    let mut max_bond = 1;
    for layer in 0..depth {
        let mut gates = layer_gates(&layout, layer, &mut cone, opts.pin_lightcone)?;
        // sweep toward the side where the center is
        let rightward = mps.center <= n_sites / 2;
        if !rightward {
            gates.reverse();
        }
        for i in gates {
            let target = if mps.center <= i { i } else { i + 1 };
            mps.move_center(target);
            err += mps.apply_gate(i, &plaq, &basis, opts.chi_mps, opts.threshold, rightward);
            max_bond = max_bond.max(mps.max_bond());
        }
        values.push(mps.close(&basis.top));
        errors.push(err);
    }
    Ok(RtnResult { values, truncation_error: errors, max_bond, method: Contraction::Mps })
}

/// Gates of one layer, as left sites, that touch the cone; marks their sites.
fn layer_gates(layout: &CircuitSpec, layer: usize, cone: &mut [bool], pin: bool) -> Result<Vec<usize>> {
    let gates: Vec<usize> = layer_supports(layout, layer)?
        .into_iter()
        .map(|s| s[0])
        .filter(|&i| !pin || cone[i] || cone[i + 1])
        .collect();
    for &i in &gates {
        cone[i] = true;
        cone[i + 1] = true;
    }
    Ok(gates)
}

/// Uncompressed contraction in the orthonormal local coordinates.
fn exact_series(
    n_sites: usize,
    depth: usize,
    start: usize,
    plaq: &PlaquetteTensor,
    basis: &LocalBasis,
    pin: bool,
) -> Result<RtnResult> {
    let p = basis.dim();
    let order = plaq.order;
    let len = p.pow(n_sites as u32);
    // ψ as a column-major tensor, site 0 fastest
    let mut psi = vec![1.0];
    for site in 0..n_sites {
        let s = if site == start { plaq.o_index() } else { 0 };
        let col = basis.coords.column(s);
        let mut next = Vec::with_capacity(psi.len() * p);
        for y in 0..p {
            next.extend(psi.iter().map(|v| v * col[y]));
        }
        psi = next;
    }
    // pair overlaps K[δ][(y₁, y₂)] = b_δ[y₁] b_δ[y₂] with y₁ fastest
    let pair = DMatrix::from_fn(order, p * p, |delta, yy| basis.coords[(yy % p, delta)] * basis.coords[(yy / p, delta)]);
    let wg = DMatrix::from_row_slice(order, order, &plaq.weingarten);
    let wk = &wg * &pair;
    let layout = CircuitSpec::chain(n_sites, depth);
    let mut cone = vec![false; n_sites];
    cone[start] = true;
    let mut values = Vec::with_capacity(depth);
    for layer in 0..depth {
        for i in layer_gates(&layout, layer, &mut cone, pin)? {
            // view ψ as (inner, y₁, y₂, outer) with inner = p^i
            let inner = p.pow(i as u32);
            let outer = len / (inner * p * p);
            let batch = inner * outer;
            let mut v = DMatrix::<f64>::zeros(p * p, batch);
            for o in 0..outer {
                for yy in 0..p * p {
                    let src = &psi[(o * p * p + yy) * inner..(o * p * p + yy + 1) * inner];
                    for (j, x) in src.iter().enumerate() {
                        v[(yy, o * inner + j)] = *x;
                    }
                }
            }
            let out = pair.tr_mul(&(&wk * v));
            for o in 0..outer {
                for yy in 0..p * p {
                    let dst = &mut psi[(o * p * p + yy) * inner..(o * p * p + yy + 1) * inner];
                    for (j, x) in dst.iter_mut().enumerate() {
                        *x = out[(yy, o * inner + j)];
                    }
                }
            }
        }
        // close from the slowest site down
        let mut acc = psi.clone();
        while acc.len() > 1 {
            let chunk = acc.len() / p;
            acc = (0..chunk).map(|j| (0..p).map(|y| basis.top[y] * acc[y * chunk + j]).sum()).collect();
        }
        values.push(acc[0]);
    }
    Ok(RtnResult { values, truncation_error: vec![0.0; depth], max_bond: 0, method: Contraction::Exact })
}

/// `ν̄_k` after `depth` layers; see [`contract_brickwork_series`].
pub fn contract_brickwork(
    n_sites: usize,
    depth: usize,
    k: usize,
    d: f64,
    gamma: f64,
    chi_mps: usize,
    threshold: f64,
) -> Result<RtnResult> {
    let opts = RtnOptions { chi_mps, threshold, ..RtnOptions::default() };
    contract_brickwork_series(n_sites, depth, k, d, gamma, &opts)
}

/// Dense contraction without any compression, for short chains.
pub fn contract_dense(n_sites: usize, depth: usize, k: usize, d: f64, gamma: f64, initial_site: Option<usize>) -> Result<Vec<f64>> {
    let opts = RtnOptions { initial_site, ..RtnOptions::default() };
    let start = validate(n_sites, depth, k, d, gamma, &opts)?;
    let plaq = plaquette_weights(k, d, gamma)?;
    let (top, _) = boundary_weights(k, d)?;
    let p = plaq.phys_dim();
    let len = p.checked_pow(n_sites as u32).filter(|v| *v <= 1 << 24).ok_or_else(|| {
        Error::InvalidParameter(format!("dense replica state for {n_sites} sites is too large"))
    })?;
    let stride = |s: usize| p.pow(s as u32);
    let mut psi = vec![0.0; len];
    psi[plaq.o_index() * stride(start)] = 1.0;
    let mut j = vec![0.0; p * p * plaq.order];
    for s1 in 0..p {
        for s2 in 0..p {
            for rho in 0..plaq.order {
                j[(s1 * p + s2) * plaq.order + rho] = plaq.get(s1, s2, rho);
            }
        }
    }
    let layout = CircuitSpec::chain(n_sites, depth);
    let mut out = Vec::with_capacity(depth);
    for layer in 0..depth {
        for support in layer_supports(&layout, layer)? {
            let (sa, sb) = (stride(support[0]), stride(support[1]));
            let mut next = vec![0.0; len];
            for (idx, v) in psi.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                let s1 = (idx / sa) % p;
                let s2 = (idx / sb) % p;
                let base = idx - s1 * sa - s2 * sb;
                for rho in 0..plaq.order {
                    next[base + rho * sa + rho * sb] += v * j[(s1 * p + s2) * plaq.order + rho];
                }
            }
            psi = next;
        }
        let mut total = 0.0;
        for (idx, v) in psi.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let mut w = *v;
            let mut rest = idx;
            for _ in 0..n_sites {
                w *= top[rest % p];
                rest /= p;
            }
            total += w;
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmpu::{rmpu_moment_exact, RmpuParams};

    #[test]
    fn plaquette_examples() {
        let g = symmetric_group(4).unwrap();
        for gamma in [0.0, 0.1, 0.5, 1.0] {
            let j = plaquette_weights(2, 2.0, gamma).unwrap();
            for rho in 0..24 {
                let want = if rho == 0 { 1.0 } else { 0.0 };
                assert!((j.get(0, 0, rho) - want).abs() < 1e-12, "gamma={gamma} rho={rho}");
            }
            for s in 0..24 {
                let nf = g.element(s).fixed_points() as i32;
                let want = (1.0 - gamma).powi(4 - nf);
                assert!((j.get(s, s, s) - want).abs() < 1e-12, "gamma={gamma} s={s}");
            }
        }
        let tau = g.elements().iter().position(|p| p.image() == [1, 0, 3, 2]).unwrap();
        assert!((plaquette_weights(2, 2.0, 0.1).unwrap().get(tau, tau, tau) - 0.6561).abs() < 1e-12);
        assert!(plaquette_weights(3, 2.0, 0.0).is_err());
    }

    #[test]
    fn boundary_examples() {
        let g = symmetric_group(4).unwrap();
        let (top, bottom) = boundary_weights(2, 2.0).unwrap();
        assert_eq!(top.len(), 25);
        assert_eq!(top[24], 4.0);
        for (i, p) in g.elements().iter().enumerate() {
            if p.even_cycles_only() && p.cycles() == 2 {
                assert_eq!(top[i], 4.0);
            }
            if p.cycles() == 1 {
                assert_eq!(bottom[i], 2.0);
            }
        }
        assert_eq!(bottom[0], 0.0);
    }

    #[test]
    fn single_gate_matches_transfer_matrix() {
        let r = contract_brickwork(2, 1, 2, 2.0, 0.0, DEFAULT_CHI_MPS, DEFAULT_THRESHOLD).unwrap();
        let want = rmpu_moment_exact(&RmpuParams::new(2, 1, 2, 0.0)).unwrap();
        assert!((r.value() - want).abs() < 1e-10 * want, "{} vs {want}", r.value());
        let noisy = contract_brickwork(2, 1, 2, 2.0, 0.3, DEFAULT_CHI_MPS, DEFAULT_THRESHOLD).unwrap();
        let want = rmpu_moment_exact(&RmpuParams::new(2, 1, 2, 0.3)).unwrap();
        assert!((noisy.value() - want).abs() < 1e-10 * want);
    }

    fn opts(method: Contraction, site: Option<usize>) -> RtnOptions {
        RtnOptions { method, initial_site: site, chi_mps: 1024, ..RtnOptions::default() }
    }

    #[test]
    fn both_methods_match_dense_contraction() {
        for (n, depth, gamma, site) in [(3, 4, 0.0, None), (4, 5, 0.0, None), (4, 4, 0.1, Some(0)), (3, 3, 0.2, Some(2))] {
            let dense = contract_dense(n, depth, 2, 2.0, gamma, site).unwrap();
            for method in [Contraction::Mps, Contraction::Exact] {
                let r = contract_brickwork_series(n, depth, 2, 2.0, gamma, &opts(method, site)).unwrap();
                assert_eq!(r.method, method);
                for (a, b) in r.values.iter().zip(&dense) {
                    assert!((a - b).abs() < 1e-9 * b.abs(), "N={n} {method:?} {a} vs {b}");
                }
                assert!(r.error() < 1e-6);
            }
        }
    }

    #[test]
    fn auto_picks_exact_for_short_chains() {
        let r = contract_brickwork(4, 2, 2, 2.0, 0.0, 16, 1e-12).unwrap();
        assert_eq!(r.method, Contraction::Exact);
        assert_eq!(r.error(), 0.0);
        let long = contract_brickwork(8, 1, 2, 2.0, 0.0, 16, 1e-12).unwrap();
        assert_eq!(long.method, Contraction::Mps);
        let too_big = RtnOptions { method: Contraction::Exact, ..RtnOptions::default() };
        assert!(contract_brickwork_series(12, 1, 2, 2.0, 0.0, &too_big).is_err());
    }

    #[test]
    fn lightcone_pinning_is_exact() {
        for method in [Contraction::Mps, Contraction::Exact] {
            let pinned = contract_brickwork_series(4, 3, 2, 2.0, 0.0, &opts(method, Some(0))).unwrap();
            let free = RtnOptions { pin_lightcone: false, ..opts(method, Some(0)) };
            let free = contract_brickwork_series(4, 3, 2, 2.0, 0.0, &free).unwrap();
            for (a, b) in pinned.values.iter().zip(&free.values) {
                assert!((a - b).abs() <= 1e-12 * a.abs(), "{method:?} {a} vs {b}");
            }
        }
    }

    #[test]
    fn first_moment_is_one_without_noise() {
        let r = contract_brickwork(8, 10, 1, 2.0, 0.0, DEFAULT_CHI_MPS, DEFAULT_THRESHOLD).unwrap();
        for v in &r.values {
            assert!((v - 1.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn deep_circuit_reaches_global_haar() {
        // one global gate on all 4 qubits
        let global = rmpu_moment_exact(&RmpuParams::new(4, 3, 2, 0.0)).unwrap();
        let r = contract_brickwork(4, 60, 2, 2.0, 0.0, DEFAULT_CHI_MPS, DEFAULT_THRESHOLD).unwrap();
        assert!((r.value() - global).abs() < 1e-6 * global, "{} vs {global}", r.value());
    }

    #[test]
    fn bond_truncation_is_consistent() {
        let exact = contract_brickwork_series(6, 6, 2, 2.0, 0.05, &opts(Contraction::Exact, None)).unwrap();
        let mut previous = f64::INFINITY;
        for chi in [16, 48, 160] {
            let o = RtnOptions { chi_mps: chi, ..opts(Contraction::Mps, None) };
            let r = contract_brickwork_series(6, 6, 2, 2.0, 0.05, &o).unwrap();
            assert!(r.max_bond <= chi);
            assert!(r.error() < previous);
            previous = r.error();
            for (a, b) in r.values.iter().zip(&exact.values) {
                let diff = (a - b).abs() / b.abs();
                assert!(diff <= r.error().max(1e-9), "chi={chi} diff={diff} est={}", r.error());
            }
        }
    }

    #[test]
    fn default_bond_is_accurate_on_six_sites() {
        let exact = contract_brickwork_series(6, 8, 2, 2.0, 0.0, &opts(Contraction::Exact, None)).unwrap();
        let o = RtnOptions { method: Contraction::Mps, ..RtnOptions::default() };
        let mps = contract_brickwork_series(6, 8, 2, 2.0, 0.0, &o).unwrap();
        for (a, b) in mps.values.iter().zip(&exact.values) {
            assert!((a - b).abs() < 1e-5 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(contract_brickwork(6, 2, 3, 2.0, 0.0, 16, 1e-12).is_err());
        assert!(contract_brickwork(1, 2, 2, 2.0, 0.0, 16, 1e-12).is_err());
        assert!(contract_brickwork(4, 0, 2, 2.0, 0.0, 16, 1e-12).is_err());
        assert!(contract_brickwork(4, 2, 2, 2.0, 1.5, 16, 1e-12).is_err());
    }
}
