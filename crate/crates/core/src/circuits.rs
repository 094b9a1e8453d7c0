//! Circuit geometries, Haar gate sampling, noise placement and seeding.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{GateMatrix, OperatorState, DEFAULT_MAX_SITES};
use crate::pauli::Pauli;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Chain,
    Grid,
    Rmpu,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Geometry::Chain => "chain",
            Geometry::Grid => "grid",
            Geometry::Rmpu => "rmpu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacement {
    /// Single-qubit channel on every qubit once per layer. On chain and grid
    /// geometries idle qubits are included.
    PerQubitPerLayer,
    /// One channel acting jointly on the full support of each gate.
    PerGateSupport,
    None,
}

impl NoisePlacement {
    pub fn name(self) -> &'static str {
        match self {
            NoisePlacement::PerQubitPerLayer => "per_qubit_per_layer",
            NoisePlacement::PerGateSupport => "per_gate_support",
            NoisePlacement::None => "none",
        }
    }
}

/// A random circuit family. Chain and grid use `depth` layers; the staircase
/// uses overlap `r` and has `n_sites − r` gates, one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub geometry: Geometry,
    pub n_sites: usize,
    #[serde(default)]
    pub lx: Option<usize>,
    #[serde(default)]
    pub ly: Option<usize>,
    #[serde(default)]
    pub depth: usize,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub noise_placement: Option<NoisePlacement>,
    #[serde(default)]
    pub initial_site: Option<usize>,
    #[serde(default = "default_axis")]
    pub initial_axis: Pauli,
    #[serde(default)]
    pub master_seed: u64,
    /// Raises the dense-simulation site limit.
    #[serde(default)]
    pub max_sites: Option<usize>,
}

fn default_axis() -> Pauli {
    Pauli::Z
}

impl CircuitSpec {
    pub fn chain(n_sites: usize, depth: usize) -> Self {
        Self {
            geometry: Geometry::Chain,
            n_sites,
            lx: None,
            ly: None,
            depth,
            r: None,
            gamma: 0.0,
            noise_placement: None,
            initial_site: None,
            initial_axis: Pauli::Z,
            master_seed: 0,
            max_sites: None,
        }
    }

    pub fn grid(lx: usize, ly: usize, depth: usize) -> Self {
        Self {
            geometry: Geometry::Grid,
            lx: Some(lx),
            ly: Some(ly),
            ..Self::chain(lx * ly, depth)
        }
    }

    /// Staircase of `n_sites − r` gates, each on `r + 1` consecutive sites,
    /// starting from an operator on site 0.
    pub fn rmpu(n_sites: usize, r: usize) -> Self {
        Self {
            geometry: Geometry::Rmpu,
            r: Some(r),
            depth: n_sites.saturating_sub(r),
            initial_site: Some(0),
            ..Self::chain(n_sites, 0)
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_noise(mut self, placement: NoisePlacement) -> Self {
        self.noise_placement = Some(placement);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_initial_site(mut self, site: usize) -> Self {
        self.initial_site = Some(site);
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn noise(&self) -> NoisePlacement {
        self.noise_placement.unwrap_or(match self.geometry {
            Geometry::Rmpu => NoisePlacement::PerGateSupport,
            _ => NoisePlacement::PerQubitPerLayer,
        })
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        match self.geometry {
            Geometry::Grid => (self.lx.unwrap_or(self.n_sites), self.ly.unwrap_or(1)),
            _ => (self.n_sites, 1),
        }
    }

    pub fn initial(&self) -> usize {
        self.initial_site.unwrap_or(match self.geometry {
            Geometry::Chain => self.n_sites / 2,
            Geometry::Grid => {
                let (lx, ly) = self.grid_dims();
                (ly / 2) * lx + lx / 2
            }
            Geometry::Rmpu => 0,
        })
    }

    pub fn overlap(&self) -> usize {
        self.r.unwrap_or(1)
    }

    pub fn n_layers(&self) -> usize {
        match self.geometry {
            Geometry::Rmpu => self.n_sites - self.overlap(),
            _ => self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::InvalidCircuit("no sites".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidRate(self.gamma));
        }
        match self.geometry {
            Geometry::Rmpu => {
                let r = self.overlap();
                if r == 0 || r >= self.n_sites {
                    return Err(Error::InvalidCircuit(format!(
                        "staircase overlap must satisfy 1 <= r <= N-1, got r={r}, N={}",
                        self.n_sites
                    )));
                }
            }
            Geometry::Grid => {
                let (lx, ly) = self.grid_dims();
                if lx * ly != self.n_sites {
                    return Err(Error::InvalidCircuit(format!("grid {lx}x{ly} does not have {} sites", self.n_sites)));
                }
                if self.depth == 0 {
                    return Err(Error::InvalidCircuit("depth must be at least 1".into()));
                }
            }
            Geometry::Chain => {
                if self.depth == 0 {
                    return Err(Error::InvalidCircuit("depth must be at least 1".into()));
                }
            }
        }
        let site = self.initial();
        if site >= self.n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites: self.n_sites });
        }
        if self.initial_axis == Pauli::I {
            return Err(Error::InvalidCircuit("initial operator must be X, Y or Z".into()));
        }
        Ok(())
    }

    /// Product of the worst-case contraction factors of all channels, i.e. the
    /// factor multiplying a string that is non-identity on every noised site.
    pub fn fidelity(&self) -> f64 {
        let keep = 1.0 - self.gamma;
        let layers = self.n_layers();
        let count = match (self.noise(), self.geometry) {
            (NoisePlacement::None, _) => 0,
            (NoisePlacement::PerQubitPerLayer, Geometry::Rmpu) => (self.overlap() + 1) * layers,
            (NoisePlacement::PerQubitPerLayer, _) => self.n_sites * layers,
            (NoisePlacement::PerGateSupport, _) => (0..layers).map(|l| self.gates_in_layer(l)).sum(),
        };
        keep.powi(count as i32)
    }

    fn gates_in_layer(&self, layer: usize) -> usize {
        layer_supports(self, layer).map(|s| s.len()).unwrap_or(0)
    }
}

/// Gate supports of one layer.
pub fn layer_supports(spec: &CircuitSpec, layer: usize) -> Result<Vec<Vec<usize>>> {
    let layers = spec.n_layers();
    if layer >= layers {
        return Err(Error::LayerOutOfRange { layer, layers });
    }
    let n = spec.n_sites;
    Ok(match spec.geometry {
        Geometry::Chain => (layer % 2..n.saturating_sub(1)).step_by(2).map(|s| vec![s, s + 1]).collect(),
        Geometry::Rmpu => vec![(layer..=layer + spec.overlap()).collect()],
        Geometry::Grid => {
            let (lx, ly) = spec.grid_dims();
            let parity = layer % 2;
            let mut out = Vec::new();
            if (layer / 2) % 2 == 0 {
                for y in 0..ly {
                    for x in (parity..lx.saturating_sub(1)).step_by(2) {
                        out.push(vec![y * lx + x, y * lx + x + 1]);
                    }
                }
            } else {
                for y in (parity..ly.saturating_sub(1)).step_by(2) {
                    for x in 0..lx {
                        out.push(vec![y * lx + x, (y + 1) * lx + x]);
                    }
                }
            }
            out
        }
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream driving gate `gate_counter` of one realization.
pub fn gate_seed(master_seed: u64, realization: u64, gate_counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ realization) ^ gate_counter)
}

/// Stream for gate `gate_counter` of a realization.
pub fn gate_rng(master_seed: u64, realization: u64, gate_counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(gate_seed(master_seed, realization, gate_counter))
}

/// Haar-random `q × q` unitary (row-major): Ginibre sample, QR, then the
/// phases of `diag(R)` are moved into `Q`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Vec<Complex64> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = DMatrix::<Complex64>::from_fn(q, q, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    let qr = z.qr();
    let (qm, rm) = (qr.q(), qr.r());
    let mut out = vec![Complex64::new(0.0, 0.0); q * q];
    for j in 0..q {
        let d = rm[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..q {
            out[i * q + j] = qm[(i, j)] * phase;
        }
    }
    out
}

pub fn sample_haar_gate<R: Rng + ?Sized>(support: Vec<usize>, rng: &mut R) -> Result<GateMatrix> {
    let q = 1usize << support.len();
    GateMatrix::new(support, sample_haar_unitary(q, rng))
}

/// Evolves the initial operator through the whole circuit.
pub fn run_circuit(spec: &CircuitSpec, realization: u64) -> Result<OperatorState> {
    run_circuit_observed(spec, realization, |_, _| Ok(()))
}

/// Like [`run_circuit`] but calls `observe(layers_done, state)` after each
/// layer, so one run yields the whole depth series.
pub fn run_circuit_observed<F>(spec: &CircuitSpec, realization: u64, mut observe: F) -> Result<OperatorState>
where
    F: FnMut(usize, &OperatorState) -> Result<()>,
{
    spec.validate()?;
    let n = spec.n_sites;
    let limit = spec.max_sites.unwrap_or(DEFAULT_MAX_SITES);
    let mut op = OperatorState::local_pauli_with_limit(n, spec.initial(), spec.initial_axis, limit)?;
    // Sites where the operator may differ from the identity. Gates and
    // channels acting only outside this set leave the operator unchanged.
    let mut cone = vec![false; n];
    cone[spec.initial()] = true;
    let noise = if spec.gamma > 0.0 { spec.noise() } else { NoisePlacement::None };
    let mut gate_counter = 0u64;
    for layer in 0..spec.n_layers() {
        let supports = layer_supports(spec, layer)?;
        for support in supports {
            let counter = gate_counter;
            gate_counter += 1;
            if !support.iter().any(|&s| cone[s]) {
                continue;
            }
            let mut rng = gate_rng(spec.master_seed, realization, counter);
            for &s in &support {
                cone[s] = true;
            }
            op.apply_gate(&sample_haar_gate(support.clone(), &mut rng)?)?;
            match noise {
                NoisePlacement::PerGateSupport => op.apply_depolarizing_joint(spec.gamma, &support)?,
                NoisePlacement::PerQubitPerLayer if spec.geometry == Geometry::Rmpu => {
                    op.apply_depolarizing(spec.gamma, &support)?
                }
                _ => {}
            }
        }
        if noise == NoisePlacement::PerQubitPerLayer && spec.geometry != Geometry::Rmpu {
            let sites: Vec<usize> = (0..n).filter(|&s| cone[s]).collect();
            op.apply_depolarizing(spec.gamma, &sites)?;
        }
        observe(layer + 1, &op)?;
    }
    Ok(op)
}
