//! Ensemble driver, decay-rate fits, threshold location and file output.
//!
//! Every run is a pure function of its [`ExperimentConfig`]: realizations are
//! seeded from `circuit.master_seed` and reduced in index order, so the CSV
//! files are identical for any thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{run_circuit_observed, CircuitSpec, Geometry, NoisePlacement};
use crate::error::{Error, Result};
use crate::operator::{OperatorState, DEFAULT_MAX_SITES};
use crate::pauli::{pauli_transform, PauliCoefficients};
use crate::rmpu::{rmpu_moment_asymptotic, rmpu_moment_exact, RmpuParams};
use crate::rtn::{contract_brickwork_series, RtnOptions, DEFAULT_CHI_MPS, DEFAULT_THRESHOLD};
use crate::spectrum::{
    haar_moment, moment_mu, moment_nu, spectrum_histogram, MomentEstimate, Quantity, DEFAULT_BINS, DEFAULT_U_MAX,
    DEFAULT_U_MIN,
};
use crate::stats::{linear_fit, mean_stderr};
use crate::truncation::{default_np_grid, truncation_mse, MsePoint};

pub const MOMENTS_HEADER: &str = "engine,geometry,N,r,t,gamma,noise_placement,k,quantity,value,stderr,n_samples,seed";
pub const HISTOGRAM_HEADER: &str = "N,t,gamma,bin_lo,bin_hi,density,zero_mass,n_samples,seed";
pub const MSE_HEADER: &str = "N,t,gamma,N_P,mse,stderr,n_samples,seed";

/// Points within this many standard errors of the reference are left out of
/// the log-fit.
pub const SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Simulator,
    Rtn,
    RmpuExact,
    RmpuAsymptotic,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Simulator => "simulator",
            Engine::Rtn => "rtn",
            Engine::RmpuExact => "rmpu_exact",
            Engine::RmpuAsymptotic => "rmpu_asymptotic",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "simulator" => Ok(Engine::Simulator),
            "rtn" => Ok(Engine::Rtn),
            "rmpu_exact" => Ok(Engine::RmpuExact),
            "rmpu_asymptotic" => Ok(Engine::RmpuAsymptotic),
            other => Err(Error::Config(format!("unknown engine {other:?}"))),
        }
    }
}

/// Parameter lists; any list left out falls back to the circuit's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    /// Error per layer `γN`; converted to `γ` per chain length.
    #[serde(default)]
    pub gamma_n: Option<Vec<f64>>,
    #[serde(default)]
    pub n_sites: Option<Vec<usize>>,
    #[serde(default)]
    pub r: Option<Vec<usize>>,
    #[serde(default = "default_ks")]
    pub k: Vec<usize>,
    #[serde(default)]
    pub n_p: Option<Vec<usize>>,
}

fn default_ks() -> Vec<usize> {
    vec![2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtnSettings {
    #[serde(default = "default_chi")]
    pub chi_mps: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_chi() -> usize {
    DEFAULT_CHI_MPS
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for RtnSettings {
    fn default() -> Self {
        Self { chi_mps: DEFAULT_CHI_MPS, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSettings {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_u_min")]
    pub u_min: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_u_min() -> f64 {
    DEFAULT_U_MIN
}

fn default_u_max() -> f64 {
    DEFAULT_U_MAX
}

impl Default for HistogramSettings {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, u_min: DEFAULT_U_MIN, u_max: DEFAULT_U_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_moments")]
    pub moments: String,
    #[serde(default = "default_histogram")]
    pub histogram: String,
    #[serde(default = "default_mse")]
    pub mse: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_moments() -> String {
    "moments.csv".into()
}

fn default_histogram() -> String {
    "histogram.csv".into()
}

fn default_mse() -> String {
    "mse.csv".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: default_dir(), moments: default_moments(), histogram: default_histogram(), mse: default_mse() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    pub circuit: CircuitSpec,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub rtn: RtnSettings,
    #[serde(default)]
    pub histogram: HistogramSettings,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_engine() -> Engine {
    Engine::Simulator
}

fn default_realizations() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn new(engine: Engine, circuit: CircuitSpec, n_realizations: usize) -> Self {
        Self {
            engine,
            n_realizations,
            circuit,
            sweep: Sweep { k: default_ks(), ..Sweep::default() },
            rtn: RtnSettings::default(),
            histogram: HistogramSettings::default(),
            outputs: Outputs::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.engine == Engine::Simulator && self.n_realizations < 2 {
            return Err(Error::Config("simulator ensembles need n_realizations >= 2".into()));
        }
        if self.sweep.gammas.is_some() && self.sweep.gamma_n.is_some() {
            return Err(Error::Config("give either sweep.gammas or sweep.gamma_n".into()));
        }
        if self.sweep.k.is_empty() || self.sweep.k.contains(&0) {
            return Err(Error::Config("sweep.k must list moment indices >= 1".into()));
        }
        if self.circuit.geometry == Geometry::Grid && self.sweep.n_sites.is_some() {
            return Err(Error::Config("grid sizes come from circuit.lx and circuit.ly".into()));
        }
        if matches!(self.engine, Engine::RmpuExact | Engine::RmpuAsymptotic) && self.circuit.geometry != Geometry::Rmpu {
            return Err(Error::Config(format!("engine {} needs the rmpu geometry", self.engine.name())));
        }
        if self.engine == Engine::Rtn {
            if self.circuit.geometry != Geometry::Chain {
                return Err(Error::Config("engine rtn needs the chain geometry".into()));
            }
            if self.sweep.k.iter().any(|&k| k > 2) {
                return Err(Error::Config("engine rtn supports k <= 2".into()));
            }
        }
        let limit = self.circuit.max_sites.unwrap_or(DEFAULT_MAX_SITES);
        for spec in self.points()? {
            spec.validate()?;
            if self.engine == Engine::Simulator && spec.n_sites > limit {
                return Err(Error::Config(format!("N = {} exceeds the simulator limit {limit}", spec.n_sites)));
            }
        }
        Ok(())
    }

    pub fn depths(&self) -> Vec<usize> {
        match self.circuit.geometry {
            Geometry::Rmpu => vec![],
            _ => self.sweep.depths.clone().unwrap_or_else(|| vec![self.circuit.depth]),
        }
    }

    pub fn np_grid(&self) -> Vec<usize> {
        self.sweep.n_p.clone().unwrap_or_else(default_np_grid)
    }

    /// Circuit specs of the sweep, one per `(N, r, γ)`, each with the largest
    /// requested depth.
    pub fn points(&self) -> Result<Vec<CircuitSpec>> {
        let base = &self.circuit;
        let sizes = self.sweep.n_sites.clone().unwrap_or_else(|| vec![base.n_sites]);
        let overlaps: Vec<Option<usize>> = match (&self.sweep.r, base.geometry) {
            (Some(rs), Geometry::Rmpu) => rs.iter().map(|&r| Some(r)).collect(),
            (Some(_), _) => return Err(Error::Config("sweep.r applies to the rmpu geometry only".into())),
            (None, _) => vec![base.r],
        };
        let depth = self.depths().into_iter().max().unwrap_or(base.depth);
        let mut out = Vec::new();
        for &n in &sizes {
            let gammas: Vec<f64> = match (&self.sweep.gammas, &self.sweep.gamma_n) {
                (Some(g), _) => g.clone(),
                (None, Some(gn)) => gn.iter().map(|x| x / n as f64).collect(),
                (None, None) => vec![base.gamma],
            };
            for &r in &overlaps {
                for &gamma in &gammas {
                    let mut spec = base.clone();
                    spec.n_sites = n;
                    spec.gamma = gamma;
                    if base.geometry == Geometry::Rmpu {
                        spec.r = r;
                        spec.depth = n.saturating_sub(spec.overlap());
                    } else {
                        spec.depth = depth;
                    }
                    if sizes.len() > 1 && base.geometry == Geometry::Chain {
                        // a fixed site only makes sense for one size
                        spec.initial_site = None;
                    }
                    out.push(spec);
                }
            }
        }
        Ok(out)
    }
}

fn estimate(quantity: Quantity, k: usize, samples: &[f64], meta: &CircuitSpec) -> MomentEstimate {
    let m = mean_stderr(samples);
    MomentEstimate { quantity, k, value: m.mean, stderr: m.stderr, n_samples: m.n, meta: meta.clone() }
}

fn exact(quantity: Quantity, k: usize, value: f64, stderr: f64, meta: &CircuitSpec) -> MomentEstimate {
    MomentEstimate { quantity, k, value, stderr, n_samples: 0, meta: meta.clone() }
}

fn initial_operator(spec: &CircuitSpec) -> Result<OperatorState> {
    let limit = spec.max_sites.unwrap_or(DEFAULT_MAX_SITES);
    OperatorState::local_pauli_with_limit(spec.n_sites, spec.initial(), spec.initial_axis, limit)
}

/// Runs `n_realizations` circuits of `spec` and returns, per realization and
/// requested depth, the result of `measure` on the Pauli coefficients. Depth
/// 0 means the initial operator.
pub fn sample_depths<T, F>(spec: &CircuitSpec, depths: &[usize], n_realizations: usize, measure: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(usize, &PauliCoefficients) -> Result<T> + Sync,
{
    spec.validate()?;
    if let Some(&t) = depths.iter().find(|&&t| t > spec.n_layers()) {
        return Err(Error::InvalidCircuit(format!("depth {t} beyond the {} layers of the circuit", spec.n_layers())));
    }
    (0..n_realizations as u64)
        .into_par_iter()
        .map(|r| {
            let mut found: BTreeMap<usize, T> = BTreeMap::new();
            if depths.contains(&0) {
                found.insert(0, measure(0, &pauli_transform(&initial_operator(spec)?)?)?);
            }
            let last = depths.iter().copied().max().unwrap_or(0);
            if last > 0 {
                let mut run = spec.clone();
                if spec.geometry != Geometry::Rmpu {
                    run.depth = last;
                }
                run_circuit_observed(&run, r, |t, op| {
                    if depths.contains(&t) && !found.contains_key(&t) {
                        found.insert(t, measure(t, &pauli_transform(op)?)?);
                    }
                    Ok(())
                })?;
            }
            depths
                .iter()
                .map(|t| found.remove(t).ok_or_else(|| Error::InvalidCircuit(format!("depth {t} listed twice"))))
                .collect()
        })
        .collect()
}

/// Mean and standard error of `μ_k`, `ν_k` and `ν_k/F^{2k}` per depth.
pub fn simulate_moments(spec: &CircuitSpec, depths: &[usize], ks: &[usize], n_realizations: usize) -> Result<Vec<MomentEstimate>> {
    let samples = sample_depths(spec, depths, n_realizations, |_, c| {
        ks.iter().map(|&k| Ok((moment_mu(c, k)?, moment_nu(c, k)?))).collect::<Result<Vec<_>>>()
    })?;
    let mut out = Vec::new();
    for (di, &t) in depths.iter().enumerate() {
        let mut meta = spec.clone();
        if spec.geometry != Geometry::Rmpu {
            meta.depth = t;
        }
        let f = if t == 0 { 1.0 } else { meta.fidelity() };
        for (ki, &k) in ks.iter().enumerate() {
            let mu: Vec<f64> = samples.iter().map(|s| s[di][ki].0).collect();
            let nu: Vec<f64> = samples.iter().map(|s| s[di][ki].1).collect();
            let scaled: Vec<f64> = nu.iter().map(|v| v / f.powi(2 * k as i32)).collect();
            out.push(estimate(Quantity::Mu, k, &mu, &meta));
            out.push(estimate(Quantity::Nu, k, &nu, &meta));
            out.push(estimate(Quantity::NuOverF2k, k, &scaled, &meta));
        }
    }
    Ok(out)
}

fn rmpu_params(spec: &CircuitSpec, k: usize) -> RmpuParams {
    RmpuParams::new(spec.n_sites, spec.overlap(), k, spec.gamma)
}

/// Moments of every sweep point with the configured engine.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<Vec<MomentEstimate>> {
    config.validate()?;
    let ks = &config.sweep.k;
    let mut out = Vec::new();
    for spec in config.points()? {
        match config.engine {
            Engine::Simulator => {
                let depths = match spec.geometry {
                    Geometry::Rmpu => vec![spec.n_layers()],
                    _ => config.depths(),
                };
                out.extend(simulate_moments(&spec, &depths, ks, config.n_realizations)?);
            }
            Engine::RmpuExact | Engine::RmpuAsymptotic => {
                for &k in ks {
                    let p = rmpu_params(&spec, k);
                    let v = match config.engine {
                        Engine::RmpuExact => rmpu_moment_exact(&p)?,
                        _ => rmpu_moment_asymptotic(&p)?,
                    };
                    let q = if spec.gamma == 0.0 { Quantity::Mu } else { Quantity::Nu };
                    out.push(exact(q, k, v, 0.0, &spec));
                    out.push(exact(Quantity::NuOverF2k, k, v / p.fidelity().powi(2 * k as i32), 0.0, &spec));
                }
            }
            Engine::Rtn => {
                let depths = config.depths();
                let max_depth = depths.iter().copied().max().unwrap_or(0);
                let opts = RtnOptions {
                    chi_mps: config.rtn.chi_mps,
                    threshold: config.rtn.threshold,
                    initial_site: spec.initial_site,
                    ..RtnOptions::default()
                };
                for &k in ks {
                    let series = contract_brickwork_series(spec.n_sites, max_depth, k, 2.0, spec.gamma, &opts)?;
                    for &t in &depths {
                        if t == 0 {
                            return Err(Error::Config("engine rtn needs depths >= 1".into()));
                        }
                        let mut meta = spec.clone().with_noise(NoisePlacement::PerGateSupport);
                        meta.depth = t;
                        let v = series.values[t - 1];
                        // the stderr column carries the truncation estimate
                        let err = series.truncation_error[t - 1] * v.abs();
                        if spec.gamma == 0.0 {
                            out.push(exact(Quantity::Mu, k, v, err, &meta));
                        }
                        out.push(exact(Quantity::Nu, k, v, err, &meta));
                        let f = meta.fidelity().powi(2 * k as i32);
                        out.push(exact(Quantity::NuOverF2k, k, v / f, err / f, &meta));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Ensemble-averaged `Π_O(u)` histogram at one depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEstimate {
    pub meta: CircuitSpec,
    pub bins: Vec<(f64, f64)>,
    pub density: Vec<f64>,
    pub density_stderr: Vec<f64>,
    pub zero_mass: f64,
    pub overflow_mass: f64,
    pub n_samples: usize,
}

pub fn histogram_ensemble(
    spec: &CircuitSpec,
    depths: &[usize],
    n_realizations: usize,
    settings: &HistogramSettings,
) -> Result<Vec<HistogramEstimate>> {
    let samples = sample_depths(spec, depths, n_realizations, |_, c| {
        spectrum_histogram(c, settings.bins, settings.u_min, settings.u_max)
    })?;
    let mut out = Vec::new();
    for (di, &t) in depths.iter().enumerate() {
        let mut meta = spec.clone();
        meta.depth = t;
        let hs: Vec<_> = samples.iter().map(|s| &s[di]).collect();
        let bins = hs.first().map(|h| h.bins.clone()).unwrap_or_default();
        let mut density = Vec::with_capacity(bins.len());
        let mut density_stderr = Vec::with_capacity(bins.len());
        for b in 0..bins.len() {
            let col: Vec<f64> = hs.iter().map(|h| h.density[b]).collect();
            let m = mean_stderr(&col);
            density.push(m.mean);
            density_stderr.push(m.stderr);
        }
        let zero: Vec<f64> = hs.iter().map(|h| h.zero_mass).collect();
        let over: Vec<f64> = hs.iter().map(|h| h.overflow_mass).collect();
        out.push(HistogramEstimate {
            meta,
            bins,
            density,
            density_stderr,
            zero_mass: mean_stderr(&zero).mean,
            overflow_mass: mean_stderr(&over).mean,
            n_samples: hs.len(),
        });
    }
    Ok(out)
}

pub fn run_histograms(config: &ExperimentConfig) -> Result<Vec<HistogramEstimate>> {
    config.validate()?;
    let mut out = Vec::new();
    for spec in config.points()? {
        out.extend(histogram_ensemble(&spec, &config.depths(), config.n_realizations, &config.histogram)?);
    }
    Ok(out)
}

/// MSE series with the circuit it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSeries {
    pub meta: CircuitSpec,
    pub points: Vec<MsePoint>,
}

pub fn run_mse(config: &ExperimentConfig) -> Result<Vec<MseSeries>> {
    config.validate()?;
    let grid = config.np_grid();
    let mut out = Vec::new();
    for spec in config.points()? {
        for t in config.depths() {
            let meta = spec.clone().with_depth(t);
            let full = 1usize << (2 * meta.n_sites);
            let g: Vec<usize> = grid.iter().copied().filter(|&n| n <= full).collect();
            let points = truncation_mse(&meta, &g, config.n_realizations)?;
            out.push(MseSeries { meta, points });
        }
    }
    Ok(out)
}

/// One point of a depth or noise series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

impl SeriesPoint {
    pub fn new(x: f64, value: f64, stderr: f64) -> Self {
        Self { x, value, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Decay rate per layer; negative when the deviation grows.
    pub kappa: f64,
    pub kappa_stderr: f64,
    /// Depth range of the points that entered the fit.
    pub window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
}

/// Default depth window `[N/2, 2N]`.
pub fn default_window(n_sites: usize) -> (f64, f64) {
    (n_sites as f64 / 2.0, 2.0 * n_sites as f64)
}

/// Fits `ln|y − reference| = c − κ t` by weighted least squares inside
/// `window`, after dropping points within [`SIGNIFICANCE`] standard errors of
/// the reference. Zero standard errors everywhere give an unweighted fit.
pub fn fit_kappa_against(series: &[SeriesPoint], reference: f64, window: Option<(f64, f64)>) -> Result<FitResult> {
    let kept: Vec<&SeriesPoint> = series
        .iter()
        .filter(|p| window.is_none_or(|(lo, hi)| p.x >= lo && p.x <= hi))
        .filter(|p| {
            let dev = (p.value - reference).abs();
            dev > 0.0 && dev > SIGNIFICANCE * p.stderr
        })
        .collect();
    if kept.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 significant points for a decay fit, have {}",
            kept.len()
        )));
    }
    let x: Vec<f64> = kept.iter().map(|p| p.x).collect();
    let y: Vec<f64> = kept.iter().map(|p| (p.value - reference).abs().ln()).collect();
    let weighted = kept.iter().all(|p| p.stderr > 0.0);
    let sigma: Vec<f64> = kept.iter().map(|p| p.stderr / (p.value - reference).abs()).collect();
    let fit = linear_fit(&x, &y, weighted.then_some(sigma.as_slice()))?;
    let window = (x.iter().copied().fold(f64::INFINITY, f64::min), x.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(FitResult { kappa: -fit.slope, kappa_stderr: fit.slope_stderr, window, r_squared: fit.r_squared, n_points: kept.len() })
}

/// [`fit_kappa_against`] with the Haar reference `(2k−1)!! = 3` and no window.
pub fn fit_kappa(series: &[SeriesPoint]) -> Result<FitResult> {
    fit_kappa_against(series, haar_moment(2), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub stderr: f64,
}

/// Number of sign flips of `value` along the series.
pub fn sign_changes(series: &[SeriesPoint]) -> usize {
    series.windows(2).filter(|w| (w[0].value > 0.0) != (w[1].value > 0.0)).count()
}

/// Zero of the series by linear interpolation across the first bracketing
/// pair, with the error propagated from the two endpoint errors.
pub fn locate_threshold(series: &[SeriesPoint]) -> Result<Threshold> {
    for w in series.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.value > 0.0) != (b.value > 0.0) {
            let dx = b.x - a.x;
            let dk = a.value - b.value;
            let value = a.x + dx * a.value / dk;
            let da = dx * (-b.value) / (dk * dk);
            let db = dx * a.value / (dk * dk);
            let stderr = ((da * a.stderr).powi(2) + (db * b.stderr).powi(2)).sqrt();
            return Ok(Threshold { value, stderr });
        }
    }
    Err(Error::InvalidParameter("series has no sign change".into()))
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().has_headers(false).from_path(path)?)
}

fn split_header(h: &str) -> Vec<&str> {
    h.split(',').collect()
}

pub fn write_moments_csv(path: &Path, engine: Engine, rows: &[MomentEstimate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(split_header(MOMENTS_HEADER))?;
    for m in rows {
        let s = &m.meta;
        let r = if s.geometry == Geometry::Rmpu { Some(s.overlap()) } else { s.r };
        let placement = if s.gamma > 0.0 { s.noise() } else { NoisePlacement::None };
        w.write_record([
            engine.name().to_string(),
            s.geometry.name().to_string(),
            s.n_sites.to_string(),
            fmt_opt(r),
            s.depth.to_string(),
            s.gamma.to_string(),
            placement.name().to_string(),
            m.k.to_string(),
            m.quantity.name().to_string(),
            m.value.to_string(),
            m.stderr.to_string(),
            m.n_samples.to_string(),
            s.master_seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, rows: &[HistogramEstimate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(split_header(HISTOGRAM_HEADER))?;
    for h in rows {
        let s = &h.meta;
        for ((lo, hi), d) in h.bins.iter().zip(&h.density) {
            w.write_record([
                s.n_sites.to_string(),
                s.depth.to_string(),
                s.gamma.to_string(),
                lo.to_string(),
                hi.to_string(),
                d.to_string(),
                h.zero_mass.to_string(),
                h.n_samples.to_string(),
                s.master_seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mse_csv(path: &Path, rows: &[MseSeries]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(split_header(MSE_HEADER))?;
    for series in rows {
        let s = &series.meta;
        for p in &series.points {
            w.write_record([
                s.n_sites.to_string(),
                s.depth.to_string(),
                s.gamma.to_string(),
                p.n_p.to_string(),
                p.mse.to_string(),
                p.stderr.to_string(),
                p.n_samples.to_string(),
                s.master_seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Provenance written next to every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub command: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub config: ExperimentConfig,
}

pub fn write_sidecar(data_path: &Path, command: &str, config: &ExperimentConfig, wall_time_seconds: f64) -> Result<PathBuf> {
    let path = data_path.with_extension("json");
    let sidecar = Sidecar {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds,
        threads: rayon::current_num_threads(),
        config: config.clone(),
    };
    let mut f = File::create(&path)?;
    f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(path)
}

/// One line of a moments CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub engine: String,
    pub geometry: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub r: Option<usize>,
    pub t: usize,
    pub gamma: f64,
    pub noise_placement: String,
    pub k: usize,
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub fn read_moments_csv(path: &Path) -> Result<Vec<MomentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MomentRow>, _>>()?)
}

pub const KAPPA_HEADER: &str = "engine,geometry,N,gamma,gamma_n,k,quantity,kappa,kappa_stderr,t_min,t_max,r_squared,n_points";

/// Decay fit of one depth series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub engine: String,
    pub geometry: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub gamma_n: f64,
    pub k: usize,
    pub quantity: String,
    pub kappa: f64,
    pub kappa_stderr: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits `κ` to every `(engine, geometry, N, γ)` depth series of one quantity,
/// against the Haar value `(2k−1)!!`. Series without enough significant
/// points are skipped. `window = None` uses [`default_window`].
pub fn fit_kappa_table(rows: &[MomentRow], quantity: Quantity, k: usize, window: Option<(f64, f64)>) -> Vec<KappaRow> {
    let mut groups: Vec<((String, String, usize, u64), Vec<SeriesPoint>)> = Vec::new();
    for row in rows.iter().filter(|r| r.quantity == quantity.name() && r.k == k) {
        let key = (row.engine.clone(), row.geometry.clone(), row.n, row.gamma.to_bits());
        let point = SeriesPoint::new(row.t as f64, row.value, row.stderr);
        match groups.iter_mut().find(|(g, _)| *g == key) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((key, vec![point])),
        }
    }
    let mut out = Vec::new();
    for ((engine, geometry, n, gamma_bits), mut pts) in groups {
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        let gamma = f64::from_bits(gamma_bits);
        let w = window.unwrap_or_else(|| default_window(n));
        if let Ok(fit) = fit_kappa_against(&pts, haar_moment(k), Some(w)) {
            out.push(KappaRow {
                engine,
                geometry,
                n,
                gamma,
                gamma_n: gamma * n as f64,
                k,
                quantity: quantity.name().to_string(),
                kappa: fit.kappa,
                kappa_stderr: fit.kappa_stderr,
                t_min: fit.window.0,
                t_max: fit.window.1,
                r_squared: fit.r_squared,
                n_points: fit.n_points,
            });
        }
    }
    out
}

pub fn write_kappa_csv(path: &Path, rows: &[KappaRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(split_header(KAPPA_HEADER))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kappa_csv(path: &Path) -> Result<Vec<KappaRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<KappaRow>, _>>()?)
}

/// Threshold `γ_c N` of one system size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma_c_n: f64,
    pub stderr: f64,
    pub sign_changes: usize,
}

/// Locates the sign change of `κ(γN)` separately for every `N`.
pub fn thresholds_from_kappa(rows: &[KappaRow]) -> Result<Vec<ThresholdRow>> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let mut series: Vec<SeriesPoint> = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| SeriesPoint::new(r.gamma_n, r.kappa, r.kappa_stderr))
                .collect();
            series.sort_by(|a, b| a.x.total_cmp(&b.x));
            let th = locate_threshold(&series)?;
            Ok(ThresholdRow { n, gamma_c_n: th.value, stderr: th.stderr, sign_changes: sign_changes(&series) })
        })
        .collect()
}

/// Outcome of one built-in consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn within(a: f64, b: f64, sigma: f64) -> bool {
    (a - b).abs() <= 3.0 * sigma + 1e-12 * b.abs().max(1.0)
}

/// Small versions of the oracle comparisons: simulator against the staircase
/// transfer matrix and against the replica contraction, the exact local
/// moment, and the Weingarten inverse.
pub fn selftest(n_realizations: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let spec = CircuitSpec::chain(5, 1);
    let c = pauli_transform(&initial_operator(&spec)?)?;
    let mu = moment_mu(&c, 2)?;
    out.push(check("local operator moment", mu == 1024.0, format!("mu_2 = {mu}, expected 1024")));

    let g = crate::weingarten::gram_matrix(3, 4.0)?;
    let wg = crate::weingarten::weingarten_matrix(3, 4.0)?;
    let prod = &g.entries * &wg.entries * &g.entries;
    let err = (&prod - &g.entries).amax() / g.entries.amax();
    out.push(check("weingarten pseudo-inverse", err < 1e-10, format!("relative residual {err:e}")));

    let stair = CircuitSpec::rmpu(3, 1).with_gamma(0.05).with_seed(17);
    let sim = simulate_moments(&stair, &[stair.n_layers()], &[2], n_realizations)?;
    let nu = sim.iter().find(|m| m.quantity == Quantity::Nu).expect("nu estimate");
    let want = rmpu_moment_exact(&rmpu_params(&stair, 2))?;
    out.push(check(
        "staircase simulator vs transfer matrix",
        within(nu.value, want, nu.stderr),
        format!("{:.6} ± {:.6} vs {want:.6}", nu.value, nu.stderr),
    ));

    let chain = CircuitSpec::chain(4, 3).with_gamma(0.02).with_noise(NoisePlacement::PerGateSupport).with_seed(23);
    let sim = simulate_moments(&chain, &[3], &[2], n_realizations)?;
    let nu = sim.iter().find(|m| m.quantity == Quantity::Nu).expect("nu estimate");
    let rtn = contract_brickwork_series(4, 3, 2, 2.0, 0.02, &RtnOptions::default())?;
    out.push(check(
        "brickwork simulator vs replica contraction",
        within(nu.value, rtn.value(), nu.stderr),
        format!("{:.6} ± {:.6} vs {:.6}", nu.value, nu.stderr, rtn.value()),
    ));
    Ok(out)
}
