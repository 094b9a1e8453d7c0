use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use pauli_spectrum::error::{Error, Result};
use pauli_spectrum::experiments::{
    fit_kappa_table, read_kappa_csv, read_moments_csv, run_ensemble, run_histograms, run_mse, selftest,
    thresholds_from_kappa, write_histogram_csv, write_kappa_csv, write_moments_csv, write_mse_csv, write_sidecar, Engine,
    ExperimentConfig,
};
use pauli_spectrum::spectrum::Quantity;

#[derive(Parser)]
#[command(version, about = "Pauli spectrum moments of operators under noisy random circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides circuit.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides outputs.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// simulator, rtn, rmpu_exact or rmpu_asymptotic.
    #[arg(long)]
    engine: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Moments CSV produced by `moments`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "kappa.csv")]
    output: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// mu, nu or nu_over_f2k.
    #[arg(long, default_value = "mu")]
    quantity: String,
    /// Depth window; defaults to [N/2, 2N].
    #[arg(long, num_args = 2, value_names = ["T_MIN", "T_MAX"])]
    window: Option<Vec<f64>>,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Fit table produced by `fit-kappa`.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble moments over the configured sweep.
    Moments(Common),
    /// Averaged Pauli spectrum histograms.
    SpectrumHist(Common),
    /// Exact staircase moments from the transfer matrix.
    RmpuExact(Common),
    /// Leading-order staircase moments.
    RmpuAsymptotic(Common),
    /// Brickwork moments from the replica tensor network.
    Rtn(Common),
    /// Mean squared error of Pauli truncation.
    TruncateMse(Common),
    /// Fits decay rates to a moments file.
    FitKappa(FitArgs),
    /// Locates the sign change of the decay rate.
    Threshold(ThresholdArgs),
    /// Runs the built-in oracle comparisons.
    Selftest {
        #[arg(long, default_value_t = 400)]
        realizations: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn load(common: &Common, forced: Option<Engine>) -> Result<ExperimentConfig> {
    set_threads(common.threads)?;
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.circuit.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.outputs.dir = out.clone();
    }
    if let Some(name) = &common.engine {
        cfg.engine = Engine::parse(name)?;
    }
    if let Some(engine) = forced {
        if common.engine.is_some() && cfg.engine != engine {
            return Err(Error::Config(format!("this subcommand always uses engine {}", engine.name())));
        }
        cfg.engine = engine;
    }
    if let Some(n) = common.realizations {
        cfg.n_realizations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(path: &Path, command: &str, cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let side = write_sidecar(path, command, cfg, start.elapsed().as_secs_f64())?;
    println!("wrote {} and {}", path.display(), side.display());
    Ok(())
}

fn moments(common: &Common, forced: Option<Engine>, command: &str) -> Result<()> {
    let start = Instant::now();
    let cfg = load(common, forced)?;
    let rows = run_ensemble(&cfg)?;
    let path = cfg.outputs.dir.join(&cfg.outputs.moments);
    write_moments_csv(&path, cfg.engine, &rows)?;
    finish(&path, command, &cfg, start)
}

fn quantity(name: &str) -> Result<Quantity> {
    [Quantity::Mu, Quantity::Nu, Quantity::NuOverF2k]
        .into_iter()
        .find(|q| q.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown quantity {name:?}")))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Moments(c) => moments(&c, None, "moments")?,
        Command::RmpuExact(c) => moments(&c, Some(Engine::RmpuExact), "rmpu-exact")?,
        Command::RmpuAsymptotic(c) => moments(&c, Some(Engine::RmpuAsymptotic), "rmpu-asymptotic")?,
        Command::Rtn(c) => moments(&c, Some(Engine::Rtn), "rtn")?,
        Command::SpectrumHist(c) => {
            let start = Instant::now();
            let cfg = load(&c, Some(Engine::Simulator))?;
            let path = cfg.outputs.dir.join(&cfg.outputs.histogram);
            write_histogram_csv(&path, &run_histograms(&cfg)?)?;
            finish(&path, "spectrum-hist", &cfg, start)?;
        }
        Command::TruncateMse(c) => {
            let start = Instant::now();
            let cfg = load(&c, Some(Engine::Simulator))?;
            let path = cfg.outputs.dir.join(&cfg.outputs.mse);
            write_mse_csv(&path, &run_mse(&cfg)?)?;
            finish(&path, "truncate-mse", &cfg, start)?;
        }
        Command::FitKappa(a) => {
            let rows = read_moments_csv(&a.input)?;
            let window = a.window.map(|w| (w[0], w[1]));
            let fits = fit_kappa_table(&rows, quantity(&a.quantity)?, a.k, window);
            for f in &fits {
                println!(
                    "N={} gammaN={:.4} kappa={:.5} ± {:.5} over t in [{}, {}]",
                    f.n, f.gamma_n, f.kappa, f.kappa_stderr, f.t_min, f.t_max
                );
            }
            write_kappa_csv(&a.output, &fits)?;
            println!("wrote {}", a.output.display());
        }
        Command::Threshold(a) => {
            for th in thresholds_from_kappa(&read_kappa_csv(&a.input)?)? {
                println!(
                    "N={} gamma_c N = {:.4} ± {:.4} ({} sign changes)",
                    th.n, th.gamma_c_n, th.stderr, th.sign_changes
                );
            }
        }
        Command::Selftest { realizations, threads } => {
            set_threads(threads)?;
            let checks = selftest(realizations)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
