//! `ringheom` command-line driver.
//!
//! Every subcommand reads an optional TOML config, applies flag overrides,
//! writes its CSV files plus `manifest.json` into the output directory and
//! exits nonzero (leaving `diagnostics.txt` behind) if anything fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use ringheom::bath::{kernel, matsubara_kernel, pade_decompose};
use ringheom::config::{Model, Regime, RunConfig};
use ringheom::experiment::{
    cl_heom_equilibrium, cl_markovian_equilibrium, cl_markovian_spectrum, cl_spectrum,
    current_sweep, risb_heom_spectrum, risb_markovian_equilibrium, risb_markovian_spectrum,
    ResponseSettings,
};
use ringheom::integrate::SteadyMethod;
use ringheom::observables::{
    find_peaks, gaussian_reference, momentum_distribution, persistent_current, write_current_csv,
    write_pdist_csv, write_pdist_with_reference_csv, write_r1_csv, write_spectrum_csv,
    CurrentSweep, SpectrumResult,
};
use ringheom::sector::SectorSolver;
use ringheom::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "ringheom",
    version,
    about = "Dissipative charged rotor on an Aharonov-Bohm ring"
)]
struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true, env = "RINGHEOM_OUT")]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Risb,
    Cl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Markovian,
    Heom,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    model: Option<ModelArg>,
    #[arg(long, global = true)]
    regime: Option<RegimeArg>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Reduced flux for single-point runs.
    #[arg(long, global = true, allow_hyphen_values = true)]
    flux_bar: Option<f64>,
    /// Comma-separated flux list for sweeps.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    flux: Option<Vec<f64>>,
    /// Pade order.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Hierarchy truncation depth.
    #[arg(long, global = true)]
    n_trunc: Option<usize>,
    #[arg(long, global = true)]
    n_theta: Option<usize>,
    #[arg(long, global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true)]
    n_p: Option<usize>,
    #[arg(long, global = true)]
    dp: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    eq_eps: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    damping: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Observable {
    Current,
    Peak,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium momentum distribution (pdist.csv).
    Equilibrium,
    /// Kicked-dipole spectrum (spectrum.csv, r1.csv).
    Spectrum,
    /// Persistent current against flux (current.csv).
    Current {
        /// Allow the Markovian ring equation, which misses the low-temperature current.
        #[arg(long)]
        allow_markovian: bool,
    },
    /// Pade kernel against the Matsubara sum (kernel.csv).
    KernelCheck {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
        k_list: Vec<usize>,
        /// Matsubara terms in the reference.
        #[arg(long, default_value_t = 1000)]
        terms: usize,
        /// Time window in units of `1/gamma`.
        #[arg(long, default_value_t = 5.0)]
        window: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Observable against hierarchy depth and Pade order (convergence.csv).
    Converge {
        #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
        n_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        k_list: Vec<usize>,
        #[arg(long, value_enum, default_value = "current")]
        observable: Observable,
    },
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(m) = self.model {
            c.model = match m {
                ModelArg::Risb => Model::Risb,
                ModelArg::Cl => Model::Cl,
            };
        }
        if let Some(r) = self.regime {
            c.regime = match r {
                RegimeArg::Markovian => Regime::Markovian,
                RegimeArg::Heom => Regime::Heom,
            };
        }
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.bath.eta, self.eta);
        set(&mut c.bath.gamma, self.gamma);
        set(&mut c.bath.beta, self.beta);
        set(&mut c.system.flux_bar, self.flux_bar);
        set(&mut c.cl_grid.dp, self.dp);
        set(&mut c.integrator.tol, self.tol);
        set(&mut c.integrator.horizon, self.horizon);
        set(&mut c.integrator.eq_eps, self.eq_eps);
        set(&mut c.spectrum.t_max, self.t_max);
        set(&mut c.spectrum.dt, self.dt);
        if let Some(f) = &self.flux {
            c.flux = f.clone();
        }
        if let Some(d) = self.damping {
            c.spectrum.damping = Some(d);
        }
        let seti = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        seti(&mut c.hierarchy.k, self.k);
        seti(&mut c.hierarchy.n_trunc, self.n_trunc);
        seti(&mut c.grid.n_theta, self.n_theta);
        seti(&mut c.grid.n_max, self.n_max);
        seti(&mut c.cl_grid.n_p, self.n_p);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    status: &'a str,
    wall_time_s: f64,
    outputs: &'a [String],
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn settings(c: &RunConfig) -> ResponseSettings {
    ResponseSettings {
        t_max: c.spectrum.t_max,
        dt: c.spectrum.dt,
        damping: c.spectrum.damping,
        tol: c.integrator.tol,
    }
}

/// Collects written files so the manifest can list them.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn cmd_equilibrium(c: &RunConfig, out: &mut Outputs) -> Result<()> {
    let bath = c.bath_spec()?;
    let ring = c.system;
    let dist = match (c.model, c.regime) {
        (Model::Risb, Regime::Markovian) => {
            let eq = risb_markovian_equilibrium(&ring, &c.ring_grid()?, &bath, SteadyMethod::Auto)?;
            info!("steady-state residual {:.3e}", eq.residual);
            momentum_distribution(&eq.field)?
        }
        (Model::Risb, Regime::Heom) => {
            let solver = SectorSolver::new(
                c.ring_grid()?,
                ring,
                bath,
                pade_decompose(bath.beta, c.hierarchy.k)?,
                c.hierarchy.n_trunc,
            )?;
            let eq = solver.solve(ring.flux_bar)?;
            if eq.primary_rate.is_nan() || eq.primary_rate >= c.integrator.eq_eps {
                return Err(Error::NotEquilibrated {
                    delta: eq.primary_rate,
                    threshold: c.integrator.eq_eps,
                });
            }
            momentum_distribution(&eq.primary)?
        }
        (Model::Cl, Regime::Markovian) => {
            let eq = cl_markovian_equilibrium(&ring, &c.cl_grid, &bath, SteadyMethod::Auto)?;
            let d = momentum_distribution(&eq.field)?;
            let g = gaussian_reference(&c.cl_grid, &ring, bath.beta)?;
            write_pdist_with_reference_csv(&d, &g, &out.path("pdist.csv"))?;
            report_moments(d.mean(), d.variance(), d.min_value);
            return Ok(());
        }
        (Model::Cl, Regime::Heom) => {
            let i = &c.integrator;
            let (_, eq) = cl_heom_equilibrium(
                &ring,
                &c.cl_grid,
                &bath,
                c.hierarchy.k,
                c.hierarchy.n_trunc,
                c.hierarchy.closure,
                i.horizon,
                i.check_interval,
                i.eq_eps,
                i.tol,
            )?;
            momentum_distribution(&eq.field.field(0))?
        }
    };
    write_pdist_csv(&dist, &out.path("pdist.csv"))?;
    report_moments(dist.mean(), dist.variance(), dist.min_value);
    Ok(())
}

fn report_moments(mean: f64, var: f64, min: f64) {
    println!("mean {mean:.6} variance {var:.6} most negative {min:.3e}");
}

fn spectrum_for(c: &RunConfig) -> Result<SpectrumResult> {
    let bath = c.bath_spec()?;
    let s = settings(c);
    match (c.model, c.regime) {
        (Model::Risb, Regime::Markovian) => {
            risb_markovian_spectrum(&c.system, &c.ring_grid()?, &bath, s)
        }
        (Model::Risb, Regime::Heom) => risb_heom_spectrum(
            &c.system,
            &c.ring_grid()?,
            &bath,
            c.hierarchy.k,
            c.hierarchy.n_trunc,
            s,
        ),
        (Model::Cl, Regime::Markovian) => cl_markovian_spectrum(&c.system, &c.cl_grid, &bath, s),
        (Model::Cl, Regime::Heom) => {
            let i = &c.integrator;
            let (gen, eq) = cl_heom_equilibrium(
                &c.system,
                &c.cl_grid,
                &bath,
                c.hierarchy.k,
                c.hierarchy.n_trunc,
                c.hierarchy.closure,
                i.horizon,
                i.check_interval,
                i.eq_eps,
                i.tol,
            )?;
            cl_spectrum(eq.field.as_slice(), &gen, &c.cl_grid, s)
        }
    }
}

fn cmd_spectrum(c: &RunConfig, out: &mut Outputs) -> Result<()> {
    let s = spectrum_for(c)?;
    write_spectrum_csv(&s, &out.path("spectrum.csv"))?;
    write_r1_csv(&s.r1, &out.path("r1.csv"))?;
    for p in find_peaks(&s, c.spectrum.peak_threshold) {
        println!("peak omega {:.4} height {:.4e}", p.omega, p.height);
    }
    Ok(())
}

fn markovian_sweep(c: &RunConfig) -> Result<CurrentSweep> {
    let bath = c.bath_spec()?;
    let grid = c.ring_grid()?;
    let mut flux = c.flux.clone();
    flux.sort_by(f64::total_cmp);
    flux.dedup();
    let points = flux
        .iter()
        .map(|&f| {
            let ring = c.system.with_flux(f);
            let eq = risb_markovian_equilibrium(&ring, &grid, &bath, SteadyMethod::Auto)?;
            // a direct solve, already checked against the steady-state tolerance
            Ok((f, persistent_current(&eq.field, &ring, 0.0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurrentSweep {
        points,
        eta: bath.eta,
        beta: bath.beta,
        k: 0,
        n_trunc: 0,
    })
}

fn heom_sweep(c: &RunConfig, k: usize, n_trunc: usize, flux: &[f64]) -> Result<CurrentSweep> {
    current_sweep(
        &c.system,
        &c.ring_grid()?,
        &c.bath_spec()?,
        k,
        n_trunc,
        flux,
    )
}

fn require_ring(c: &RunConfig, what: &str) -> Result<()> {
    if c.model != Model::Risb {
        return Err(Error::Config(format!(
            "{what} is only defined for the ring model"
        )));
    }
    Ok(())
}

fn cmd_current(c: &RunConfig, allow_markovian: bool, out: &mut Outputs) -> Result<()> {
    require_ring(c, "the persistent current")?;
    let sweep =
        match c.regime {
            Regime::Heom => heom_sweep(c, c.hierarchy.k, c.hierarchy.n_trunc, &c.flux)?,
            Regime::Markovian if allow_markovian => markovian_sweep(c)?,
            Regime::Markovian => return Err(Error::Config(
                "the Markovian equation does not give the equilibrium current; use --regime heom \
                 or pass --allow-markovian"
                    .into(),
            )),
        };
    write_current_csv(&sweep, &out.path("current.csv"))?;
    println!("max |J| {:.6e}", sweep.max_abs());
    Ok(())
}

fn cmd_kernel_check(
    c: &RunConfig,
    k_list: &[usize],
    terms: usize,
    window: f64,
    step: f64,
    out: &mut Outputs,
) -> Result<()> {
    let bath = c.bath_spec()?;
    if !(window > 0.0 && step > 0.0 && terms > 0) {
        return Err(Error::InvalidArgument(
            "window, step and terms must be positive".into(),
        ));
    }
    let n = (window / bath.gamma / step).round() as usize;
    let ts: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    let reference: Vec<_> = ts
        .iter()
        .map(|&t| matsubara_kernel(&bath, terms, t).value)
        .collect();
    let mut csv = String::from("K,t,re_pade,im_pade,re_matsubara,abs_err\n");
    for &k in k_list {
        let pade = pade_decompose(bath.beta, k)?;
        let mut worst = 0.0f64;
        for (&t, r) in ts.iter().zip(&reference) {
            let v = kernel(&bath, &pade, t).value;
            let err = (v - r).norm();
            worst = worst.max(err);
            csv.push_str(&format!("{k},{t},{},{},{},{err}\n", v.re, v.im, r.re));
        }
        println!("K={k} max abs err {worst:.4e}");
    }
    fs::write(out.path("kernel.csv"), csv)?;
    Ok(())
}

fn cmd_converge(
    c: &RunConfig,
    n_list: &[usize],
    k_list: &[usize],
    observable: Observable,
    out: &mut Outputs,
) -> Result<()> {
    require_ring(c, "the convergence scan")?;
    if c.regime != Regime::Heom {
        return Err(Error::Config(
            "the convergence scan needs --regime heom".into(),
        ));
    }
    let flux = c.system.flux_bar;
    let mut csv = String::from("K,N_trunc,phi_bar,observable,value\n");
    for &k in k_list {
        for &n in n_list {
            let (name, v) = match observable {
                Observable::Current => ("current", heom_sweep(c, k, n, &[flux])?.points[0].1),
                Observable::Peak => {
                    let s = risb_heom_spectrum(
                        &c.system,
                        &c.ring_grid()?,
                        &c.bath_spec()?,
                        k,
                        n,
                        settings(c),
                    )?;
                    let top = find_peaks(&s, c.spectrum.peak_threshold)
                        .into_iter()
                        .max_by(|a, b| a.height.total_cmp(&b.height))
                        .ok_or_else(|| Error::Solver {
                            reason: "spectrum has no peak".into(),
                            residual: 0.0,
                        })?;
                    ("peak_omega", top.omega)
                }
            };
            println!("K={k} N={n} {name} {v:.8e}");
            csv.push_str(&format!("{k},{n},{flux},{name},{v}\n"));
        }
    }
    fs::write(out.path("convergence.csv"), csv)?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Equilibrium => "equilibrium",
        Command::Spectrum => "spectrum",
        Command::Current { .. } => "current",
        Command::KernelCheck { .. } => "kernel-check",
        Command::Converge { .. } => "converge",
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut c);
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli, c: &RunConfig, out: &mut Outputs) -> Result<()> {
    match &cli.command {
        Command::Equilibrium => cmd_equilibrium(c, out),
        Command::Spectrum => cmd_spectrum(c, out),
        Command::Current { allow_markovian } => cmd_current(c, *allow_markovian, out),
        Command::KernelCheck {
            k_list,
            terms,
            window,
            step,
        } => cmd_kernel_check(c, k_list, *terms, *window, *step, out),
        Command::Converge {
            n_list,
            k_list,
            observable,
        } => cmd_converge(c, n_list, k_list, *observable, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = fs::create_dir_all(&config.output_dir) {
        eprintln!("error: cannot create {}: {e}", config.output_dir.display());
        return ExitCode::FAILURE;
    }
    let dir = config.output_dir.clone();
    let mut out = Outputs {
        dir: &dir,
        files: Vec::new(),
    };
    let start = Instant::now();
    let result = run(&cli, &config, &mut out);
    let wall = start.elapsed().as_secs_f64();

    let error = result.as_ref().err().map(|e| e.to_string());
    if let Some(msg) = &error {
        eprintln!("error: {msg}");
        let diag = format!(
            "command: {name}\nerror: {msg}\nwall_time_s: {wall}\n\n{}",
            config.to_toml()
        );
        if let Err(e) = fs::write(dir.join("diagnostics.txt"), diag) {
            eprintln!("error: cannot write diagnostics: {e}");
        }
    }
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        status: if error.is_none() { "ok" } else { "failed" },
        wall_time_s: wall,
        outputs: &out.files,
        config: &config,
        error,
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|s| fs::write(dir.join("manifest.json"), s).map_err(Error::from));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::FAILURE;
    }
    if result.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
