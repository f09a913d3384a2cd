//! Batch experiment runner behind the `ringflow` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{self, DashboardInputs};
use crate::dynamics::{self, Integrator, SimOptions};
use crate::equilibrium::{self, EquilibriumConfig, SolveOptions};
use crate::error::{Error, Result};
use crate::forcefield::ForceProfile;
use crate::params::{self, Exponents, SystemParams, DEFAULT_BETA, DEFAULT_C_ALPHA_G_BOUND, DEFAULT_RHO};
use crate::picard;
use crate::spectral;
use crate::trajectory::{params_hash, sample_indices, TimeGrid};

/// Default output root when neither `--out` nor the config names one.
pub const OUT_ENV: &str = "RINGFLOW_OUT";

#[derive(Parser, Debug)]
#[command(name = "ringflow", version, about = "Driven-damped Coulomb ring experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: config `outputs.directory`, then $RINGFLOW_OUT, then ./ringflow-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Seed for the random probe fields (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trajectory file format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve and verify the static configuration.
    Equilibrium,
    /// Integrate the full nonlinear dynamics.
    Simulate,
    /// Cut-off linear system: adaptive integration against the mode solution.
    Linear,
    /// Fixed-point iteration and contraction probe.
    Picard,
    /// Regime conditions and, optionally, the exponent feasibility grid.
    Regime,
    /// Repeat the configured subcommand over several N.
    Sweep,
    /// Every report aggregated into the bound dashboard.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Equilibrium => "equilibrium",
            Command::Simulate => "simulate",
            Command::Linear => "linear",
            Command::Picard => "picard",
            Command::Regime => "regime",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma_a: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(rename = "V", default = "one")]
    pub v: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

impl ExponentConfig {
    pub fn exponents(&self) -> Exponents {
        Exponents {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            gamma_a: self.gamma_a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    DampingTimes,
    BetaN,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub mode: HorizonMode,
    #[serde(default = "one")]
    pub value: f64,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        HorizonSpec {
            mode: HorizonMode::DampingTimes,
            value: 20.0,
        }
    }
}

impl HorizonSpec {
    pub fn resolve(&self, p: &SystemParams) -> f64 {
        let d = p.derived();
        match self.mode {
            HorizonMode::DampingTimes => self.value * d.t_damp,
            HorizonMode::BetaN => self.value * d.t_theorem,
            HorizonMode::Absolute => self.value,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub gamma_ball: Option<f64>,
    /// Time steps of the mode grid (default: same as the run).
    #[serde(default)]
    pub steps: Option<usize>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: default_tol(),
            max_iter: default_max_iter(),
            trials: default_trials(),
            gamma_ball: None,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_sweep_command")]
    pub subcommand: Command,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: default_sizes(),
            subcommand: default_sweep_command(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    #[serde(default = "default_bound")]
    pub c_alpha_g_bound: f64,
    /// Lattice spacing of the feasibility grid; no grid when absent.
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default = "default_grid_sizes")]
    pub grid_sizes: Vec<usize>,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            c_alpha_g_bound: default_bound(),
            grid_step: None,
            grid_sizes: default_grid_sizes(),
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub params: Option<SystemParams>,
    #[serde(default)]
    pub exponents: Option<ExponentConfig>,
    #[serde(default = "canonical_force")]
    pub force: ForceProfile,
    #[serde(default)]
    pub horizon: HorizonSpec,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    /// Set `A0` so that `a(V)` equals the effective force.
    #[serde(default = "yes")]
    pub calibrate_friction: bool,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    /// Size of the reference run for the coefficient-stability rows of `verify`.
    #[serde(default)]
    pub reference_n: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_bound() -> f64 {
    DEFAULT_C_ALPHA_G_BOUND
}
fn default_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    50
}
fn default_trials() -> usize {
    20
}
fn default_samples() -> usize {
    1024
}
fn default_seed() -> u64 {
    1
}
fn default_sizes() -> Vec<usize> {
    vec![64, 256]
}
fn default_grid_sizes() -> Vec<usize> {
    vec![64, 256, 1024]
}
fn default_sweep_command() -> Command {
    Command::Linear
}
fn default_integrator() -> Integrator {
    Integrator::ExpSplit
}
fn canonical_force() -> ForceProfile {
    ForceProfile::canonical(1.0)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match (&cfg.params, &cfg.exponents) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `params` or `exponents`, not both".into())),
            (None, None) => return Err(Error::Config("one of `params` or `exponents` is required".into())),
            _ => {}
        }
        if cfg.samples == 0 {
            return Err(Error::Config("`samples` must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parameters at the configured size, or at `n` when given. The friction
    /// offset is not yet calibrated.
    pub fn base_params(&self, n: Option<usize>) -> Result<SystemParams> {
        let p = match (&self.params, &self.exponents) {
            (Some(p), _) => SystemParams { n: n.unwrap_or(p.n), ..*p },
            (None, Some(e)) => {
                let mut p = e.exponents().instantiate(n.unwrap_or(e.n), e.rho, e.v)?;
                p.beta = e.beta;
                p
            }
            (None, None) => return Err(Error::Config("no parameters".into())),
        };
        p.validate()?;
        if (self.force.ring_length() - p.l).abs() > 1e-12 * p.l {
            return Err(Error::Config(format!(
                "force profile ring length {} differs from L = {}",
                self.force.ring_length(),
                p.l
            )));
        }
        Ok(p)
    }

    pub fn step_count(&self, p: &SystemParams, horizon: f64) -> Result<usize> {
        if let Some(s) = self.steps {
            if s == 0 {
                return Err(Error::Config("`steps` must be positive".into()));
            }
            return Ok(s);
        }
        let dt = self.dt.unwrap_or(p.derived().t_damp / 500.0);
        if !(dt > 0.0) {
            return Err(Error::Config("`dt` must be positive".into()));
        }
        Ok((horizon / dt).ceil().max(1.0) as usize)
    }
}

/// Resolved run: calibrated parameters, equilibrium and output location.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    p: SystemParams,
    eq: EquilibriumConfig,
    f: &'a ForceProfile,
    out: PathBuf,
    seed: u64,
    formats: Vec<Format>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, n: Option<usize>, out: PathBuf, seed: u64, formats: Vec<Format>) -> Result<Self> {
        let base = cfg.base_params(n)?;
        let opts = SolveOptions {
            c_alpha_g_bound: Some(cfg.regime.c_alpha_g_bound),
            ..SolveOptions::default()
        };
        let eq = equilibrium::solve_with(&base, &cfg.force, &opts)?;
        let p = if cfg.calibrate_friction { base.calibrate_friction(eq.w) } else { base };
        Ok(Run {
            cfg,
            p,
            eq,
            f: &cfg.force,
            out,
            seed,
            formats,
        })
    }

    fn horizon(&self) -> f64 {
        self.cfg.horizon.resolve(&self.p)
    }

    fn header(&self, command: &str) -> Value {
        header(command, &self.p, self.seed)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), contents)?;
        Ok(())
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }
}

fn header(command: &str, p: &SystemParams, seed: u64) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "params": p,
        "derived": p.derived(),
        "params_hash": params_hash(p),
        "seed": seed,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn run_equilibrium(r: &Run) -> Result<Value> {
    let report = equilibrium::verify(&r.eq, &r.p, r.f);
    let regime = params::check_conditions_with_bound(&r.p, r.eq.w, r.cfg.regime.c_alpha_g_bound)?;
    r.write("equilibrium.csv", &r.eq.to_csv())?;
    r.write(
        "equilibrium.gp",
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'k'\nset ylabel 'delta_k'\n\
         set terminal pngcairo size 900,600\nset output 'equilibrium.png'\n\
         plot 'equilibrium.csv' using 1:4 with linespoints title 'Delta_k / Delta_0 - 1'\n",
    )?;
    let summary = json!({
        "w": r.eq.w,
        "offset": r.eq.offset,
        "report": report,
        "regime": regime,
    });
    r.write_json("equilibrium.json", &merge(r.header("equilibrium"), summary.clone()))?;
    Ok(json!({ "residual_ok": report.residual_ok, "all_ok": report.all_ok, "max_abs_delta": report.max_abs_delta }))
}

fn homogeneity_json(h: &diagnostics::HomogeneityReport) -> Value {
    let mut v = serde_json::to_value(h).expect("report serializes");
    if let Value::Object(m) = &mut v {
        m.remove("series");
    }
    v
}

fn run_simulate(r: &Run) -> Result<Value> {
    let horizon = r.horizon();
    let steps = r.cfg.step_count(&r.p, horizon)?;
    let opts = SimOptions {
        integrator: r.cfg.integrator,
        sample_every: steps.div_ceil(r.cfg.samples).max(1),
        ..SimOptions::default()
    };
    let traj = dynamics::simulate_full_with(&r.p, &r.eq, r.f, horizon, steps, &opts)?;
    let h = diagnostics::homogeneity(&traj, &r.p);
    for fmt in &r.formats {
        match fmt {
            Format::Csv => r.write("trajectory.csv", &traj.to_csv())?,
            Format::Binary => {
                fs::create_dir_all(&r.out)?;
                let file = fs::File::create(r.out.join("trajectory.bin"))?;
                traj.write_binary(std::io::BufWriter::new(file))?;
            }
        }
    }
    r.write("deviations.csv", &traj.deviations.to_csv())?;
    r.write("homogeneity.csv", &h.to_csv())?;
    r.write(
        "simulate.gp",
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n\
         set output 'homogeneity.png'\nset xlabel 't'\nset logscale y\n\
         plot 'homogeneity.csv' using 1:2 with lines title 'max |v - V|', '' using 1:3 with lines title 'density error'\n",
    )?;
    let summary = json!({
        "horizon": horizon,
        "steps": steps,
        "meta": traj.meta,
        "homogeneity": homogeneity_json(&h),
    });
    r.write_json("simulate.json", &merge(r.header("simulate"), summary))?;
    Ok(json!({
        "y_max_over_delta": h.y_max_over_delta,
        "v_spread_rel": h.v_spread_rel,
        "density_err": h.density_err,
        "window_exit": traj.meta.window_exit,
    }))
}

fn run_linear(r: &Run) -> Result<Value> {
    let horizon = r.horizon();
    let steps = r.cfg.step_count(&r.p, horizon)?;
    let grid = TimeGrid::new(horizon / steps as f64, steps)?;
    let sol = spectral::linear_modes(&r.p, &r.eq, r.f, grid)?;
    let ode = dynamics::simulate_linear_cutoff(&r.p, &r.eq, r.f, horizon, steps)?;
    let err = sol.trajectory.relative_linf_error(&ode)?;
    let bounds = spectral::bound_suite(&r.p, r.f, &sol);
    let stride = steps.div_ceil(r.cfg.samples).max(1);
    let mut csv = String::from("t,k,y_spectral,y_ode\n");
    for i in sample_indices(grid.len(), stride) {
        for k in 0..r.p.n {
            csv.push_str(&format!(
                "{:e},{},{:e},{:e}\n",
                sol.trajectory.times[i], k, sol.trajectory.y[i][k], ode.y[i][k]
            ));
        }
    }
    r.write("linear.csv", &csv)?;
    r.write("modes.csv", &sol.eta.to_csv(stride))?;
    r.write(
        "linear.gp",
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n\
         set output 'linear.png'\nset xlabel 't'\nset ylabel 'y_0'\n\
         plot 'linear.csv' every ::0 using ($2==0?$1:1/0):3 with lines title 'spectral', \
         '' using ($2==0?$1:1/0):4 with points title 'ode'\n",
    )?;
    let summary = json!({
        "horizon": horizon,
        "steps": steps,
        "max_relative_error": err,
        "spectral_max_imag": sol.max_imag,
        "bounds": bounds,
    });
    r.write_json("linear.json", &merge(r.header("linear"), summary))?;
    Ok(json!({
        "max_relative_error": err,
        "explicit_bounds_passed": bounds.all_explicit_passed,
        "eta_ratio_literal": bounds.eta_ratio.max_literal,
        "eta_ratio_folded": bounds.eta_ratio.max_folded,
    }))
}

fn run_picard(r: &Run) -> Result<Value> {
    let horizon = r.horizon();
    let steps = match r.cfg.picard.steps {
        Some(s) => s,
        None => r.cfg.step_count(&r.p, horizon)?,
    };
    let grid = TimeGrid::new(horizon / steps as f64, steps)?;
    let eta = picard::free_term(&r.p, &r.eq, r.f, grid)?;
    let pc = &r.cfg.picard;
    let opts = picard::PicardOptions {
        gamma_ball: pc.gamma_ball,
        ..picard::PicardOptions::default()
    };
    let state = picard::solve_fixed_point_with(&r.p, &r.eq, r.f, &eta, pc.tol, pc.max_iter, &opts)?;
    let probe = picard::contraction_probe(&r.p, &r.eq, r.f, &eta, state.gamma_ball, pc.trials, r.seed)?;
    let kernel = picard::kernel_bounds(&r.p, &r.eq, r.f, grid)?;
    let full = dynamics::simulate_full_with(
        &r.p,
        &r.eq,
        r.f,
        horizon,
        steps,
        &SimOptions {
            sample_every: 1,
            ..SimOptions::default()
        },
    )?;
    let ode_err = state.deviations()?.relative_linf_error(&full.deviations)?;
    let stride = steps.div_ceil(r.cfg.samples).max(1);
    r.write("picard_modes.csv", &state.h.to_csv(stride))?;
    let mut hist = String::from("iteration,difference\n");
    for (j, d) in state.iterate_history.iter().enumerate() {
        hist.push_str(&format!("{},{:e}\n", j + 1, d));
    }
    r.write("picard_history.csv", &hist)?;
    r.write(
        "picard.gp",
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n\
         set output 'picard.png'\nset logscale y\nset xlabel 'iteration'\n\
         plot 'picard_history.csv' using 1:2 with linespoints title '||H(j+1) - H(j)||'\n",
    )?;
    let summary = json!({
        "horizon": horizon,
        "steps": steps,
        "state": state.summary(),
        "probe": probe,
        "kernel": kernel,
        "ode_relative_error": ode_err,
    });
    r.write_json("picard.json", &merge(r.header("picard"), summary))?;
    Ok(json!({
        "q_probe": probe.q,
        "q_est": state.q_est,
        "converged": state.converged,
        "ode_relative_error": ode_err,
        "chi_scaled_max": kernel.chi_scaled_max,
    }))
}

fn run_regime(cfg: &ExperimentConfig, n: Option<usize>, out: &Path, seed: u64) -> Result<Value> {
    let base = cfg.base_params(n)?;
    let w = equilibrium::compute_w(&cfg.force, base.g, base.l);
    let p = if cfg.calibrate_friction { base.calibrate_friction(w) } else { base };
    let report = params::check_conditions_with_bound(&p, w, cfg.regime.c_alpha_g_bound)?;
    let exponents = cfg.exponents.as_ref().map(|e| {
        json!({
            "exponents": e.exponents(),
            "in_stated_region": e.exponents().in_stated_region(),
        })
    });
    let feasible = cfg
        .regime
        .grid_step
        .map(|step| {
            let (rho, v) = (p.rho, p.v);
            let pts = params::feasibility_grid(&cfg.regime.grid_sizes, step, rho, v);
            json!({ "step": step, "sizes": cfg.regime.grid_sizes, "count": pts.len(), "best": pts.iter().take(20).collect::<Vec<_>>() })
        });
    let mut csv = String::from("name,lhs,rhs,satisfied,margin\n");
    for e in &report.entries {
        csv.push_str(&format!("{},{:e},{:e},{},{:e}\n", e.name, e.lhs, e.rhs, e.satisfied, e.margin));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("regime.csv"), csv)?;
    fs::write(
        out.join("regime.gp"),
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n\
         set output 'regime.png'\nset style data histograms\nset style fill solid\nset logscale y\n\
         set xtics rotate by -45\nplot 'regime.csv' using 5:xtic(1) title 'lhs / rhs'\n",
    )?;
    let summary = json!({
        "w": w,
        "report": report,
        "violations": report.violations(),
        "all_satisfied": report.all_satisfied(),
        "exponents": exponents,
        "feasibility": feasible,
    });
    let doc = merge(header("regime", &p, seed), summary);
    fs::write(out.join("regime.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(json!({ "violations": report.violations(), "all_satisfied": report.all_satisfied() }))
}

fn run_verify(r: &Run) -> Result<Value> {
    let horizon = r.horizon();
    let steps = r.cfg.step_count(&r.p, horizon)?;
    let grid = TimeGrid::new(horizon / steps as f64, steps)?;
    let regime = params::check_conditions_with_bound(&r.p, r.eq.w, r.cfg.regime.c_alpha_g_bound)?;
    let equilibrium = equilibrium::verify(&r.eq, &r.p, r.f);
    let sol = spectral::linear_modes(&r.p, &r.eq, r.f, grid)?;
    let linear = spectral::bound_suite(&r.p, r.f, &sol);
    drop(sol);
    let pgrid = match r.cfg.picard.steps {
        Some(s) => TimeGrid::new(horizon / s as f64, s)?,
        None => grid,
    };
    let kernel = picard::kernel_bounds(&r.p, &r.eq, r.f, pgrid)?;
    let eta = picard::free_term(&r.p, &r.eq, r.f, pgrid)?;
    let gamma = r.cfg.picard.gamma_ball.unwrap_or(2.0 * picard::bt_norm(&eta));
    let probe = picard::contraction_probe(&r.p, &r.eq, r.f, &eta, gamma, r.cfg.picard.trials, r.seed)?;
    let traj = dynamics::simulate_full_with(
        &r.p,
        &r.eq,
        r.f,
        horizon,
        steps,
        &SimOptions {
            sample_every: steps.div_ceil(r.cfg.samples).max(1),
            ..SimOptions::default()
        },
    )?;
    let homogeneity = diagnostics::homogeneity(&traj, &r.p);
    let (linear_reference, kernel_reference) = match r.cfg.reference_n {
        Some(n) => {
            let rr = Run::new(r.cfg, Some(n), r.out.clone(), r.seed, Vec::new())?;
            let h = rr.horizon();
            let s = r.cfg.step_count(&rr.p, h)?;
            let g = TimeGrid::new(h / s as f64, s)?;
            let sol = spectral::linear_modes(&rr.p, &rr.eq, rr.f, g)?;
            let pg = match r.cfg.picard.steps {
                Some(ps) => TimeGrid::new(h / ps as f64, ps)?,
                None => g,
            };
            (
                Some(spectral::bound_suite(&rr.p, rr.f, &sol)),
                Some(picard::kernel_bounds(&rr.p, &rr.eq, rr.f, pg)?),
            )
        }
        None => (None, None),
    };
    let inputs = DashboardInputs {
        regime: Some(regime),
        equilibrium: Some(equilibrium),
        linear: Some(linear),
        kernel: Some(kernel),
        probe: Some(probe),
        homogeneity: Some(homogeneity),
        linear_reference,
        kernel_reference,
        delta: Some(r.p.delta()),
        n: Some(r.p.n),
    };
    let verdict = diagnostics::lemma_dashboard(&inputs);
    let mut csv = String::from("name,source,lhs,rhs,status\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for row in &verdict.rows {
        let status = serde_json::to_value(row.status)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.name,
            row.source,
            fmt(row.lhs),
            fmt(row.rhs),
            status.as_str().unwrap_or("")
        ));
    }
    r.write("verify.csv", &csv)?;
    r.write(
        "verify.gp",
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 1000,600\n\
         set output 'verify.png'\nset style data histograms\nset style fill solid\nset logscale y\n\
         set xtics rotate by -45\nplot 'verify.csv' using ($3/$4):xtic(1) title 'lhs / rhs'\n",
    )?;
    let summary = json!({
        "horizon": horizon,
        "steps": steps,
        "reference_n": r.cfg.reference_n,
        "dashboard": verdict,
    });
    r.write_json("verify.json", &merge(r.header("verify"), summary))?;
    Ok(json!({ "verdict": verdict.verdict, "regime_ok": verdict.regime_ok }))
}

/// Runs one non-sweep subcommand at size `n` into `out`.
fn run_single(cmd: Command, cfg: &ExperimentConfig, n: Option<usize>, out: PathBuf, seed: u64, formats: Vec<Format>) -> Result<Value> {
    if cmd == Command::Regime {
        return run_regime(cfg, n, &out, seed);
    }
    let r = Run::new(cfg, n, out, seed, formats)?;
    match cmd {
        Command::Equilibrium => run_equilibrium(&r),
        Command::Simulate => run_simulate(&r),
        Command::Linear => run_linear(&r),
        Command::Picard => run_picard(&r),
        Command::Verify => run_verify(&r),
        Command::Regime | Command::Sweep => unreachable!("dispatched elsewhere"),
    }
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path, seed: u64, formats: Vec<Format>) -> Result<Value> {
    let sub = cfg.sweep.subcommand;
    if sub == Command::Sweep {
        return Err(Error::Config("a sweep cannot run `sweep`".into()));
    }
    if cfg.sweep.sizes.is_empty() {
        return Err(Error::Config("`sweep.sizes` is empty".into()));
    }
    let runs: Vec<Value> = cfg
        .sweep
        .sizes
        .par_iter()
        .map(|&n| {
            let dir = out.join(format!("N{n}"));
            match run_single(sub, cfg, Some(n), dir, seed, formats.clone()) {
                Ok(s) => json!({ "N": n, "directory": format!("N{n}"), "summary": s, "error": null }),
                Err(e) => json!({ "N": n, "directory": format!("N{n}"), "summary": null, "error": e.to_string() }),
            }
        })
        .collect();
    let doc = json!({
        "command": "sweep",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": sub,
        "sizes": cfg.sweep.sizes,
        "seed": seed,
        "runs": runs,
    });
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(doc)
}

/// Runs the parsed command line; the result is the written summary.
pub fn execute(cli: &Cli) -> Result<Value> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let out = output_dir(cli, &cfg);
    let seed = cli.seed.unwrap_or(cfg.seed);
    let formats = match cli.format {
        Some(f) => vec![f],
        None if cfg.outputs.formats.is_empty() => vec![Format::Csv],
        None => cfg.outputs.formats.clone(),
    };
    let work = || match cli.command {
        Command::Sweep => run_sweep(&cfg, &out, seed, formats.clone()),
        cmd => run_single(cmd, &cfg, None, out.clone(), seed, formats.clone()),
    };
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)
    } else {
        work()
    }
}

pub fn output_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.outputs.directory.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ringflow-out"))
}

/// Exit status for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).unwrap_or_default());
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            let diag = json!({
                "command": cli.command.name(),
                "error": e.to_string(),
                "kind": if code == 3 { "numerical" } else { "config" },
                "exit_code": code,
            });
            if code == 3 {
                if let Ok(cfg) = cli.config.as_deref().map_or(Err(()), |p| ExperimentConfig::load(p).map_err(|_| ())) {
                    let out = output_dir(&cli, &cfg);
                    if fs::create_dir_all(&out).is_ok() {
                        let _ = fs::write(out.join("error.json"), serde_json::to_string_pretty(&diag).unwrap_or_default());
                    }
                }
            }
            eprintln!("{}", serde_json::to_string(&diag).unwrap_or_default());
            code
        }
    }
}
