//! Batch front end: declarative run configuration plus the simulate /
//! invert / gradcheck / postprocess / report commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::CutoffSpec;
use crate::error::{Result, WaveError};
use crate::fields::{
    add_noise, load_field_raw, load_trace, phantom, restrict_to_coarse, save_field_raw,
    save_field_vtk, save_trace, scale_literal, Ball, BoundaryTrace, CoefficientField, NoiseSpec,
    PhantomKind,
};
use crate::forward::{forward_solve, InitialCondition, RecordMode, SourceSpec, TimeAxis};
use crate::geometry::{build_grid, BoxDomain, Grid};
use crate::objective::{postprocess, theorem3_from_gradient, TikhonovSpec};
use crate::optimizer::{run, CgConfig, InversionState, StepRule, StopReason, WaveProblem};

fn default_phantom() -> String {
    "uniform".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    1
}
fn default_noise_mode() -> String {
    "random".into()
}
fn default_gamma() -> f64 {
    0.01
}
fn default_theta() -> f64 {
    1e-6
}
fn default_p() -> f64 {
    0.7
}
fn default_max_iter() -> usize {
    25
}
fn default_ic() -> String {
    "gaussian".into()
}
fn default_out() -> String {
    "out".into()
}
fn default_true() -> bool {
    true
}

/// One declarative document covering every knob of a run. Flat key-value
/// TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain_lo: [f64; 3],
    pub domain_hi: [f64; 3],
    pub inner_lo: [f64; 3],
    pub inner_hi: [f64; 3],
    pub h: f64,
    pub tau: f64,
    pub t_final: f64,
    pub omega: f64,
    pub d: f64,
    #[serde(default = "default_phantom")]
    pub phantom: String,
    #[serde(default = "default_one")]
    pub phantom_value: f64,
    #[serde(default)]
    pub ball_centers: Vec<[f64; 3]>,
    #[serde(default)]
    pub ball_radii: Vec<f64>,
    #[serde(default)]
    pub ball_values: Vec<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// "random": multiplicative uniform noise; "literal": plain (1 + σ/100) scale.
    #[serde(default = "default_noise_mode")]
    pub noise_mode: String,
    /// Generate data on the 2x-refined grid and restrict (avoids the
    /// inverse crime); disable for stationary-start diagnostics.
    #[serde(default = "default_true")]
    pub refine_data: bool,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_p")]
    pub p_threshold: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub alpha_fixed: Option<f64>,
    #[serde(default)]
    pub alpha0: Option<f64>,
    #[serde(default)]
    pub restart_every: Option<usize>,
    /// Cutoff window; default 10 τ.
    #[serde(default)]
    pub cutoff_window: Option<f64>,
    #[serde(default = "default_ic")]
    pub initial_condition: String,
    #[serde(default = "default_out")]
    pub output_dir: String,
    /// 0 = library default (physical cores).
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub xi: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| WaveError::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 1.0) {
            return Err(WaveError::Config(format!("d = {} must be > 1", self.d)));
        }
        // Worst-case CFL over the admissible set 1 <= c <= d.
        let bound = self.h / (self.d.sqrt() * 3f64.sqrt());
        if self.tau > bound * (1.0 + 1e-9) {
            return Err(WaveError::Config(format!(
                "tau = {} exceeds the CFL bound {bound:.6} for d = {}",
                self.tau, self.d
            )));
        }
        match self.phantom.as_str() {
            "uniform" => {
                if self.phantom_value > self.d {
                    return Err(WaveError::Config(format!(
                        "phantom value {} exceeds d = {}",
                        self.phantom_value, self.d
                    )));
                }
            }
            "gaussian1" | "gaussian3" => {}
            "balls" => {
                if self.ball_centers.len() != self.ball_radii.len()
                    || self.ball_centers.len() != self.ball_values.len()
                {
                    return Err(WaveError::Config(
                        "ball_centers, ball_radii and ball_values must have equal length".into(),
                    ));
                }
                if self.ball_values.iter().any(|v| *v > self.d) {
                    return Err(WaveError::Config(format!(
                        "ball value exceeds d = {}",
                        self.d
                    )));
                }
            }
            other => {
                return Err(WaveError::Config(format!("unknown phantom '{other}'")));
            }
        }
        match self.noise_mode.as_str() {
            "random" | "literal" => {}
            other => return Err(WaveError::Config(format!("unknown noise mode '{other}'"))),
        }
        match self.initial_condition.as_str() {
            "gaussian" | "zero" => {}
            other => {
                return Err(WaveError::Config(format!(
                    "unknown initial condition '{other}'"
                )))
            }
        }
        if let Some(w) = self.cutoff_window {
            if !(w >= 0.0 && w < self.t_final) {
                return Err(WaveError::Config(format!(
                    "cutoff window {w} must lie in [0, T)"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(
            BoxDomain::new(self.domain_lo, self.domain_hi)?,
            BoxDomain::new(self.inner_lo, self.inner_hi)?,
            self.h,
        )
    }

    pub fn fine_grid(&self) -> Result<Grid> {
        build_grid(
            BoxDomain::new(self.domain_lo, self.domain_hi)?,
            BoxDomain::new(self.inner_lo, self.inner_hi)?,
            self.h / 2.0,
        )
    }

    pub fn time_axis(&self) -> Result<TimeAxis> {
        TimeAxis::new(self.tau, self.t_final)
    }

    pub fn source(&self) -> Result<SourceSpec> {
        SourceSpec::new(self.omega)
    }

    pub fn phantom_kind(&self) -> Result<PhantomKind> {
        Ok(match self.phantom.as_str() {
            "uniform" => PhantomKind::Uniform(self.phantom_value),
            "gaussian1" => PhantomKind::Gaussian1,
            "gaussian3" => PhantomKind::Gaussian3,
            "balls" => PhantomKind::Balls(
                self.ball_centers
                    .iter()
                    .zip(&self.ball_radii)
                    .zip(&self.ball_values)
                    .map(|((center, radius), value)| Ball {
                        center: *center,
                        radius: *radius,
                        value: *value,
                    })
                    .collect(),
            ),
            other => return Err(WaveError::Config(format!("unknown phantom '{other}'"))),
        })
    }

    pub fn cutoff(&self) -> Result<CutoffSpec> {
        CutoffSpec::new(self.cutoff_window.unwrap_or(10.0 * self.tau))
    }

    pub fn initial_condition_kind(&self) -> Result<InitialCondition> {
        Ok(match self.initial_condition.as_str() {
            "gaussian" => InitialCondition::GaussianBump,
            "zero" => InitialCondition::Zero,
            other => {
                return Err(WaveError::Config(format!(
                    "unknown initial condition '{other}'"
                )))
            }
        })
    }

    pub fn tikhonov(&self, grid: &Grid) -> Result<TikhonovSpec> {
        TikhonovSpec::new(
            self.gamma,
            CoefficientField::uniform(grid, 1.0, self.d)?,
            self.cutoff()?,
            None,
        )
    }

    pub fn cg(&self) -> Result<CgConfig> {
        let step = match self.alpha_fixed {
            Some(a) => StepRule::Fixed(a),
            None => StepRule::Armijo {
                alpha0: self.alpha0,
            },
        };
        CgConfig::new(self.theta, self.max_iter, step, self.restart_every)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }
}

/// Resolves the worker-thread count: WAVEINV_THREADS wins over the config
/// key; 0 leaves the library default. Must run before any parallel work.
pub fn init_threads(cfg_threads: usize) {
    let n = std::env::var("WAVEINV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(cfg_threads);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn apply_noise(cfg: &RunConfig, trace: &BoundaryTrace) -> BoundaryTrace {
    match cfg.noise_mode.as_str() {
        "literal" => scale_literal(trace, cfg.sigma),
        _ => add_noise(
            trace,
            &NoiseSpec {
                sigma: cfg.sigma,
                seed: cfg.seed,
            },
        ),
    }
}

/// Generates backscattered data with the exact phantom (on the 2x-refined
/// grid unless disabled), applies noise, and writes trace.bin plus the
/// exact coefficient (VTK and raw).
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let grid = cfg.grid()?;
    let src = cfg.source()?;
    let ic = cfg.initial_condition_kind()?;
    let kind = cfg.phantom_kind()?;

    let clean = if cfg.refine_data {
        let fine = cfg.fine_grid()?;
        let c_fine = phantom(&kind, &fine, cfg.d)?;
        let ta_fine = TimeAxis::new(cfg.tau / 2.0, cfg.t_final)?;
        let fwd = forward_solve(&fine, &c_fine, &src, &ic, &ta_fine, RecordMode::TraceOnly)?;
        restrict_to_coarse(&fwd.trace, &fine, &grid, cfg.tau)?
    } else {
        let c = phantom(&kind, &grid, cfg.d)?;
        let ta = cfg.time_axis()?;
        forward_solve(&grid, &c, &src, &ic, &ta, RecordMode::TraceOnly)?.trace
    };
    let noisy = apply_noise(cfg, &clean);
    save_trace(&noisy, &out.join("trace.bin"))?;

    let c_exact = phantom(&kind, &grid, cfg.d)?;
    save_field_raw(&c_exact, &out.join("c_exact.bin"))?;
    save_field_vtk(&c_exact, &grid, &out.join("c_exact.vtk"))?;
    println!(
        "simulate: wrote {} levels x {} face nodes to {}, exact max c = {:.4}",
        noisy.n_levels,
        noisy.n_face,
        out.join("trace.bin").display(),
        c_exact.max_value()
    );
    Ok(())
}

fn write_iterates_csv(path: &Path, state: &InversionState) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "m,J,grad_norm,max_c,alpha,beta,wall_s")?;
    for r in &state.history {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.6},{:.6e},{:.6e},{:.3}",
            r.m, r.j, r.grad_norm, r.max_c, r.alpha, r.beta, r.wall_s
        )?;
    }
    Ok(())
}

/// Runs the inversion against a recorded trace and writes the final field
/// (raw + VTK), its post-processed image, the iterate CSV, and — when δ, ν,
/// ξ are configured — the per-iteration accuracy-estimate CSV.
pub fn cmd_invert(cfg: &RunConfig, trace_path: &Path) -> Result<StopReason> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let grid = cfg.grid()?;
    let data = load_trace(trace_path)?;
    let ta = cfg.time_axis()?;
    if data.n_face != grid.n[0] * grid.n[1] || data.n_levels != ta.n_levels() {
        return Err(WaveError::TraceMismatch(format!(
            "trace {}x{} does not match grid front face {} x {} levels",
            data.n_face,
            data.n_levels,
            grid.n[0] * grid.n[1],
            ta.n_levels()
        )));
    }
    let spec = cfg.tikhonov(&grid)?;
    let c0 = spec.c0.clone();
    let problem = WaveProblem {
        grid: &grid,
        data: &data,
        src: cfg.source()?,
        ic: cfg.initial_condition_kind()?,
        ta,
        spec,
    };
    let config = cfg.cg()?;

    let diag = match (cfg.delta, cfg.nu, cfg.xi) {
        (Some(delta), Some(nu), Some(xi)) => {
            let c_star = phantom(&cfg.phantom_kind()?, &grid, cfg.d)?;
            Some((delta, nu, xi, c_star))
        }
        _ => None,
    };
    let mut theorem_rows: Vec<(usize, f64, f64)> = Vec::new();
    let (state, reason) = run(&problem, &config, c0.clone(), |m, c, g| {
        if let Some((delta, nu, xi, c_star)) = &diag {
            let (lhs, rhs) =
                theorem3_from_gradient(&grid, g, c, &c0, c_star, *delta, *nu, *xi);
            theorem_rows.push((m, lhs, rhs));
        }
    })?;

    save_field_raw(&state.c, &out.join("c_final.bin"))?;
    save_field_vtk(&state.c, &grid, &out.join("c_final.vtk"))?;
    let post = postprocess(&state.c, cfg.p_threshold)?;
    save_field_raw(&post, &out.join("c_post.bin"))?;
    save_field_vtk(&post, &grid, &out.join("c_post.vtk"))?;
    write_iterates_csv(&out.join("iterates.csv"), &state)?;
    if !theorem_rows.is_empty() {
        let mut w = fs::File::create(out.join("theorem3.csv"))?;
        writeln!(w, "m,lhs,rhs")?;
        for (m, lhs, rhs) in &theorem_rows {
            writeln!(w, "{m},{lhs:.12e},{rhs:.12e}")?;
        }
    }
    println!(
        "invert: {} iterations, stop = {:?}, J = {:.6e}, |g| = {:.6e}, max c = {:.4}",
        state.m, reason, state.j, state.grad_norm, state.c.max_value()
    );
    Ok(reason)
}

pub struct GradCheckReport {
    pub directional: f64,
    /// (ε, finite difference, relative error) per swept ε.
    pub rows: Vec<(f64, f64, f64)>,
    pub best_rel_err: f64,
}

/// Validates the adjoint-state gradient against central finite differences
/// of the functional with a seeded random coefficient and direction on the
/// configured grid.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    use crate::adjoint::{adjoint_solve, residual_trace};
    use crate::objective::{functional, gradient};

    let grid = cfg.grid()?;
    let src = cfg.source()?;
    let ic = cfg.initial_condition_kind()?;
    let ta = cfg.time_axis()?;
    let spec = cfg.tikhonov(&grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cvals = vec![1.0; grid.cell_count()];
    let mut dir = vec![0.0; grid.cell_count()];
    for idx in 0..grid.cell_count() {
        if grid.is_inner_cell(grid.cell_ijk(idx)) {
            cvals[idx] = rng.gen_range(1.1..1.9);
            dir[idx] = rng.gen_range(-1.0..1.0);
        }
    }
    let c = CoefficientField::from_values(&grid, cvals, cfg.d)?;
    // Synthetic data from the configured phantom so the residual is nonzero.
    let data_field = phantom(&cfg.phantom_kind()?, &grid, cfg.d)?;
    let data = forward_solve(&grid, &data_field, &src, &ic, &ta, RecordMode::TraceOnly)?.trace;

    let fwd = forward_solve(&grid, &c, &src, &ic, &ta, RecordMode::Full)?;
    let residual = residual_trace(&fwd.trace, &data, &spec.cutoff)?;
    let lam = adjoint_solve(&grid, &c, &residual, &src, &ta)?;
    let g = gradient(&grid, &fwd.history.expect("full record"), &lam, &c, &spec)?;
    let directional = g.dot_cells(&dir, &grid);

    let eval = |field: &CoefficientField| -> Result<f64> {
        let tr = forward_solve(&grid, field, &src, &ic, &ta, RecordMode::TraceOnly)?.trace;
        functional(&grid, &tr, &data, field, &spec)
    };

    let mut rows = Vec::new();
    let mut best = f64::INFINITY;
    for exp in 2..=6 {
        let eps = 10f64.powi(-exp);
        let perturb = |sign: f64| -> Result<f64> {
            let vals: Vec<f64> = c
                .values()
                .iter()
                .zip(&dir)
                .map(|(v, d)| v + sign * eps * d)
                .collect();
            eval(&CoefficientField::from_values(&grid, vals, cfg.d)?)
        };
        let fd = (perturb(1.0)? - perturb(-1.0)?) / (2.0 * eps);
        let rel = (fd - directional).abs() / fd.abs().max(1e-300);
        best = best.min(rel);
        rows.push((eps, fd, rel));
    }
    println!("gradcheck: adjoint directional derivative = {directional:.9e}");
    println!("{:>10}  {:>18}  {:>12}", "eps", "central FD", "rel. error");
    for (eps, fd, rel) in &rows {
        println!("{eps:>10.0e}  {fd:>18.9e}  {rel:>12.3e}");
    }
    Ok(GradCheckReport {
        directional,
        rows,
        best_rel_err: best,
    })
}

/// Applies the image threshold to a stored field and writes the result next
/// to it (raw + VTK).
pub fn cmd_postprocess(cfg: &RunConfig, field_path: &Path) -> Result<()> {
    let grid = cfg.grid()?;
    let c = load_field_raw(field_path)?;
    if !c.matches(&grid) {
        return Err(WaveError::DimensionMismatch(format!(
            "field {:?} does not match the configured grid",
            c.ncells()
        )));
    }
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let post = postprocess(&c, cfg.p_threshold)?;
    save_field_raw(&post, &out.join("c_post.bin"))?;
    save_field_vtk(&post, &grid, &out.join("c_post.vtk"))?;
    println!(
        "postprocess: threshold {} of max {:.4}, wrote {}",
        cfg.p_threshold,
        c.max_value(),
        out.join("c_post.vtk").display()
    );
    Ok(())
}

/// Table-style summary across run directories: recovered contrast, error
/// against the exact phantom, and final iteration count.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<String> {
    let mut table = String::new();
    table.push_str(&format!(
        "{:<24} {:>9} {:>9} {:>9} {:>6}\n",
        "case", "max_c", "max_c*", "error_%", "N"
    ));
    for dir in dirs {
        let c_final = load_field_raw(&dir.join("c_final.bin"))?;
        let max_c = c_final.max_value();
        let (max_star, err) = match load_field_raw(&dir.join("c_exact.bin")) {
            Ok(c_star) => {
                let ms = c_star.max_value();
                (
                    format!("{ms:.4}"),
                    format!("{:.2}", 100.0 * (max_c - ms).abs() / ms),
                )
            }
            Err(_) => ("-".into(), "-".into()),
        };
        let n_bar = match fs::read_to_string(dir.join("iterates.csv")) {
            Ok(text) => text
                .lines()
                .skip(1)
                .last()
                .and_then(|l| l.split(',').next().map(str::to_string))
                .unwrap_or_else(|| "-".into()),
            Err(_) => "-".into(),
        };
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        table.push_str(&format!(
            "{name:<24} {max_c:>9.4} {max_star:>9} {err:>9} {n_bar:>6}\n"
        ));
    }
    Ok(table)
}
