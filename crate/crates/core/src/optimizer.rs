//! Projected Fletcher–Reeves conjugate gradient driving the
//! forward → adjoint → gradient chain, with Armijo backtracking and the
//! gradient-stabilization stopping rule.

use std::time::Instant;

use crate::adjoint::{adjoint_solve, residual_trace};
use crate::error::{Result, WaveError};
use crate::fields::{BoundaryTrace, CoefficientField};
use crate::forward::{forward_solve, InitialCondition, RecordMode, SourceSpec, TimeAxis};
use crate::geometry::Grid;
use crate::objective::{functional, gradient, project, GradientField, TikhonovSpec};

const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_MAX_TRIALS: usize = 20;
const STABILIZATION_REL: f64 = 1e-3;
const STABILIZATION_SPAN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Backtracking from α₀; `None` derives α₀ = 1 / max(‖g⁰‖_∞, 1).
    Armijo { alpha0: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgConfig {
    pub theta: f64,
    pub max_iter: usize,
    pub step: StepRule,
    pub restart_every: Option<usize>,
}

impl CgConfig {
    pub fn new(theta: f64, max_iter: usize, step: StepRule, restart_every: Option<usize>) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(WaveError::InvalidParameter(format!(
                "theta = {theta} must be > 0"
            )));
        }
        match step {
            StepRule::Fixed(a) | StepRule::Armijo { alpha0: Some(a) } if !(a > 0.0) => {
                return Err(WaveError::InvalidParameter(format!(
                    "step size {a} must be > 0"
                )));
            }
            _ => {}
        }
        Ok(CgConfig {
            theta,
            max_iter,
            step,
            restart_every,
        })
    }
}

/// The inverse problem seen by the optimizer: functional value and
/// functional-plus-gradient evaluation at a coefficient field.
pub trait InversionProblem {
    fn grid(&self) -> &Grid;
    fn evaluate(&self, c: &CoefficientField) -> Result<f64>;
    fn evaluate_with_gradient(&self, c: &CoefficientField) -> Result<(f64, GradientField)>;
}

/// The wave-equation inverse problem: misfit of the simulated front-face
/// trace against measured data, gradient via the adjoint sweep.
pub struct WaveProblem<'a> {
    pub grid: &'a Grid,
    pub data: &'a BoundaryTrace,
    pub src: SourceSpec,
    pub ic: InitialCondition,
    pub ta: TimeAxis,
    pub spec: TikhonovSpec,
}

impl InversionProblem for WaveProblem<'_> {
    fn grid(&self) -> &Grid {
        self.grid
    }

    fn evaluate(&self, c: &CoefficientField) -> Result<f64> {
        let fwd = forward_solve(self.grid, c, &self.src, &self.ic, &self.ta, RecordMode::TraceOnly)?;
        functional(self.grid, &fwd.trace, self.data, c, &self.spec)
    }

    fn evaluate_with_gradient(&self, c: &CoefficientField) -> Result<(f64, GradientField)> {
        let fwd = forward_solve(self.grid, c, &self.src, &self.ic, &self.ta, RecordMode::Full)?;
        let j = functional(self.grid, &fwd.trace, self.data, c, &self.spec)?;
        let residual = residual_trace(&fwd.trace, self.data, &self.spec.cutoff)?;
        let lam = adjoint_solve(self.grid, c, &residual, &self.src, &self.ta)?;
        let u_hist = fwd.history.expect("full record requested");
        let g = gradient(self.grid, &u_hist, &lam, c, &self.spec)?;
        Ok((j, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub m: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub max_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub wall_s: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    Stabilized,
}

pub struct InversionState {
    pub m: usize,
    pub c: CoefficientField,
    pub g: GradientField,
    pub j: f64,
    pub grad_norm: f64,
    /// Current search direction per cell; d⁰ = −g⁰.
    pub d: Vec<f64>,
    pub history: Vec<IterationRecord>,
    alpha0: Option<f64>,
    started: Instant,
}

impl InversionState {
    /// Evaluates the functional and gradient at the start iterate and logs
    /// iteration row 0.
    pub fn new<P: InversionProblem>(problem: &P, c_init: CoefficientField) -> Result<Self> {
        let started = Instant::now();
        let c = project(problem.grid(), &c_init);
        let (j, g) = problem.evaluate_with_gradient(&c)?;
        let grad_norm = g.norm_l2(problem.grid());
        let d: Vec<f64> = g.values().iter().map(|v| -v).collect();
        let history = vec![IterationRecord {
            m: 0,
            j,
            grad_norm,
            max_c: c.max_value(),
            alpha: 0.0,
            beta: 0.0,
            wall_s: started.elapsed().as_secs_f64(),
            line_search_failed: false,
        }];
        Ok(InversionState {
            m: 0,
            c,
            g,
            j,
            grad_norm,
            d,
            history,
            alpha0: None,
            started,
        })
    }
}

/// Default α₀ scales the first trial step to a max-norm coefficient change
/// of 1/2, so the line search starts at a physically meaningful step
/// regardless of the gradient's magnitude.
const FIRST_STEP_MAX_CHANGE: f64 = 0.5;

fn initial_alpha(state: &InversionState, step: &StepRule) -> f64 {
    match step {
        StepRule::Fixed(a) => *a,
        StepRule::Armijo { alpha0: Some(a) } => *a,
        StepRule::Armijo { alpha0: None } => {
            FIRST_STEP_MAX_CHANGE / state.g.max_abs().max(1e-300)
        }
    }
}

/// One conjugate-gradient update: Fletcher–Reeves direction from the
/// current gradient, step selection, projection, and re-evaluation of the
/// functional and gradient at the new iterate.
pub fn cg_step<P: InversionProblem>(
    state: &mut InversionState,
    problem: &P,
    config: &CgConfig,
) -> Result<()> {
    let grid = problem.grid();

    // α₀ is fixed for the whole run, derived from g⁰ on the first step.
    let alpha0 = match state.alpha0 {
        Some(a) => a,
        None => {
            let a = initial_alpha(state, &config.step);
            state.alpha0 = Some(a);
            a
        }
    };

    // Fletcher–Reeves coefficient (β⁰ = 0, optional periodic restart).
    let restart = state.m == 0
        || config
            .restart_every
            .map(|r| r > 0 && state.m % r == 0)
            .unwrap_or(false);
    let mut beta = if restart {
        0.0
    } else {
        let prev_norm = state.history[state.m - 1].grad_norm;
        if prev_norm == 0.0 {
            0.0
        } else {
            (state.grad_norm / prev_norm).powi(2)
        }
    };
    let mut d: Vec<f64> = state
        .g
        .values()
        .iter()
        .zip(&state.d)
        .map(|(g, d_old)| -g + beta * d_old)
        .collect();
    // Guard: fall back to steepest descent when d is not a descent direction.
    let slope = state.g.dot_cells(&d, grid);
    let slope = if slope >= 0.0 {
        beta = 0.0;
        d = state.g.values().iter().map(|v| -v).collect();
        -state.grad_norm * state.grad_norm
    } else {
        slope
    };

    let step_field = |alpha: f64| -> CoefficientField {
        let mut trial = state.c.clone();
        for (v, dv) in trial.values_mut().iter_mut().zip(&d) {
            *v += alpha * dv;
        }
        project(grid, &trial)
    };

    let (alpha, c_next, failed) = match config.step {
        StepRule::Fixed(a) => (a, step_field(a), false),
        StepRule::Armijo { .. } => {
            let mut accepted = None;
            let mut alpha = alpha0;
            for _ in 0..ARMIJO_MAX_TRIALS {
                let trial = step_field(alpha);
                let j_trial = problem.evaluate(&trial)?;
                if j_trial <= state.j + ARMIJO_SLOPE * alpha * slope {
                    accepted = Some((alpha, trial));
                    break;
                }
                alpha *= ARMIJO_SHRINK;
            }
            match accepted {
                Some((a, trial)) => (a, trial, false),
                None => {
                    let a = alpha0 / 10.0;
                    (a, step_field(a), true)
                }
            }
        }
    };

    let (j, g) = problem.evaluate_with_gradient(&c_next)?;
    let grad_norm = g.norm_l2(grid);
    state.m += 1;
    state.c = c_next;
    state.j = j;
    state.g = g;
    state.grad_norm = grad_norm;
    state.d = d;
    state.history.push(IterationRecord {
        m: state.m,
        j,
        grad_norm,
        max_c: state.c.max_value(),
        alpha,
        beta,
        wall_s: state.started.elapsed().as_secs_f64(),
        line_search_failed: failed,
    });
    Ok(())
}

fn stabilized(history: &[IterationRecord]) -> bool {
    if history.len() < STABILIZATION_SPAN + 1 {
        return false;
    }
    let tail = &history[history.len() - STABILIZATION_SPAN - 1..];
    tail.windows(2).all(|w| {
        let denom = w[0].grad_norm.abs().max(1e-300);
        (w[1].grad_norm - w[0].grad_norm).abs() / denom < STABILIZATION_REL
    })
}

/// Full inversion loop: iterate `cg_step` until the gradient tolerance,
/// the iteration cap, or stabilization of ‖g‖. `observer` is called with
/// every freshly evaluated iterate, including the start.
pub fn run<P, F>(
    problem: &P,
    config: &CgConfig,
    c_init: CoefficientField,
    mut observer: F,
) -> Result<(InversionState, StopReason)>
where
    P: InversionProblem,
    F: FnMut(usize, &CoefficientField, &GradientField),
{
    let mut state = InversionState::new(problem, c_init)?;
    observer(0, &state.c, &state.g);
    loop {
        if state.grad_norm <= config.theta {
            return Ok((state, StopReason::GradientTolerance));
        }
        if state.m >= config.max_iter {
            return Ok((state, StopReason::MaxIterations));
        }
        if stabilized(&state.history) {
            return Ok((state, StopReason::Stabilized));
        }
        cg_step(&mut state, problem, config)?;
        observer(state.m, &state.c, &state.g);
    }
}
