//! Backward-in-time solver for the adjoint problem: same spatial operator
//! and boundary treatment as the forward sweep, run in reversed time with
//! zero terminal data and the weighted boundary residual injected on the
//! front face.

use rayon::prelude::*;

use crate::error::{Result, WaveError};
use crate::fields::{BoundaryTrace, CoefficientField, WaveHistory};
use crate::forward::{cfl_max_tau, lap_node, EdgeCoeffs, SourceSpec, TimeAxis};
use crate::geometry::{FaceTag, Grid};

const TIME_EPS: f64 = 1e-12;
const BLOWUP_CHECK_INTERVAL: usize = 50;
const PAR_MIN_LEN: usize = 4096;

/// Temporal cutoff z that decays smoothly from 1 to 0 over the last `window`
/// of the observation interval, enforcing compatibility with the zero
/// terminal data of the adjoint. `window = 0` disables the cutoff (z ≡ 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    pub window: f64,
}

impl CutoffSpec {
    pub fn new(window: f64) -> Result<Self> {
        if !(window >= 0.0) {
            return Err(WaveError::InvalidParameter(format!(
                "cutoff window {window} must be >= 0"
            )));
        }
        Ok(CutoffSpec { window })
    }
}

/// Cutoff weight at time t for final time `t_final`: 1 up to t_final - w,
/// then a quintic smoothstep down to exactly 0 at t_final (C² at both ends).
pub fn cutoff(spec: &CutoffSpec, t: f64, t_final: f64) -> f64 {
    let w = spec.window;
    if w == 0.0 {
        return 1.0;
    }
    if t <= t_final - w {
        1.0
    } else if t >= t_final {
        0.0
    } else {
        let s = (t - (t_final - w)) / w;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Builds the adjoint driving term (u - data) * z on the front face.
pub fn residual_trace(
    u_trace: &BoundaryTrace,
    data: &BoundaryTrace,
    spec: &CutoffSpec,
) -> Result<BoundaryTrace> {
    if !u_trace.aligned_with(data) {
        return Err(WaveError::TraceMismatch(format!(
            "simulated trace {}x{} vs data {}x{}",
            u_trace.n_face, u_trace.n_levels, data.n_face, data.n_levels
        )));
    }
    let t_final = u_trace.t_final();
    let mut out = BoundaryTrace::zeros(u_trace.n_face, u_trace.n_levels, u_trace.tau);
    for k in 0..u_trace.n_levels {
        let z = cutoff(spec, k as f64 * u_trace.tau, t_final);
        for i in 0..u_trace.n_face {
            out.set(k, i, (u_trace.at(k, i) - data.at(k, i)) * z);
        }
    }
    Ok(out)
}

/// Injection weight turning the uniform h² face quadrature of the data
/// misfit into a load per unit lumped mass: 2^(number of lateral boundary
/// planes the front node sits on).
#[inline]
fn injection_weight(grid: &Grid, i: [usize; 3]) -> f64 {
    let mut w = 1.0;
    if i[0] == 0 || i[0] == grid.n[0] - 1 {
        w *= 2.0;
    }
    if i[1] == 0 || i[1] == grid.n[1] - 1 {
        w *= 2.0;
    }
    w
}

/// Backward sweep of the adjoint wave problem: terminal conditions
/// λ(T) = λ_t(T) = 0, residual load on the front face, boundary rows
/// mirroring the forward scheme (source-phase ghost rows before the pulse
/// end, upwind absorbing after; back face absorbing; lateral reflecting).
/// Returns the full history, level 0..N_t.
pub fn adjoint_solve(
    grid: &Grid,
    c: &CoefficientField,
    residual: &BoundaryTrace,
    src: &SourceSpec,
    ta: &TimeAxis,
) -> Result<WaveHistory> {
    if !c.matches(grid) {
        return Err(WaveError::DimensionMismatch(
            "coefficient field does not match grid".into(),
        ));
    }
    let max_tau = cfl_max_tau(grid, c);
    if ta.tau > max_tau * (1.0 + 1e-9) {
        return Err(WaveError::CflViolation {
            tau: ta.tau,
            max_tau,
        });
    }
    let n_face = grid.n[0] * grid.n[1];
    if residual.n_face != n_face || residual.n_levels != ta.n_levels() {
        return Err(WaveError::TraceMismatch(format!(
            "residual {}x{} does not match front face {n_face} x {} levels",
            residual.n_face,
            residual.n_levels,
            ta.n_levels()
        )));
    }

    let n_nodes = grid.node_count();
    let tau = ta.tau;
    let h = grid.h;
    let t1 = src.t1();
    let edges = EdgeCoeffs::build(grid, c);
    let s3 = n_face;

    let n_levels = ta.n_levels();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); n_levels];
    levels[n_levels - 1] = vec![0.0; n_nodes];
    if n_levels > 1 {
        levels[n_levels - 2] = vec![0.0; n_nodes];
    }

    // Front-face nodes are the first n_face nodes in grid order, so a front
    // node's index doubles as its residual column.
    let mut lam_prev = vec![0.0; n_nodes];
    for k in (1..ta.n_steps).rev() {
        let t_k = k as f64 * tau;
        let in_source_phase = t_k <= t1 + TIME_EPS;
        let res_k = residual.level(k);
        {
            let lam_cur = &levels[k];
            let lam_next = &levels[k + 1];
            let edges = &edges;
            lam_prev
                .par_iter_mut()
                .enumerate()
                .with_min_len(PAR_MIN_LEN)
                .for_each(|(idx, out)| {
                    let i = grid.node_ijk(idx);
                    *out = match grid.face_tag(idx) {
                        Some(FaceTag::Front) => {
                            let wgt = injection_weight(grid, i);
                            if in_source_phase {
                                let q = -res_k[idx] * wgt;
                                2.0 * lam_cur[idx] - lam_next[idx]
                                    + tau * tau * lap_node(grid, edges, lam_cur, i, q)
                            } else {
                                lam_cur[idx] + tau * (lam_cur[idx + s3] - lam_cur[idx]) / h
                                    - tau * res_k[idx] * wgt
                            }
                        }
                        Some(FaceTag::Back) => {
                            lam_cur[idx] + tau * (lam_cur[idx - s3] - lam_cur[idx]) / h
                        }
                        _ => {
                            2.0 * lam_cur[idx] - lam_next[idx]
                                + tau * tau * lap_node(grid, edges, lam_cur, i, 0.0)
                        }
                    };
                });
        }
        if k % BLOWUP_CHECK_INTERVAL == 0 {
            if lam_prev.iter().any(|v| !v.is_finite()) {
                return Err(WaveError::NonFiniteField { step: k });
            }
        }
        levels[k - 1] = lam_prev.clone();
    }
    if levels[0].iter().any(|v| !v.is_finite()) {
        return Err(WaveError::NonFiniteField { step: 0 });
    }

    Ok(WaveHistory {
        levels,
        tau,
        t_final: ta.t_final,
    })
}
