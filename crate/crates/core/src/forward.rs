//! Explicit leapfrog solver for u_tt = div(c grad u): variable-coefficient
//! 7-point interior stencil, plane-wave Neumann source on the front face,
//! first-order absorbing conditions on front (after the pulse) and back
//! faces, reflecting ghost nodes on the lateral faces.

use rayon::prelude::*;

use crate::error::{Result, WaveError};
use crate::fields::{BoundaryTrace, CoefficientField, WaveHistory};
use crate::geometry::{FaceTag, Grid};

const TIME_EPS: f64 = 1e-12;
const BLOWUP_CHECK_INTERVAL: usize = 50;
const PAR_MIN_LEN: usize = 4096;

/// Incident plane-wave pulse p(t) = sin(omega t) on (0, 2 pi / omega], 0 after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub omega: f64,
}

impl SourceSpec {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(WaveError::InvalidParameter(format!(
                "omega = {omega} must be > 0"
            )));
        }
        Ok(SourceSpec { omega })
    }

    /// End of the pulse support.
    pub fn t1(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

pub fn pulse_value(src: &SourceSpec, t: f64) -> f64 {
    if t > 0.0 && t <= src.t1() + TIME_EPS {
        (src.omega * t).sin()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Zero,
    /// f0(x) = exp(-(x1² + x2² + x3²)), f1 = 0.
    GaussianBump,
}

impl InitialCondition {
    pub fn f0(&self, x: [f64; 3]) -> f64 {
        match self {
            InitialCondition::Zero => 0.0,
            InitialCondition::GaussianBump => {
                (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub tau: f64,
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeAxis {
    pub fn new(tau: f64, t_final: f64) -> Result<Self> {
        if !(tau > 0.0 && t_final > 0.0) {
            return Err(WaveError::InvalidParameter(format!(
                "tau = {tau} and T = {t_final} must be > 0"
            )));
        }
        let r = t_final / tau;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(WaveError::InvalidParameter(format!(
                "T = {t_final} is not an integer multiple of tau = {tau}"
            )));
        }
        Ok(TimeAxis {
            tau,
            t_final,
            n_steps: n as usize,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }
}

/// Largest stable time step for the 3D leapfrog scheme: h / (sqrt(max c) sqrt(3)).
pub fn cfl_max_tau(grid: &Grid, c: &CoefficientField) -> f64 {
    grid.h / (c.max_value().sqrt() * 3f64.sqrt())
}

/// Face-averaged edge coefficients: for each lattice edge, the arithmetic
/// mean of the adjacent cell values of c (4 in the interior, fewer on the
/// boundary).
pub(crate) struct EdgeCoeffs {
    /// Per axis: edge values, indexed by the low node of the edge with the
    /// edge axis running over n-1 entries.
    e: [Vec<f64>; 3],
    dims: [[usize; 3]; 3],
}

impl EdgeCoeffs {
    pub(crate) fn build(grid: &Grid, c: &CoefficientField) -> Self {
        let n = grid.n;
        let nc = grid.cells();
        let cv = c.values();
        let mut e: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut dims = [[0usize; 3]; 3];
        for a in 0..3 {
            let mut d = n;
            d[a] -= 1;
            dims[a] = d;
            let mut vals = vec![0.0; d[0] * d[1] * d[2]];
            for i3 in 0..d[2] {
                for i2 in 0..d[1] {
                    for i1 in 0..d[0] {
                        let i = [i1, i2, i3];
                        let mut sum = 0.0;
                        let mut count = 0usize;
                        // Cells adjacent to the edge: fixed index i[a] along
                        // the edge axis, i[b]-1 and i[b] on the other axes.
                        let (b1, b2) = match a {
                            0 => (1, 2),
                            1 => (0, 2),
                            _ => (0, 1),
                        };
                        for db1 in 0..2usize {
                            if i[b1] + db1 == 0 || i[b1] + db1 > nc[b1] {
                                continue;
                            }
                            for db2 in 0..2usize {
                                if i[b2] + db2 == 0 || i[b2] + db2 > nc[b2] {
                                    continue;
                                }
                                let mut ci = [0usize; 3];
                                ci[a] = i[a];
                                ci[b1] = i[b1] + db1 - 1;
                                ci[b2] = i[b2] + db2 - 1;
                                sum += cv[grid.cell_index(ci)];
                                count += 1;
                            }
                        }
                        vals[i1 + d[0] * (i2 + d[1] * i3)] = sum / count as f64;
                    }
                }
            }
            e[a] = vals;
        }
        EdgeCoeffs { e, dims }
    }

    #[inline]
    pub(crate) fn at(&self, a: usize, i: [usize; 3]) -> f64 {
        let d = self.dims[a];
        self.e[a][i[0] + d[0] * (i[1] + d[1] * i[2])]
    }
}

/// Discrete div(c grad u) at one node, with reflecting ghost values at every
/// boundary; `front_flux` adds the Neumann flux term 2 h q to the x3-low
/// ghost (the plane-wave source in the forward run, the residual load in
/// the adjoint run).
#[inline]
pub(crate) fn lap_node(
    grid: &Grid,
    edges: &EdgeCoeffs,
    u: &[f64],
    i: [usize; 3],
    front_flux: f64,
) -> f64 {
    let n = grid.n;
    let h = grid.h;
    let idx = grid.node_index(i);
    let u0 = u[idx];
    let strides = [1usize, n[0], n[0] * n[1]];
    let mut acc = 0.0;
    for a in 0..3 {
        let s = strides[a];
        let mut below = i;
        below[a] = i[a].saturating_sub(1);
        // High side: mirror ghost on the last plane reuses the inward edge.
        if i[a] + 1 < n[a] {
            acc += edges.at(a, i) * (u[idx + s] - u0);
        } else {
            acc += edges.at(a, below) * (u[idx - s] - u0);
        }
        // Low side: mirror ghost on the first plane, plus the Neumann flux
        // term on the front face.
        if i[a] > 0 {
            acc += edges.at(a, below) * (u[idx - s] - u0);
        } else {
            let mut ghost = u[idx + s] - u0;
            if a == 2 {
                ghost += 2.0 * h * front_flux;
            }
            acc += edges.at(a, i) * ghost;
        }
    }
    acc / (h * h)
}

/// Applies the variable-coefficient stencil with reflecting ghosts on every
/// boundary (no source, no absorbing rows). This is the shared spatial
/// operator of the forward and adjoint sweeps.
pub fn apply_stencil(grid: &Grid, c: &CoefficientField, u: &[f64]) -> Vec<f64> {
    let edges = EdgeCoeffs::build(grid, c);
    (0..grid.node_count())
        .map(|idx| lap_node(grid, &edges, u, grid.node_ijk(idx), 0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    TraceOnly,
    Full,
}

pub struct ForwardResult {
    pub trace: BoundaryTrace,
    pub history: Option<WaveHistory>,
}

fn check_finite(u: &[f64], step: usize) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(WaveError::NonFiniteField { step });
    }
    Ok(())
}

fn record_front(trace: &mut BoundaryTrace, level: usize, front_nodes: &[usize], u: &[f64]) {
    let row = trace.level_mut(level);
    for (col, &idx) in front_nodes.iter().enumerate() {
        row[col] = u[idx];
    }
}

/// One leapfrog sweep of the forward problem. Returns the field restricted
/// to the front face at every time level, and the full space-time history
/// when requested (needed by the gradient).
pub fn forward_solve(
    grid: &Grid,
    c: &CoefficientField,
    src: &SourceSpec,
    ic: &InitialCondition,
    ta: &TimeAxis,
    record: RecordMode,
) -> Result<ForwardResult> {
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

    let n_nodes = grid.node_count();
    let tau = ta.tau;
    let h = grid.h;
    let t1 = src.t1();
    let edges = EdgeCoeffs::build(grid, c);
    let front = crate::fields::front_face(grid);

    let mut trace = BoundaryTrace::zeros(front.len(), ta.n_levels(), tau);
    let mut history: Vec<Vec<f64>> = Vec::new();

    // Level 0 from the initial data.
    let u_prev: Vec<f64> = (0..n_nodes)
        .map(|idx| ic.f0(grid.node_coord(grid.node_ijk(idx))))
        .collect();

    // Second-order start: u¹ = u⁰ + tau f1 + (tau²/2) div(c grad u⁰), f1 = 0.
    let p0 = pulse_value(src, 0.0);
    let u_cur: Vec<f64> = (0..n_nodes)
        .map(|idx| {
            let i = grid.node_ijk(idx);
            u_prev[idx] + 0.5 * tau * tau * lap_node(grid, &edges, &u_prev, i, p0)
        })
        .collect();

    record_front(&mut trace, 0, &front.nodes, &u_prev);
    if ta.n_levels() > 1 {
        record_front(&mut trace, 1, &front.nodes, &u_cur);
    }
    if record == RecordMode::Full {
        history.push(u_prev.clone());
        if ta.n_levels() > 1 {
            history.push(u_cur.clone());
        }
    }

    let mut u_prev = u_prev;
    let mut u_cur = u_cur;
    let mut u_next = vec![0.0; n_nodes];
    let s3 = grid.n[0] * grid.n[1];

    for k in 1..ta.n_steps {
        let t_k = k as f64 * tau;
        let in_source_phase = t_k <= t1 + TIME_EPS;
        let p_k = pulse_value(src, t_k);
        {
            let u_cur = &u_cur;
            let u_prev = &u_prev;
            let edges = &edges;
            u_next
                .par_iter_mut()
                .enumerate()
                .with_min_len(PAR_MIN_LEN)
                .for_each(|(idx, out)| {
                    let i = grid.node_ijk(idx);
                    *out = match grid.face_tag(idx) {
                        Some(FaceTag::Front) => {
                            if in_source_phase {
                                2.0 * u_cur[idx] - u_prev[idx]
                                    + tau * tau * lap_node(grid, edges, u_cur, i, p_k)
                            } else {
                                // First-order absorbing, upwind in space and
                                // time (centered time with one-sided space is
                                // unstable under leapfrog). c = 1 here.
                                u_cur[idx] + tau * (u_cur[idx + s3] - u_cur[idx]) / h
                            }
                        }
                        Some(FaceTag::Back) => {
                            u_cur[idx] + tau * (u_cur[idx - s3] - u_cur[idx]) / h
                        }
                        _ => {
                            2.0 * u_cur[idx] - u_prev[idx]
                                + tau * tau * lap_node(grid, edges, u_cur, i, 0.0)
                        }
                    };
                });
        }
        if (k + 1) % BLOWUP_CHECK_INTERVAL == 0 {
            check_finite(&u_next, k + 1)?;
        }
        record_front(&mut trace, k + 1, &front.nodes, &u_next);
        if record == RecordMode::Full {
            history.push(u_next.clone());
        }
        std::mem::swap(&mut u_prev, &mut u_cur);
        std::mem::swap(&mut u_cur, &mut u_next);
    }
    check_finite(&u_cur, ta.n_steps)?;

    let history = match record {
        RecordMode::Full => Some(WaveHistory {
            levels: history,
            tau,
            t_final: ta.t_final,
        }),
        RecordMode::TraceOnly => None,
    };
    Ok(ForwardResult { trace, history })
}
