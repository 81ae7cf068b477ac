//! Tikhonov functional, adjoint-state gradient assembly, projection onto
//! the admissible set and reconstruction post-processing.

use rayon::prelude::*;

use crate::adjoint::{cutoff, CutoffSpec};
use crate::error::{Result, WaveError};
use crate::fields::{BoundaryTrace, CoefficientField, WaveHistory};
use crate::geometry::Grid;

/// Regularization-parameter rule γ = δ^{2ν} from the noise level δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRule {
    pub delta: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovSpec {
    pub gamma: f64,
    pub c0: CoefficientField,
    pub cutoff: CutoffSpec,
    pub gamma_rule: Option<GammaRule>,
}

impl TikhonovSpec {
    pub fn new(
        gamma: f64,
        c0: CoefficientField,
        cutoff: CutoffSpec,
        gamma_rule: Option<GammaRule>,
    ) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(WaveError::InvalidParameter(format!(
                "gamma = {gamma} must be > 0"
            )));
        }
        if let Some(rule) = &gamma_rule {
            if !(rule.nu > 0.0 && rule.nu < 0.25) {
                return Err(WaveError::InvalidParameter(format!(
                    "nu = {} must lie in (0, 1/4)",
                    rule.nu
                )));
            }
            if !(rule.delta > 0.0) {
                return Err(WaveError::InvalidParameter(format!(
                    "delta = {} must be > 0",
                    rule.delta
                )));
            }
        }
        Ok(TikhonovSpec {
            gamma,
            c0,
            cutoff,
            gamma_rule,
        })
    }

    /// γ in effect: the δ^{2ν} rule when present, the explicit value otherwise.
    pub fn effective_gamma(&self) -> f64 {
        match &self.gamma_rule {
            Some(rule) => rule.delta.powf(2.0 * rule.nu),
            None => self.gamma,
        }
    }
}

/// Per-cell descent-direction field; zero outside the inner region.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    ncells: [usize; 3],
    values: Vec<f64>,
}

impl GradientField {
    /// Wraps per-cell values, zeroing everything outside the inner region.
    pub fn from_cell_values(grid: &Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(WaveError::DimensionMismatch(format!(
                "expected {} cell values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !grid.is_inner_cell(grid.cell_ijk(idx)) {
                *v = 0.0;
            }
        }
        Ok(GradientField {
            ncells: grid.cells(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0f64, |m, v| m.max(v.abs()))
    }

    /// L2 norm with cell volume weight.
    pub fn norm_l2(&self, grid: &Grid) -> f64 {
        let h3 = grid.h.powi(3);
        (self.values.iter().map(|v| v * v).sum::<f64>() * h3).sqrt()
    }

    /// L2 inner product against a per-cell perturbation.
    pub fn dot_cells(&self, other: &[f64], grid: &Grid) -> f64 {
        let h3 = grid.h.powi(3);
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * h3
    }
}

fn trapezoid_weight(k: usize, n_steps: usize) -> f64 {
    if k == 0 || k == n_steps {
        0.5
    } else {
        1.0
    }
}

/// Tikhonov functional: data misfit on the front face with the temporal
/// cutoff, uniform h² face quadrature and trapezoidal time quadrature, plus
/// the quadratic penalty around c0.
pub fn functional(
    grid: &Grid,
    u_trace: &BoundaryTrace,
    data: &BoundaryTrace,
    c: &CoefficientField,
    spec: &TikhonovSpec,
) -> Result<f64> {
    if !u_trace.aligned_with(data) {
        return Err(WaveError::TraceMismatch(format!(
            "simulated trace {}x{} vs data {}x{}",
            u_trace.n_face, u_trace.n_levels, data.n_face, data.n_levels
        )));
    }
    if !c.matches(grid) || !spec.c0.matches(grid) {
        return Err(WaveError::DimensionMismatch(
            "coefficient field does not match grid".into(),
        ));
    }
    let h2 = grid.h * grid.h;
    let t_final = u_trace.t_final();
    let n_steps = u_trace.n_levels - 1;
    let mut misfit = 0.0;
    for k in 0..u_trace.n_levels {
        let z = cutoff(&spec.cutoff, k as f64 * u_trace.tau, t_final);
        if z == 0.0 {
            continue;
        }
        let w = trapezoid_weight(k, n_steps);
        let mut level_sum = 0.0;
        let (us, ds) = (u_trace.level(k), data.level(k));
        for i in 0..u_trace.n_face {
            let r = us[i] - ds[i];
            level_sum += r * r;
        }
        misfit += w * z * level_sum;
    }
    misfit *= 0.5 * h2 * u_trace.tau;

    let gamma = spec.effective_gamma();
    let h3 = grid.h.powi(3);
    let reg: f64 = c
        .values()
        .iter()
        .zip(spec.c0.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        * 0.5
        * gamma
        * h3;
    Ok(misfit + reg)
}

/// Trilinear cell gradient: one-sided differences of the 8 corner values,
/// averaged over the 4 parallel edges per axis.
#[inline]
fn cell_gradient(grid: &Grid, u: &[f64], base: usize) -> [f64; 3] {
    let n0 = grid.n[0];
    let s3 = grid.n[0] * grid.n[1];
    let c = [
        u[base],
        u[base + 1],
        u[base + n0],
        u[base + n0 + 1],
        u[base + s3],
        u[base + s3 + 1],
        u[base + s3 + n0],
        u[base + s3 + n0 + 1],
    ];
    let q = 1.0 / (4.0 * grid.h);
    [
        ((c[1] - c[0]) + (c[3] - c[2]) + (c[5] - c[4]) + (c[7] - c[6])) * q,
        ((c[2] - c[0]) + (c[3] - c[1]) + (c[6] - c[4]) + (c[7] - c[5])) * q,
        ((c[4] - c[0]) + (c[5] - c[1]) + (c[6] - c[2]) + (c[7] - c[3])) * q,
    ]
}

/// Adjoint-state gradient: per inner cell the trapezoidal time integral of
/// ∇u · ∇λ plus γ(c − c0); zero on every cell outside the inner region.
pub fn gradient(
    grid: &Grid,
    u_hist: &WaveHistory,
    lam_hist: &WaveHistory,
    c: &CoefficientField,
    spec: &TikhonovSpec,
) -> Result<GradientField> {
    if u_hist.n_levels() != lam_hist.n_levels()
        || (u_hist.tau - lam_hist.tau).abs() > 1e-9 * u_hist.tau
    {
        return Err(WaveError::HistoryMismatch(format!(
            "{} levels / tau {} vs {} levels / tau {}",
            u_hist.n_levels(),
            u_hist.tau,
            lam_hist.n_levels(),
            lam_hist.tau
        )));
    }
    if u_hist.levels[0].len() != grid.node_count() {
        return Err(WaveError::HistoryMismatch(format!(
            "history has {} nodes, grid has {}",
            u_hist.levels[0].len(),
            grid.node_count()
        )));
    }
    if !c.matches(grid) || !spec.c0.matches(grid) {
        return Err(WaveError::DimensionMismatch(
            "coefficient field does not match grid".into(),
        ));
    }
    let gamma = spec.effective_gamma();
    let tau = u_hist.tau;
    let n_steps = u_hist.n_levels() - 1;
    let mut values = vec![0.0; grid.cell_count()];
    values
        .par_iter_mut()
        .enumerate()
        .with_min_len(64)
        .for_each(|(idx, out)| {
            let ci = grid.cell_ijk(idx);
            if !grid.is_inner_cell(ci) {
                return;
            }
            let base = grid.node_index(ci);
            let mut acc = 0.0;
            for k in 0..=n_steps {
                let gu = cell_gradient(grid, &u_hist.levels[k], base);
                let gl = cell_gradient(grid, &lam_hist.levels[k], base);
                let dot = gu[0] * gl[0] + gu[1] * gl[1] + gu[2] * gl[2];
                acc += trapezoid_weight(k, n_steps) * dot;
            }
            *out = acc * tau + gamma * (c.values()[idx] - spec.c0.values()[idx]);
        });
    Ok(GradientField {
        ncells: grid.cells(),
        values,
    })
}

/// Projection onto the admissible set: clamp to [1, d] and pin to 1 on
/// every cell outside the inner region.
pub fn project(grid: &Grid, c: &CoefficientField) -> CoefficientField {
    let d = c.d;
    let values: Vec<f64> = c
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            if grid.is_inner_cell(grid.cell_ijk(idx)) {
                v.clamp(1.0, d)
            } else {
                1.0
            }
        })
        .collect();
    CoefficientField::from_values(grid, values, d).expect("projected field is admissible")
}

/// Image post-processing: keep values above the fraction `p` of the maximum,
/// reset everything else to background.
pub fn postprocess(c: &CoefficientField, p: f64) -> Result<CoefficientField> {
    if !(p > 0.0 && p < 1.0) {
        return Err(WaveError::InvalidParameter(format!(
            "threshold fraction {p} must lie in (0, 1)"
        )));
    }
    let cmax = c.max_value();
    let mut out = c.clone();
    for v in out.values_mut() {
        if !(*v > p * cmax) {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// Accuracy-estimate pair: lhs = ‖c − c*‖, rhs = (2/δ^{2ν})‖g‖ + ξ‖c0 − c*‖,
/// both in the cell-volume-weighted L2 norm. Diagnostic only.
pub fn theorem3_from_gradient(
    grid: &Grid,
    g: &GradientField,
    c: &CoefficientField,
    c0: &CoefficientField,
    c_star: &CoefficientField,
    delta: f64,
    nu: f64,
    xi: f64,
) -> (f64, f64) {
    let h3 = grid.h.powi(3);
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        (a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            * h3)
            .sqrt()
    };
    let lhs = norm(c.values(), c_star.values());
    let rhs = 2.0 / delta.powf(2.0 * nu) * g.norm_l2(grid) + xi * norm(c0.values(), c_star.values());
    (lhs, rhs)
}

/// As `theorem3_from_gradient`, assembling the gradient from the state and
/// adjoint histories first.
#[allow(clippy::too_many_arguments)]
pub fn theorem3_bound(
    grid: &Grid,
    u_hist: &WaveHistory,
    lam_hist: &WaveHistory,
    c: &CoefficientField,
    spec: &TikhonovSpec,
    c_star: &CoefficientField,
    delta: f64,
    nu: f64,
    xi: f64,
) -> Result<(f64, f64)> {
    let g = gradient(grid, u_hist, lam_hist, c, spec)?;
    Ok(theorem3_from_gradient(
        grid, &g, c, &spec.c0, c_star, delta, nu, xi,
    ))
}
