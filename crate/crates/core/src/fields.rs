//! Field containers, phantom generators for the conductivity test cases,
//! the data noise model and field/trace serialization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WaveError};
use crate::geometry::{FaceSet, FaceTag, Grid};

const MAGIC_TRACE: &[u8; 5] = b"WVTR1";
const MAGIC_FIELD: &[u8; 5] = b"WVCF1";

/// Piecewise-constant-per-cell conductivity, the optimization unknown.
/// Values are pinned to 1 on every cell outside the inner region and
/// clamped to the admissible interval [1, d].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    ncells: [usize; 3],
    values: Vec<f64>,
    /// Admissible upper bound d in 1 <= c <= d.
    pub d: f64,
}

impl CoefficientField {
    pub fn uniform(grid: &Grid, value: f64, d: f64) -> Result<Self> {
        phantom(&PhantomKind::Uniform(value), grid, d)
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>, d: f64) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(WaveError::DimensionMismatch(format!(
                "expected {} cell values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v >= 1.0 && *v <= d) {
                return Err(WaveError::ValueOutOfBounds(format!(
                    "cell {i}: value {v} outside [1, {d}]"
                )));
            }
            if !grid.is_inner_cell(grid.cell_ijk(i)) && (*v - 1.0).abs() > 0.0 {
                return Err(WaveError::ValueOutOfBounds(format!(
                    "cell {i} outside the inner region must be 1, got {v}"
                )));
            }
        }
        Ok(CoefficientField {
            ncells: grid.cells(),
            values,
            d,
        })
    }

    pub fn ncells(&self) -> [usize; 3] {
        self.ncells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw mutable access; callers are responsible for re-establishing the
    /// admissibility invariants (see `objective::project`).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.ncells == grid.cells()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Nodal field at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub values: Vec<f64>,
    pub level: usize,
}

/// Full space-time record of the nodal field, one state per time level
/// k = 0..N_t.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveHistory {
    pub levels: Vec<Vec<f64>>,
    pub tau: f64,
    pub t_final: f64,
}

impl WaveHistory {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Space-time record of the field on one boundary face, time-major:
/// value(k, i) for time level k and face node i.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub n_face: usize,
    pub n_levels: usize,
    pub tau: f64,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(n_face: usize, n_levels: usize, tau: f64) -> Self {
        BoundaryTrace {
            n_face,
            n_levels,
            tau,
            values: vec![0.0; n_face * n_levels],
        }
    }

    pub fn from_values(n_face: usize, n_levels: usize, tau: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_face * n_levels {
            return Err(WaveError::DimensionMismatch(format!(
                "trace expects {} values, got {}",
                n_face * n_levels,
                values.len()
            )));
        }
        Ok(BoundaryTrace {
            n_face,
            n_levels,
            tau,
            values,
        })
    }

    pub fn t_final(&self) -> f64 {
        (self.n_levels - 1) as f64 * self.tau
    }

    #[inline]
    pub fn at(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.n_face + node]
    }

    #[inline]
    pub fn set(&mut self, level: usize, node: usize, v: f64) {
        self.values[level * self.n_face + node] = v;
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_face..(k + 1) * self.n_face]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_face..(k + 1) * self.n_face]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn aligned_with(&self, other: &BoundaryTrace) -> bool {
        self.n_face == other.n_face
            && self.n_levels == other.n_levels
            && (self.tau - other.tau).abs() <= 1e-9 * self.tau.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Noise level in percent.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomKind {
    Uniform(f64),
    /// One Gaussian spike: c = 1 + 5 exp(-(x1² + x2² + x3²)/0.2).
    Gaussian1,
    /// Three Gaussian spikes centered at x1 = -2, 0, 2.
    Gaussian3,
    Balls(Vec<Ball>),
}

fn gaussian1(x: [f64; 3]) -> f64 {
    1.0 + 5.0 * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.2).exp()
}

fn gaussian3(x: [f64; 3]) -> f64 {
    let spike = |c1: f64| {
        let d1 = x[0] - c1;
        5.0 * (-((d1 * d1 + x[1] * x[1] + x[2] * x[2]) / 0.2)).exp()
    };
    1.0 + spike(-2.0) + spike(0.0) + spike(2.0)
}

/// Samples a conductivity phantom at cell centers, clamped to 1 outside the
/// inner region.
pub fn phantom(kind: &PhantomKind, grid: &Grid, d: f64) -> Result<CoefficientField> {
    if let PhantomKind::Balls(balls) = kind {
        for b in balls {
            for k in 0..3 {
                if b.center[k] <= grid.inner.lo[k] || b.center[k] >= grid.inner.hi[k] {
                    return Err(WaveError::ValueOutOfBounds(format!(
                        "ball center {:?} outside the inner region",
                        b.center
                    )));
                }
            }
            if !(b.value >= 1.0 && b.value <= d) {
                return Err(WaveError::ValueOutOfBounds(format!(
                    "ball value {} outside [1, {d}]",
                    b.value
                )));
            }
        }
    }
    let mut values = vec![1.0; grid.cell_count()];
    for idx in 0..grid.cell_count() {
        let c = grid.cell_ijk(idx);
        if !grid.is_inner_cell(c) {
            continue;
        }
        let x = grid.cell_center(c);
        let v = match kind {
            PhantomKind::Uniform(v) => *v,
            PhantomKind::Gaussian1 => gaussian1(x),
            PhantomKind::Gaussian3 => gaussian3(x),
            PhantomKind::Balls(balls) => {
                let mut v = 1.0f64;
                for b in balls {
                    let dx = [x[0] - b.center[0], x[1] - b.center[1], x[2] - b.center[2]];
                    let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
                    if r2 <= b.radius * b.radius {
                        v = v.max(b.value);
                    }
                }
                v
            }
        };
        if !(v >= 1.0 - 1e-12 && v <= d + 1e-12) {
            return Err(WaveError::ValueOutOfBounds(format!(
                "phantom value {v} at cell {idx} outside [1, {d}]"
            )));
        }
        values[idx] = v.clamp(1.0, d);
    }
    CoefficientField::from_values(grid, values, d)
}

/// Multiplicative noise u_sigma = u (1 + (sigma/100) r) with r i.i.d.
/// uniform on [-1, 1] from a seeded generator. Deterministic given the seed.
pub fn add_noise(trace: &BoundaryTrace, spec: &NoiseSpec) -> BoundaryTrace {
    if spec.sigma == 0.0 {
        return trace.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.sigma / 100.0;
    let mut out = trace.clone();
    for v in out.values.iter_mut() {
        let r: f64 = rng.gen_range(-1.0..=1.0);
        *v *= 1.0 + scale * r;
    }
    out
}

/// Literal deterministic reading of the noise formula: a uniform scale by
/// (1 + sigma/100).
pub fn scale_literal(trace: &BoundaryTrace, sigma: f64) -> BoundaryTrace {
    let mut out = trace.clone();
    let f = 1.0 + sigma / 100.0;
    for v in out.values.iter_mut() {
        *v *= f;
    }
    out
}

/// Point-samples a trace computed on a 2x refined grid (in space and time)
/// down to the coarse grid: every 2nd face node and every 2nd time level.
pub fn restrict_to_coarse(
    fine: &BoundaryTrace,
    fine_grid: &Grid,
    coarse_grid: &Grid,
    coarse_tau: f64,
) -> Result<BoundaryTrace> {
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
    if !rel(fine_grid.h * 2.0, coarse_grid.h) {
        return Err(WaveError::GridMismatch(format!(
            "fine spacing {} is not half the coarse spacing {}",
            fine_grid.h, coarse_grid.h
        )));
    }
    if !rel(fine.tau * 2.0, coarse_tau) {
        return Err(WaveError::GridMismatch(format!(
            "fine time step {} is not half the coarse time step {coarse_tau}",
            fine.tau
        )));
    }
    for k in 0..3 {
        if !rel(fine_grid.domain.lo[k], coarse_grid.domain.lo[k])
            || !rel(fine_grid.domain.hi[k], coarse_grid.domain.hi[k])
        {
            return Err(WaveError::GridMismatch(
                "fine and coarse domains differ".into(),
            ));
        }
    }
    let nf = [fine_grid.n[0], fine_grid.n[1]];
    let nc = [coarse_grid.n[0], coarse_grid.n[1]];
    if nf[0] != 2 * nc[0] - 1 || nf[1] != 2 * nc[1] - 1 {
        return Err(WaveError::GridMismatch(
            "face node counts are not 2x refined".into(),
        ));
    }
    if fine.n_face != nf[0] * nf[1] {
        return Err(WaveError::DimensionMismatch(format!(
            "fine trace has {} face nodes, expected {}",
            fine.n_face,
            nf[0] * nf[1]
        )));
    }
    if (fine.n_levels - 1) % 2 != 0 {
        return Err(WaveError::GridMismatch(
            "fine trace level count is not 2x refined".into(),
        ));
    }
    let n_levels = (fine.n_levels - 1) / 2 + 1;
    let mut out = BoundaryTrace::zeros(nc[0] * nc[1], n_levels, coarse_tau);
    for k in 0..n_levels {
        for i2 in 0..nc[1] {
            for i1 in 0..nc[0] {
                let v = fine.at(2 * k, 2 * i1 + nf[0] * (2 * i2));
                out.set(k, i1 + nc[0] * i2, v);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| WaveError::CorruptHeader(format!("truncated {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

/// Binary trace format: magic "WVTR1", little-endian u64 dims
/// {n_face, n_levels}, f64 tau, then the row-major f64 array.
pub fn save_trace(trace: &BoundaryTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_TRACE)?;
    write_u64(&mut w, trace.n_face as u64)?;
    write_u64(&mut w, trace.n_levels as u64)?;
    write_f64(&mut w, trace.tau)?;
    for v in &trace.values {
        write_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<BoundaryTrace> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, "trace magic")?;
    if &magic != MAGIC_TRACE {
        return Err(WaveError::CorruptHeader(format!(
            "bad trace magic {magic:?}"
        )));
    }
    let n_face = read_u64(&mut r, "trace dims")? as usize;
    let n_levels = read_u64(&mut r, "trace dims")? as usize;
    let tau = read_f64(&mut r, "trace tau")?;
    let mut values = vec![0.0; n_face * n_levels];
    for v in values.iter_mut() {
        *v = read_f64(&mut r, "trace payload")?;
    }
    BoundaryTrace::from_values(n_face, n_levels, tau, values)
}

/// Raw binary field format: magic "WVCF1", u64 cell dims, f64 d, then the
/// row-major f64 cell values.
pub fn save_field_raw(field: &CoefficientField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_FIELD)?;
    for k in 0..3 {
        write_u64(&mut w, field.ncells[k] as u64)?;
    }
    write_f64(&mut w, field.d)?;
    for v in &field.values {
        write_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_field_raw(path: &Path) -> Result<CoefficientField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, "field magic")?;
    if &magic != MAGIC_FIELD {
        return Err(WaveError::CorruptHeader(format!(
            "bad field magic {magic:?}"
        )));
    }
    let mut ncells = [0usize; 3];
    for k in 0..3 {
        ncells[k] = read_u64(&mut r, "field dims")? as usize;
    }
    let d = read_f64(&mut r, "field bound")?;
    let mut values = vec![0.0; ncells[0] * ncells[1] * ncells[2]];
    for v in values.iter_mut() {
        *v = read_f64(&mut r, "field payload")?;
    }
    Ok(CoefficientField { ncells, values, d })
}

/// Writes the field as legacy ASCII VTK STRUCTURED_POINTS with one double
/// scalar per cell.
pub fn save_field_vtk(field: &CoefficientField, grid: &Grid, path: &Path) -> Result<()> {
    if !field.matches(grid) {
        return Err(WaveError::DimensionMismatch(
            "field does not match grid".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "conductivity field")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", grid.n[0], grid.n[1], grid.n[2])?;
    writeln!(
        w,
        "ORIGIN {} {} {}",
        grid.domain.lo[0], grid.domain.lo[1], grid.domain.lo[2]
    )?;
    writeln!(w, "SPACING {} {} {}", grid.h, grid.h, grid.h)?;
    writeln!(w, "CELL_DATA {}", grid.cell_count())?;
    writeln!(w, "SCALARS conductivity double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &field.values {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// The observation face of a grid: the front (backscattering) boundary.
pub fn front_face(grid: &Grid) -> FaceSet {
    crate::geometry::faces(grid, FaceTag::Front)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, BoxDomain};
    use proptest::prelude::*;

    fn centered_grid() -> Grid {
        // 16 nodes per axis -> 15 cells, center cell centered exactly at 0.
        build_grid(
            BoxDomain::new([-0.75, -0.75, -0.75], [0.75, 0.75, 0.75]).unwrap(),
            BoxDomain::new([-0.55, -0.55, -0.55], [0.55, 0.55, 0.55]).unwrap(),
            0.1,
        )
        .unwrap()
    }

    fn long_grid() -> Grid {
        build_grid(
            BoxDomain::new([-3.4, -0.8, -0.8], [3.4, 0.8, 0.8]).unwrap(),
            BoxDomain::new([-3.2, -0.6, -0.6], [3.2, 0.6, 0.6]).unwrap(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn gaussian1_peak_at_origin() {
        let g = centered_grid();
        let c = phantom(&PhantomKind::Gaussian1, &g, 10.0).unwrap();
        let center = g.cell_index([7, 7, 7]);
        assert_eq!(g.cell_center([7, 7, 7]), [0.0, 0.0, 0.0]);
        assert!((c.values()[center] - 6.0).abs() < 1e-9);
        assert!((c.max_value() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_one_is_all_ones() {
        let g = centered_grid();
        let c = phantom(&PhantomKind::Uniform(1.0), &g, 5.0).unwrap();
        assert!(c.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn gaussian3_matches_direct_evaluation() {
        let g = long_grid();
        let c = phantom(&PhantomKind::Gaussian3, &g, 10.0).unwrap();
        // Independent oracle: direct evaluation of the three-spike formula.
        let oracle = |x: [f64; 3]| -> f64 {
            1.0 + 5.0 * (-((x[0] + 2.0).powi(2) + x[1].powi(2) + x[2].powi(2)) / 0.2).exp()
                + 5.0 * (-(x[0].powi(2) + x[1].powi(2) + x[2].powi(2)) / 0.2).exp()
                + 5.0 * (-((x[0] - 2.0).powi(2) + x[1].powi(2) + x[2].powi(2)) / 0.2).exp()
        };
        for idx in 0..g.cell_count() {
            let ci = g.cell_ijk(idx);
            if g.is_inner_cell(ci) {
                let x = g.cell_center(ci);
                assert!((c.values()[idx] - oracle(x)).abs() < 1e-12);
            } else {
                assert_eq!(c.values()[idx], 1.0);
            }
        }
        // Cells closest to the spike centers reach nearly the peak value.
        let near_spike = g.cell_ijk(
            (0..g.cell_count())
                .max_by(|&a, &b| {
                    c.values()[a]
                        .partial_cmp(&c.values()[b])
                        .unwrap()
                })
                .unwrap(),
        );
        let x = g.cell_center(near_spike);
        assert!(x[0].abs() < 0.1 || (x[0].abs() - 2.0).abs() < 0.1);
    }

    #[test]
    fn ball_phantom_clamps_and_validates() {
        let g = long_grid();
        let balls = vec![Ball {
            center: [0.0, 0.0, 0.0],
            radius: 0.3,
            value: 4.0,
        }];
        let c = phantom(&PhantomKind::Balls(balls), &g, 5.0).unwrap();
        assert!((c.max_value() - 4.0).abs() < 1e-12);
        for idx in 0..g.cell_count() {
            if !g.is_inner_cell(g.cell_ijk(idx)) {
                assert_eq!(c.values()[idx], 1.0);
            }
        }
        let outside = vec![Ball {
            center: [0.0, 0.0, -0.7],
            radius: 0.1,
            value: 4.0,
        }];
        assert!(matches!(
            phantom(&PhantomKind::Balls(outside), &g, 5.0),
            Err(WaveError::ValueOutOfBounds(_))
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = BoundaryTrace::from_values(3, 2, 0.1, vec![1.0, -2.0, 3.5, 0.0, 7.0, -0.25]).unwrap();
        let out = add_noise(&t, &NoiseSpec { sigma: 0.0, seed: 7 });
        assert_eq!(t, out);
    }

    #[test]
    fn noise_respects_multiplicative_bound() {
        let t = BoundaryTrace::from_values(100, 10, 0.1, vec![1.0; 1000]).unwrap();
        let out = add_noise(&t, &NoiseSpec { sigma: 3.0, seed: 1 });
        for v in out.values() {
            assert!(*v >= 0.97 && *v <= 1.03);
        }
    }

    #[test]
    fn noise_is_deterministic() {
        let t = BoundaryTrace::from_values(50, 20, 0.1, (0..1000).map(|i| i as f64).collect())
            .unwrap();
        let spec = NoiseSpec { sigma: 5.0, seed: 42 };
        assert_eq!(add_noise(&t, &spec), add_noise(&t, &spec));
    }

    #[test]
    fn noise_rms_and_mean_statistics() {
        let n = 40_000usize;
        let t = BoundaryTrace::from_values(200, 200, 0.1, vec![1.0; n]).unwrap();
        let out = add_noise(&t, &NoiseSpec { sigma: 10.0, seed: 3 });
        let rel: Vec<f64> = out.values().iter().map(|v| v - 1.0).collect();
        let mean = rel.iter().sum::<f64>() / n as f64;
        let rms = (rel.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
        // Var of uniform(-1,1) is 1/3, so RMS = 0.1/sqrt(3).
        let expected = 0.10 / 3f64.sqrt();
        assert!((rms - expected).abs() < 0.1 * expected, "rms {rms}");
        // Unbiasedness within 3 standard errors.
        let se = expected / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn literal_mode_is_pure_scale() {
        let t = BoundaryTrace::from_values(2, 2, 0.1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = scale_literal(&t, 3.0);
        for (a, b) in t.values().iter().zip(out.values()) {
            assert!((b - a * 1.03).abs() < 1e-15);
        }
    }

    fn coarse_fine_pair() -> (Grid, Grid) {
        let dom = BoxDomain::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let inner = BoxDomain::new([0.2, 0.2, 0.2], [0.8, 0.8, 0.8]).unwrap();
        (
            build_grid(dom, inner, 0.1).unwrap(),
            build_grid(dom, inner, 0.05).unwrap(),
        )
    }

    #[test]
    fn restrict_constant_trace() {
        let (coarse, fine) = coarse_fine_pair();
        let nf = fine.n[0] * fine.n[1];
        let fine_trace = BoundaryTrace::from_values(nf, 5, 0.003, vec![1.0; nf * 5]).unwrap();
        let out = restrict_to_coarse(&fine_trace, &fine, &coarse, 0.006).unwrap();
        assert_eq!(out.n_face, coarse.n[0] * coarse.n[1]);
        assert_eq!(out.n_levels, 3);
        assert!(out.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn restrict_picks_every_second_sample() {
        let (coarse, fine) = coarse_fine_pair();
        let nf = fine.n[0] * fine.n[1];
        let mut fine_trace = BoundaryTrace::zeros(nf, 5, 0.003);
        for k in 0..5 {
            for i2 in 0..fine.n[1] {
                for i1 in 0..fine.n[0] {
                    fine_trace.set(k, i1 + fine.n[0] * i2, (1000 * k + 50 * i2 + i1) as f64);
                }
            }
        }
        let out = restrict_to_coarse(&fine_trace, &fine, &coarse, 0.006).unwrap();
        for k in 0..3 {
            for i2 in 0..coarse.n[1] {
                for i1 in 0..coarse.n[0] {
                    let expect = (1000 * 2 * k + 50 * 2 * i2 + 2 * i1) as f64;
                    assert_eq!(out.at(k, i1 + coarse.n[0] * i2), expect);
                }
            }
        }
    }

    #[test]
    fn restrict_rejects_misaligned_grids() {
        let (coarse, _) = coarse_fine_pair();
        let bad_fine = build_grid(
            BoxDomain::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap(),
            BoxDomain::new([0.2, 0.2, 0.2], [0.8, 0.8, 0.8]).unwrap(),
            0.1,
        )
        .unwrap();
        let nf = bad_fine.n[0] * bad_fine.n[1];
        let tr = BoundaryTrace::zeros(nf, 3, 0.003);
        assert!(matches!(
            restrict_to_coarse(&tr, &bad_fine, &coarse, 0.006),
            Err(WaveError::GridMismatch(_))
        ));
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = BoundaryTrace::from_values(
            7,
            3,
            0.006,
            (0..21).map(|i| (i as f64).sin() * 1e-3).collect(),
        )
        .unwrap();
        save_trace(&t, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), t);
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let g = centered_grid();
        let c = phantom(&PhantomKind::Gaussian1, &g, 10.0).unwrap();
        save_field_raw(&c, &path).unwrap();
        assert_eq!(load_field_raw(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        std::fs::write(&path, b"WVTR1\x01\x00").unwrap();
        assert!(matches!(
            load_trace(&path),
            Err(WaveError::CorruptHeader(_))
        ));
        std::fs::write(&path, b"NOPE!").unwrap();
        assert!(matches!(
            load_trace(&path),
            Err(WaveError::CorruptHeader(_))
        ));
    }

    #[test]
    fn vtk_output_of_uniform_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vtk");
        let g = centered_grid();
        let c = phantom(&PhantomKind::Uniform(1.0), &g, 5.0).unwrap();
        save_field_vtk(&c, &g, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("DIMENSIONS 16 16 16"));
        assert!(text.contains(&format!("CELL_DATA {}", 15 * 15 * 15)));
        let scalars: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("LOOKUP_TABLE"))
            .skip(1)
            .collect();
        assert_eq!(scalars.len(), 15 * 15 * 15);
        assert!(scalars.iter().all(|s| *s == "1"));
    }

    proptest! {
        #[test]
        fn trace_round_trip_prop(values in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.bin");
            let t = BoundaryTrace::from_values(4, 3, 0.01, values).unwrap();
            save_trace(&t, &path).unwrap();
            prop_assert_eq!(load_trace(&path).unwrap(), t);
        }

        #[test]
        fn phantom_respects_bounds(r in 0.1f64..0.5, v in 1.0f64..5.0) {
            let g = long_grid();
            let balls = vec![Ball { center: [0.0, 0.0, 0.0], radius: r, value: v }];
            let c = phantom(&PhantomKind::Balls(balls), &g, 5.0).unwrap();
            prop_assert!(c.max_value() <= 5.0);
            prop_assert!(c.min_value() >= 1.0);
            for idx in 0..g.cell_count() {
                if !g.is_inner_cell(g.cell_ijk(idx)) {
                    prop_assert_eq!(c.values()[idx], 1.0);
                }
            }
        }
    }
}
