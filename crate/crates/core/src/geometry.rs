//! Structured computational lattice with inner/outer domain decomposition
//! and classification of boundary faces.
//!
//! The domain is a box; the inner sub-box holds the unknown coefficient and
//! is separated from the domain boundary by at least two layers of structured
//! nodes where the coefficient is pinned to 1. Boundary nodes are tagged
//! front (backscattering face, minimal x3), back (maximal x3) or lateral.

use crate::error::{Result, WaveError};

const REL_TOL: f64 = 1e-9;

/// Number of node layers required between the inner box and the domain boundary.
pub const MIN_MARGIN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl BoxDomain {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            if !(lo[k] < hi[k]) {
                return Err(WaveError::InvalidParameter(format!(
                    "box lo[{k}] = {} must be < hi[{k}] = {}",
                    lo[k], hi[k]
                )));
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inner,
    Overlap,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    /// ∂1: the backscattering face, minimal x3.
    Front,
    /// ∂2: maximal x3.
    Back,
    /// ∂3: the four lateral sides.
    Lateral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: BoxDomain,
    pub inner: BoxDomain,
    pub h: f64,
    /// Node counts per axis.
    pub n: [usize; 3],
    /// Inclusive node-index bounds of the inner box.
    inner_lo: [usize; 3],
    inner_hi: [usize; 3],
    regions: Vec<Region>,
    tags: Vec<Option<FaceTag>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSet {
    pub tag: FaceTag,
    /// Node indices in grid ordering (x1 fastest).
    pub nodes: Vec<usize>,
    /// Outward unit normal per node.
    pub normals: Vec<[f64; 3]>,
}

impl FaceSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn lattice_count(extent: f64, h: f64, what: &str) -> Result<usize> {
    let r = extent / h;
    let n = r.round();
    if (r - n).abs() > REL_TOL * r.abs().max(1.0) {
        return Err(WaveError::IncommensurateExtent(format!(
            "{what} extent {extent} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

/// Builds the structured grid for `domain` with inner sub-box `inner` and
/// uniform spacing `h` on all axes. Node ordering is deterministic: x1
/// fastest, x3 slowest.
pub fn build_grid(domain: BoxDomain, inner: BoxDomain, h: f64) -> Result<Grid> {
    grid_impl(domain, inner, h, true)
}

impl Grid {
    /// Grid construction without the margin check, for degenerate lattices
    /// used in diagnostics and tests.
    pub fn unchecked(domain: BoxDomain, inner: BoxDomain, h: f64) -> Result<Grid> {
        grid_impl(domain, inner, h, false)
    }
}

fn grid_impl(domain: BoxDomain, inner: BoxDomain, h: f64, check_margin: bool) -> Result<Grid> {
    if !(h > 0.0) {
        return Err(WaveError::InvalidParameter(format!("h = {h} must be > 0")));
    }
    let mut n = [0usize; 3];
    for k in 0..3 {
        n[k] = lattice_count(domain.extent(k), h, "domain")? + 1;
        lattice_count(inner.extent(k), h, "inner")?;
    }
    if check_margin {
        for k in 0..3 {
            let lo_margin = inner.lo[k] - domain.lo[k];
            let hi_margin = domain.hi[k] - inner.hi[k];
            let min = MIN_MARGIN_LAYERS as f64 * h;
            if lo_margin < min - REL_TOL * min || hi_margin < min - REL_TOL * min {
                return Err(WaveError::MarginTooSmall(format!(
                    "axis {k}: margins ({lo_margin}, {hi_margin}) are below {MIN_MARGIN_LAYERS} node layers ({min})"
                )));
            }
        }
    }
    let mut inner_lo = [0usize; 3];
    let mut inner_hi = [0usize; 3];
    for k in 0..3 {
        inner_lo[k] = lattice_count(inner.lo[k] - domain.lo[k], h, "inner offset")?;
        inner_hi[k] = inner_lo[k] + lattice_count(inner.extent(k), h, "inner")?;
        if inner_hi[k] >= n[k] {
            return Err(WaveError::MarginTooSmall(format!(
                "axis {k}: inner box reaches outside the domain"
            )));
        }
    }

    let total = n[0] * n[1] * n[2];
    let mut regions = Vec::with_capacity(total);
    let mut tags = Vec::with_capacity(total);
    for i3 in 0..n[2] {
        for i2 in 0..n[1] {
            for i1 in 0..n[0] {
                let i = [i1, i2, i3];
                // Max-norm lattice distance to the inner index box.
                let mut dist = 0usize;
                for k in 0..3 {
                    let d = if i[k] < inner_lo[k] {
                        inner_lo[k] - i[k]
                    } else if i[k] > inner_hi[k] {
                        i[k] - inner_hi[k]
                    } else {
                        0
                    };
                    dist = dist.max(d);
                }
                regions.push(match dist {
                    0 => Region::Inner,
                    1 | 2 => Region::Overlap,
                    _ => Region::Outer,
                });
                // Face priority: front > back > lateral, so the source and
                // observation faces are complete rectangles.
                let tag = if i3 == 0 {
                    Some(FaceTag::Front)
                } else if i3 == n[2] - 1 {
                    Some(FaceTag::Back)
                } else if i1 == 0 || i1 == n[0] - 1 || i2 == 0 || i2 == n[1] - 1 {
                    Some(FaceTag::Lateral)
                } else {
                    None
                };
                tags.push(tag);
            }
        }
    }

    Ok(Grid {
        domain,
        inner,
        h,
        n,
        inner_lo,
        inner_hi,
        regions,
        tags,
    })
}

impl Grid {
    #[inline]
    pub fn node_index(&self, i: [usize; 3]) -> usize {
        i[0] + self.n[0] * (i[1] + self.n[1] * i[2])
    }

    #[inline]
    pub fn node_ijk(&self, idx: usize) -> [usize; 3] {
        let i1 = idx % self.n[0];
        let r = idx / self.n[0];
        [i1, r % self.n[1], r / self.n[1]]
    }

    pub fn node_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn node_coord(&self, i: [usize; 3]) -> [f64; 3] {
        [
            self.domain.lo[0] + self.h * i[0] as f64,
            self.domain.lo[1] + self.h * i[1] as f64,
            self.domain.lo[2] + self.h * i[2] as f64,
        ]
    }

    /// Cell (voxel) counts per axis.
    pub fn cells(&self) -> [usize; 3] {
        [self.n[0] - 1, self.n[1] - 1, self.n[2] - 1]
    }

    pub fn cell_count(&self) -> usize {
        let c = self.cells();
        c[0] * c[1] * c[2]
    }

    #[inline]
    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        let nc = self.cells();
        c[0] + nc[0] * (c[1] + nc[1] * c[2])
    }

    #[inline]
    pub fn cell_ijk(&self, idx: usize) -> [usize; 3] {
        let nc = self.cells();
        let c1 = idx % nc[0];
        let r = idx / nc[0];
        [c1, r % nc[1], r / nc[1]]
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        [
            self.domain.lo[0] + self.h * (c[0] as f64 + 0.5),
            self.domain.lo[1] + self.h * (c[1] as f64 + 0.5),
            self.domain.lo[2] + self.h * (c[2] as f64 + 0.5),
        ]
    }

    /// A cell is inner when all 8 of its corner nodes are inner.
    pub fn is_inner_cell(&self, c: [usize; 3]) -> bool {
        (0..3).all(|k| c[k] >= self.inner_lo[k] && c[k] + 1 <= self.inner_hi[k])
    }

    pub fn region(&self, idx: usize) -> Region {
        self.regions[idx]
    }

    pub fn face_tag(&self, idx: usize) -> Option<FaceTag> {
        self.tags[idx]
    }

    pub fn is_boundary_node(&self, i: [usize; 3]) -> bool {
        (0..3).any(|k| i[k] == 0 || i[k] == self.n[k] - 1)
    }

    /// Lumped node mass: h³ with one halving per axis on which the node
    /// sits on the domain boundary.
    pub fn node_mass(&self, i: [usize; 3]) -> f64 {
        let mut m = self.h * self.h * self.h;
        for k in 0..3 {
            if i[k] == 0 || i[k] == self.n[k] - 1 {
                m *= 0.5;
            }
        }
        m
    }
}

/// All nodes carrying `tag`, in grid node order, with outward normals.
pub fn faces(grid: &Grid, tag: FaceTag) -> FaceSet {
    let mut nodes = Vec::new();
    let mut normals = Vec::new();
    for idx in 0..grid.node_count() {
        if grid.tags[idx] != Some(tag) {
            continue;
        }
        let [i1, i2, _] = grid.node_ijk(idx);
        let normal = match tag {
            FaceTag::Front => [0.0, 0.0, -1.0],
            FaceTag::Back => [0.0, 0.0, 1.0],
            FaceTag::Lateral => {
                if i1 == 0 {
                    [-1.0, 0.0, 0.0]
                } else if i1 == grid.n[0] - 1 {
                    [1.0, 0.0, 0.0]
                } else if i2 == 0 {
                    [0.0, -1.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                }
            }
        };
        nodes.push(idx);
        normals.push(normal);
    }
    FaceSet { tag, nodes, normals }
}
