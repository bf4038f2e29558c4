//! Staggered Yee storage for E, H and M.
//!
//! Every component array is sized `(n + 1)` along each active axis and `1`
//! along a collapsed axis (`n == 1`), so a 1D cavity is just a `1 x 1 x nz`
//! grid. Locations, in cell units:
//!
//! | component | position            |
//! |-----------|---------------------|
//! | `Ex(i,j,k)` | `(i+1/2, j, k)`   |
//! | `Ey(i,j,k)` | `(i, j+1/2, k)`   |
//! | `Ez(i,j,k)` | `(i, j, k+1/2)`   |
//! | `Hx(i,j,k)` | `(i, j+1/2, k+1/2)` |
//! | `Hy(i,j,k)` | `(i+1/2, j, k+1/2)` |
//! | `Hz(i,j,k)` | `(i+1/2, j+1/2, k)` |
//!
//! Along a collapsed axis the half offsets vanish. `M` is stored per cell and
//! shares its index with the three `H` components of that cell, so the LLG
//! cross products need no interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::units::{MaterialCell, MaterialError};
use crate::vec3::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one cell per axis, got {0:?}")]
    EmptyAxis([usize; 3]),
    #[error("cell size along axis {axis} must be positive, got {value}")]
    BadCellSize { axis: usize, value: f64 },
    #[error("material map is {got:?} but grid is {want:?}")]
    DimensionMismatch { got: [usize; 3], want: [usize; 3] },
    #[error("{component:?} index ({i}, {j}, {k}) outside {extent:?}")]
    OutOfRange {
        component: Component,
        i: usize,
        j: usize,
        k: usize,
        extent: [usize; 3],
    },
    #[error("magnetic cell ({0}, {1}, {2}) has no bias direction to align M with")]
    MissingBias(usize, usize, usize),
    #[error("material at cell ({i}, {j}, {k}): {source}")]
    Material {
        i: usize,
        j: usize,
        k: usize,
        source: MaterialError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: T,
    pub dy: T,
    pub dz: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(n: [usize; 3], d: [T; 3]) -> Result<Self, GridError> {
        let s = Self {
            nx: n[0],
            ny: n[1],
            nz: n[2],
            dx: d[0],
            dy: d[1],
            dz: d[2],
        };
        s.validate()?;
        Ok(s)
    }

    /// `1 x 1 x nz` line along z.
    pub fn line_z(nz: usize, dz: T) -> Result<Self, GridError> {
        Self::new([1, 1, nz], [dz, dz, dz])
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.cells();
        if n.contains(&0) {
            return Err(GridError::EmptyAxis(n));
        }
        for (axis, d) in self.sizes().into_iter().enumerate() {
            if !(d > T::zero()) {
                return Err(GridError::BadCellSize {
                    axis,
                    value: d.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn sizes(&self) -> [T; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Whether derivatives along `axis` are taken (the axis is not collapsed).
    pub fn active(&self, axis: usize) -> bool {
        self.cells()[axis] > 1
    }

    /// Per-axis extent of every field component array.
    pub fn node_dims(&self) -> [usize; 3] {
        self.cells().map(|n| if n > 1 { n + 1 } else { 1 })
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.node_dims();
        i + d[0] * (j + d[1] * k)
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Index range, per axis, on which a component carries a meaningful value.
    ///
    /// A field component along `a` sits at half offsets across `a` for E
    /// (cell range) and across the two other axes for H.
    pub fn extent(&self, c: Component) -> [usize; 3] {
        let n = self.cells();
        let nodes = self.node_dims();
        match c.kind() {
            FieldKind::E(a) => {
                let mut e = nodes;
                e[a] = n[a];
                e
            }
            FieldKind::H(a) => {
                let mut e = n;
                e[a] = nodes[a];
                e
            }
            FieldKind::M(_) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Ex,
    Ey,
    Ez,
    Hx,
    Hy,
    Hz,
    Mx,
    My,
    Mz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    E(usize),
    H(usize),
    M(usize),
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Ex,
        Component::Ey,
        Component::Ez,
        Component::Hx,
        Component::Hy,
        Component::Hz,
        Component::Mx,
        Component::My,
        Component::Mz,
    ];

    pub fn kind(self) -> FieldKind {
        use Component::*;
        match self {
            Ex => FieldKind::E(0),
            Ey => FieldKind::E(1),
            Ez => FieldKind::E(2),
            Hx => FieldKind::H(0),
            Hy => FieldKind::H(1),
            Hz => FieldKind::H(2),
            Mx => FieldKind::M(0),
            My => FieldKind::M(1),
            Mz => FieldKind::M(2),
        }
    }

    pub fn name(self) -> &'static str {
        use Component::*;
        match self {
            Ex => "Ex",
            Ey => "Ey",
            Ez => "Ez",
            Hx => "Hx",
            Hy => "Hy",
            Hz => "Hz",
            Mx => "Mx",
            My => "My",
            Mz => "Mz",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

/// Per-cell materials, x-fastest order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialMap<T> {
    pub dims: [usize; 3],
    pub cells: Vec<MaterialCell<T>>,
}

impl<T: Real> MaterialMap<T> {
    pub fn uniform(dims: [usize; 3], cell: MaterialCell<T>) -> Self {
        Self {
            dims,
            cells: vec![cell; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &MaterialCell<T> {
        &self.cells[self.index(i, j, k)]
    }

    /// Fills the half-open box `lo..hi`, clamped to the map.
    pub fn fill_box(&mut self, lo: [usize; 3], hi: [usize; 3], cell: MaterialCell<T>) {
        let hi = [0, 1, 2].map(|a| hi[a].min(self.dims[a]));
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let at = self.index(i, j, k);
                    self.cells[at] = cell;
                }
            }
        }
    }

    /// Sets the same static bias in every cell.
    pub fn set_bias(&mut self, h: Vec3<T>) {
        for c in &mut self.cells {
            c.hbias = h;
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    self.get(i, j, k)
                        .validate()
                        .map_err(|source| GridError::Material { i, j, k, source })?;
                }
            }
        }
        Ok(())
    }
}

/// Complete discrete state of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldLattice<T> {
    pub spec: GridSpec<T>,
    pub materials: MaterialMap<T>,
    /// `E[axis]`, node-indexed.
    pub e: [Vec<T>; 3],
    /// `H[axis]`, node-indexed.
    pub h: [Vec<T>; 3],
    /// Cell-indexed; zero outside magnetic cells.
    pub m: Vec<Vec3<T>>,
    /// Cell indices `(i, j, k)` with `Ms > 0`, in storage order.
    pub magnetic: Vec<[usize; 3]>,
}

impl<T: Real> FieldLattice<T> {
    pub fn allocate(spec: GridSpec<T>, materials: MaterialMap<T>) -> Result<Self, GridError> {
        spec.validate()?;
        if materials.dims != spec.cells() || materials.cells.len() != spec.n_cells() {
            return Err(GridError::DimensionMismatch {
                got: materials.dims,
                want: spec.cells(),
            });
        }
        materials.validate()?;
        let nodes: usize = spec.node_dims().iter().product();
        let mut m = vec![Vec3::zeros(); spec.n_cells()];
        let mut magnetic = Vec::new();
        for k in 0..spec.nz {
            for j in 0..spec.ny {
                for i in 0..spec.nx {
                    let cell = materials.get(i, j, k);
                    if !cell.is_magnetic() {
                        continue;
                    }
                    if cell.hbias.norm_sq() == T::zero() {
                        return Err(GridError::MissingBias(i, j, k));
                    }
                    m[spec.cell_index(i, j, k)] = cell.hbias.with_norm(cell.ms);
                    magnetic.push([i, j, k]);
                }
            }
        }
        Ok(Self {
            spec,
            materials,
            e: [vec![T::zero(); nodes], vec![T::zero(); nodes], vec![T::zero(); nodes]],
            h: [vec![T::zero(); nodes], vec![T::zero(); nodes], vec![T::zero(); nodes]],
            m,
            magnetic,
        })
    }

    fn check(&self, c: Component, i: usize, j: usize, k: usize) -> Result<(), GridError> {
        let extent = self.spec.extent(c);
        if i >= extent[0] || j >= extent[1] || k >= extent[2] {
            return Err(GridError::OutOfRange {
                component: c,
                i,
                j,
                k,
                extent,
            });
        }
        Ok(())
    }

    /// Stored value of a component; no interpolation (see the module table
    /// for the staggered position).
    pub fn sample(&self, c: Component, i: usize, j: usize, k: usize) -> Result<T, GridError> {
        self.check(c, i, j, k)?;
        Ok(match c.kind() {
            FieldKind::E(a) => self.e[a][self.spec.node_index(i, j, k)],
            FieldKind::H(a) => self.h[a][self.spec.node_index(i, j, k)],
            FieldKind::M(a) => self.m[self.spec.cell_index(i, j, k)][a],
        })
    }

    pub fn set(&mut self, c: Component, i: usize, j: usize, k: usize, v: T) -> Result<(), GridError> {
        self.check(c, i, j, k)?;
        match c.kind() {
            FieldKind::E(a) => {
                let at = self.spec.node_index(i, j, k);
                self.e[a][at] = v;
            }
            FieldKind::H(a) => {
                let at = self.spec.node_index(i, j, k);
                self.h[a][at] = v;
            }
            FieldKind::M(a) => {
                let at = self.spec.cell_index(i, j, k);
                self.m[at][a] = v;
            }
        }
        Ok(())
    }

    /// H of cell `(i, j, k)` as a vector (the three faces sharing its index).
    #[inline]
    pub fn h_cell(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let at = self.spec.node_index(i, j, k);
        Vec3::new(self.h[0][at], self.h[1][at], self.h[2][at])
    }

    #[inline]
    pub fn set_h_cell(&mut self, i: usize, j: usize, k: usize, v: Vec3<T>) {
        let at = self.spec.node_index(i, j, k);
        self.h[0][at] = v.x;
        self.h[1][at] = v.y;
        self.h[2][at] = v.z;
    }

    /// Largest `| |M| - Ms | / Ms` over the magnetic cells.
    pub fn max_norm_error(&self) -> T {
        let mut worst = T::zero();
        for &[i, j, k] in &self.magnetic {
            let ms = self.materials.get(i, j, k).ms;
            let err = (self.m[self.spec.cell_index(i, j, k)].norm() - ms).abs() / ms;
            if err > worst {
                worst = err;
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vacuum(n: [usize; 3]) -> FieldLattice<f64> {
        let spec = GridSpec::new(n, [1e-6; 3]).unwrap();
        FieldLattice::allocate(spec, MaterialMap::uniform(n, MaterialCell::vacuum())).unwrap()
    }

    #[test]
    fn single_cell_vacuum_is_zero() {
        let l = vacuum([1, 1, 1]);
        for c in Component::ALL {
            assert_eq!(l.sample(c, 0, 0, 0).unwrap(), 0.0);
        }
        assert!(l.magnetic.is_empty());
    }

    #[test]
    fn slab_initialised_along_bias() {
        let n = [1, 1, 10];
        let spec = GridSpec::new(n, [1e-6; 3]).unwrap();
        let mut mat = MaterialMap::uniform(n, MaterialCell::vacuum());
        mat.fill_box([0, 0, 4], [1, 1, 6], MaterialCell::magnet(9.7e5, 0.003, 1.0, 0.0));
        mat.set_bias(Vec3::new(1.5e5, 0.0, 0.0));
        let l = FieldLattice::allocate(spec, mat).unwrap();
        assert_eq!(l.magnetic, vec![[0, 0, 4], [0, 0, 5]]);
        assert_eq!(l.sample(Component::Mx, 0, 0, 4).unwrap(), 9.7e5);
        assert_eq!(l.sample(Component::My, 0, 0, 5).unwrap(), 0.0);
        assert_eq!(l.sample(Component::Mx, 0, 0, 3).unwrap(), 0.0);
    }

    #[test]
    fn strides_follow_node_dims() {
        let spec = GridSpec::new([4, 3, 2], [5e-6, 19e-6, 1e-6]).unwrap();
        assert_eq!(spec.node_dims(), [5, 4, 3]);
        assert_eq!(spec.node_index(1, 0, 0), 1);
        assert_eq!(spec.node_index(0, 1, 0), 5);
        assert_eq!(spec.node_index(0, 0, 1), 20);
        assert_eq!(spec.cell_index(0, 0, 1), 12);
        let line = GridSpec::line_z(7, 1e-6_f64).unwrap();
        assert_eq!(line.node_dims(), [1, 1, 8]);
        assert_eq!(line.extent(Component::Ex), [1, 1, 8]);
        assert_eq!(line.extent(Component::Hy), [1, 1, 7]);
        assert_eq!(line.extent(Component::Ez), [1, 1, 7]);
    }

    #[test]
    fn out_of_range_and_mismatch() {
        let l = vacuum([2, 2, 2]);
        assert!(l.sample(Component::Ex, 2, 0, 0).is_err());
        assert!(l.sample(Component::Ey, 2, 0, 0).is_ok());
        let spec = GridSpec::new([2, 2, 2], [1.0; 3]).unwrap();
        let bad = MaterialMap::uniform([2, 2, 3], MaterialCell::vacuum());
        assert!(matches!(
            FieldLattice::allocate(spec, bad),
            Err(GridError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn magnet_without_bias_is_rejected() {
        let spec = GridSpec::new([1, 1, 2], [1.0; 3]).unwrap();
        let mat = MaterialMap::uniform([1, 1, 2], MaterialCell::magnet(1.0, 0.0, 1.0, 0.0));
        assert!(matches!(
            FieldLattice::allocate(spec, mat),
            Err(GridError::MissingBias(0, 0, 0))
        ));
    }

    #[test]
    fn write_then_sample_round_trip() {
        let mut l = vacuum([3, 2, 4]);
        let v = 0.1f64 + 0.2;
        for c in Component::ALL {
            let e = l.spec.extent(c);
            l.set(c, e[0] - 1, e[1] - 1, e[2] - 1, v).unwrap();
            assert_eq!(l.sample(c, e[0] - 1, e[1] - 1, e[2] - 1).unwrap().to_bits(), v.to_bits());
        }
    }
}
