//! Explicit leap-frog Maxwell updates on the Yee lattice.
//!
//! E lives at integer steps, H (and M) at half steps. Wall handling:
//!
//! * `Pec`: tangential E on the wall is held at zero.
//! * `Pmc`: tangential H vanishes on the wall; the E update at a wall node uses
//!   an odd image of the first interior H sample.
//! * `Mur1`: first-order outgoing-wave extrapolation of tangential E.
//!
//! Collapsed axes (one cell) have no walls and no derivatives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Component, FieldKind, FieldLattice, GridSpec};
use crate::scalar::{lit, Real};
use crate::units::PhysicalConstants;
use crate::vec3::Vec3;

/// Threshold (cells) above which sweeps are split across threads.
const PAR_CELLS: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("CFL factor must lie in (0, 1], got {0}")]
    BadCflFactor(f64),
    #[error("unknown boundary condition `{0}` (expected pec, pmc or mur1)")]
    UnknownBoundary(String),
    #[error("source parameter `{0}` must be positive")]
    BadSource(&'static str),
    #[error("source location {0:?} outside grid {1:?}")]
    SourceOutside([usize; 3], [usize; 3]),
}

/// `Δt = factor / (c0 sqrt(Σ 1/d²))` over the active axes.
pub fn cfl_timestep<T: Real>(spec: &GridSpec<T>, factor: T) -> Result<T, EmError> {
    if !(factor > T::zero() && factor <= T::one()) {
        return Err(EmError::BadCflFactor(factor.to_f64_lossy()));
    }
    let c0 = PhysicalConstants::<T>::default().c0;
    let mut s = T::zero();
    let d = spec.sizes();
    let mut any = false;
    for a in 0..3 {
        if spec.active(a) {
            s += T::one() / (d[a] * d[a]);
            any = true;
        }
    }
    if !any {
        // A single cell has no propagation; fall back to all three sizes.
        s = d.iter().fold(T::zero(), |acc, &x| acc + T::one() / (x * x));
    }
    Ok(factor / (c0 * s.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ModifiedGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec<T> {
    pub kind: SourceKind,
    /// Hz
    pub f0: T,
    /// s
    pub tp: T,
    /// V/m
    pub amplitude: T,
    /// Cell whose E nodes receive the drive.
    pub location: [usize; 3],
    pub polarization: Vec3<T>,
}

impl<T: Real> SourceSpec<T> {
    pub fn validate(&self, spec: &GridSpec<T>) -> Result<(), EmError> {
        if !(self.f0 > T::zero()) {
            return Err(EmError::BadSource("f0"));
        }
        if !(self.tp > T::zero()) {
            return Err(EmError::BadSource("tp"));
        }
        let n = spec.cells();
        if (0..3).any(|a| self.location[a] >= n[a]) {
            return Err(EmError::SourceOutside(self.location, n));
        }
        Ok(())
    }

    /// `amplitude · exp(-(t - 3Tp)² / 2Tp²) · cos(2π f0 t)`.
    pub fn value(&self, t: T) -> T {
        match self.kind {
            SourceKind::ModifiedGaussian => {
                let u = (t - lit::<T>(3.0) * self.tp) / self.tp;
                if u.abs() > lit(40.0) {
                    // envelope below 1e-347
                    return T::zero();
                }
                self.amplitude * (-(u * u) * lit(0.5)).exp() * (T::two_pi() * self.f0 * t).cos()
            }
        }
    }
}

pub fn source_value<T: Real>(src: &SourceSpec<T>, t: T) -> T {
    src.value(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Pec,
    Pmc,
    Mur1,
}

impl std::str::FromStr for Boundary {
    type Err = EmError;

    fn from_str(s: &str) -> Result<Self, EmError> {
        match s.to_ascii_lowercase().as_str() {
            "pec" => Ok(Boundary::Pec),
            "pmc" => Ok(Boundary::Pmc),
            "mur1" | "mur" => Ok(Boundary::Mur1),
            _ => Err(EmError::UnknownBoundary(s.to_string())),
        }
    }
}

/// `faces[axis][0]` is the low wall, `faces[axis][1]` the high wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub faces: [[Boundary; 2]; 3],
}

impl BoundarySpec {
    pub fn uniform(b: Boundary) -> Self {
        Self { faces: [[b; 2]; 3] }
    }
}

#[derive(Clone, Copy, Debug)]
enum Wall {
    Interior,
    Low(Boundary),
    High(Boundary),
}

/// In-place Mur bookkeeping for one wall node.
#[derive(Clone, Debug)]
struct MurNode<T> {
    comp: usize,
    at: usize,
    inner: usize,
    k: T,
    old_at: T,
    old_inner: T,
}

/// Precomputed update coefficients for one time step size.
#[derive(Clone, Debug)]
pub struct EmOperator<T> {
    pub dt: T,
    pub consts: PhysicalConstants<T>,
    pub boundaries: BoundarySpec,
    /// `ca`, `cb` of `E' = ca E + cb (curl H)` per component, node-indexed.
    ca: [Vec<T>; 3],
    cb: [Vec<T>; 3],
    /// Node-indexed: the H sample belongs to a magnetic cell.
    magnetic_face: Vec<bool>,
    /// Node-indexed: E sample is held at zero (PEC wall).
    pec: [Vec<bool>; 3],
    mur: Vec<MurNode<T>>,
    /// Node-indexed inner-product weights (1/2 per wall coordinate).
    weight_e: [Vec<T>; 3],
    weight_h: [Vec<T>; 3],
    eps_node: [Vec<T>; 3],
    pub parallel: bool,
}

fn strides(spec: &GridSpec<impl Real>) -> [usize; 3] {
    let d = spec.node_dims();
    [1, d[0], d[0] * d[1]]
}

fn unindex(spec: &GridSpec<impl Real>, at: usize) -> [usize; 3] {
    let d = spec.node_dims();
    [at % d[0], (at / d[0]) % d[1], at / (d[0] * d[1])]
}

fn inside(ext: [usize; 3], p: [usize; 3]) -> bool {
    p[0] < ext[0] && p[1] < ext[1] && p[2] < ext[2]
}

impl<T: Real> EmOperator<T> {
    pub fn new(lattice: &FieldLattice<T>, dt: T, boundaries: BoundarySpec) -> Self {
        let spec = lattice.spec;
        let consts = PhysicalConstants::<T>::default();
        let nodes: usize = spec.node_dims().iter().product();
        let n = spec.cells();
        let st = strides(&spec);
        let wall_of = |a: usize, p: usize| -> Wall {
            if !spec.active(a) {
                Wall::Interior
            } else if p == 0 {
                Wall::Low(boundaries.faces[a][0])
            } else if p == n[a] {
                Wall::High(boundaries.faces[a][1])
            } else {
                Wall::Interior
            }
        };

        let mut ca: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); nodes]);
        let mut cb: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); nodes]);
        let mut eps_node: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); nodes]);
        let mut pec: [Vec<bool>; 3] = std::array::from_fn(|_| vec![false; nodes]);
        let mut weight_e: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); nodes]);
        let mut weight_h: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); nodes]);
        let mut mur = Vec::new();
        let half = lit::<T>(0.5);

        for a in 0..3 {
            let ext_e = spec.extent([Component::Ex, Component::Ey, Component::Ez][a]);
            let ext_h = spec.extent([Component::Hx, Component::Hy, Component::Hz][a]);
            for at in 0..nodes {
                let p = unindex(&spec, at);
                if inside(ext_h, p) {
                    let mut w = T::one();
                    if let Wall::Low(_) | Wall::High(_) = wall_of(a, p[a]) {
                        w *= half;
                    }
                    weight_h[a][at] = w;
                }
                if !inside(ext_e, p) {
                    continue;
                }
                // Average material over the cells touching this edge.
                let mut eps = T::zero();
                let mut sig = T::zero();
                let mut cnt = T::zero();
                let others: Vec<usize> = (0..3).filter(|&b| b != a && spec.active(b)).collect();
                let combos = 1usize << others.len();
                for mask in 0..combos {
                    let mut c = p;
                    let mut ok = true;
                    for (bit, &b) in others.iter().enumerate() {
                        if mask & (1 << bit) != 0 {
                            if c[b] == 0 {
                                ok = false;
                            } else {
                                c[b] -= 1;
                            }
                        } else if c[b] >= n[b] {
                            ok = false;
                        }
                    }
                    if c[a] >= n[a] {
                        ok = false;
                    }
                    for ax in 0..3 {
                        if !spec.active(ax) {
                            c[ax] = 0;
                        }
                    }
                    if ok {
                        let m = lattice.materials.get(c[0], c[1], c[2]);
                        eps += m.eps_r;
                        sig += m.sigma;
                        cnt += T::one();
                    }
                }
                let eps = consts.eps0 * eps / cnt;
                let sig = sig / cnt;
                let lhs = eps / dt + sig * half;
                ca[a][at] = (eps / dt - sig * half) / lhs;
                cb[a][at] = T::one() / lhs;
                eps_node[a][at] = eps;

                let mut w = T::one();
                let mut mur_axis = None;
                for &b in &others {
                    match wall_of(b, p[b]) {
                        Wall::Interior => {}
                        Wall::Low(bc) | Wall::High(bc) => {
                            w *= half;
                            match bc {
                                Boundary::Pec => pec[a][at] = true,
                                Boundary::Mur1 => {
                                    if mur_axis.is_none() {
                                        mur_axis = Some(b);
                                    }
                                }
                                Boundary::Pmc => {}
                            }
                        }
                    }
                }
                weight_e[a][at] = w;
                if let (Some(b), false) = (mur_axis, pec[a][at]) {
                    let inner = if p[b] == 0 { at + st[b] } else { at - st[b] };
                    let v = consts.c0 / (eps / consts.eps0).sqrt();
                    let h = spec.sizes()[b];
                    mur.push(MurNode {
                        comp: a,
                        at,
                        inner,
                        k: (v * dt - h) / (v * dt + h),
                        old_at: T::zero(),
                        old_inner: T::zero(),
                    });
                }
            }
        }

        let mut magnetic_face = vec![false; nodes];
        for &[i, j, k] in &lattice.magnetic {
            magnetic_face[spec.node_index(i, j, k)] = true;
        }

        Self {
            dt,
            consts,
            boundaries,
            ca,
            cb,
            magnetic_face,
            pec,
            mur,
            weight_e,
            weight_h,
            eps_node,
            parallel: spec.n_cells() >= PAR_CELLS,
        }
    }

    pub fn is_magnetic_face(&self, at: usize) -> bool {
        self.magnetic_face[at]
    }

    /// H ← H − (Δt/μ0)·curl E on every non-magnetic H sample.
    pub fn update_h_nonmagnetic(&self, lattice: &mut FieldLattice<T>) {
        let spec = lattice.spec;
        let sten = Stencil::new(&spec);
        if sten.line_z() {
            return self.update_h_line(lattice, &sten);
        }
        let scale = self.dt / self.consts.mu0;
        let e = &lattice.e;
        let slab = sten.st[2];
        for a in 0..3 {
            let ext = spec.extent([Component::Hx, Component::Hy, Component::Hz][a]);
            let mag = &self.magnetic_face;
            let kernel = |(k0, chunk): (usize, &mut [T])| {
                for kl in 0..chunk.len() / slab {
                    let kk = k0 + kl;
                    if kk >= ext[2] {
                        return;
                    }
                    for j in 0..ext[1] {
                        for i in 0..ext[0] {
                            let off = kl * slab + i + j * sten.st[1];
                            let at = kk * slab + i + j * sten.st[1];
                            if mag[at] {
                                continue;
                            }
                            chunk[off] -= scale * sten.curl_e(e, a, at);
                        }
                    }
                }
            };
            if self.parallel {
                lattice.h[a].par_chunks_mut(slab).enumerate().for_each(kernel);
            } else {
                kernel((0, &mut lattice.h[a][..]));
            }
        }
    }

    /// E^{n+1} = ca·E^n + cb·(curl H^{n+1/2} − J), then walls, then the soft
    /// drive `drive` (component, node index, value) is added.
    pub fn update_e(&mut self, lattice: &mut FieldLattice<T>, drive: &[(usize, usize, T)]) {
        let spec = lattice.spec;
        let sten = Stencil::new(&spec);
        for m in &mut self.mur {
            m.old_at = lattice.e[m.comp][m.at];
            m.old_inner = lattice.e[m.comp][m.inner];
        }
        if sten.line_z() {
            self.update_e_line(lattice, &sten);
        } else {
            self.update_e_grid(lattice, &sten);
        }
        for m in &self.mur {
            let inner_new = lattice.e[m.comp][m.inner];
            lattice.e[m.comp][m.at] = m.old_inner + m.k * (inner_new - m.old_at);
        }
        for &(a, at, v) in drive {
            lattice.e[a][at] += v;
        }
    }

    /// Same stencil as the general path, specialised to grids with only z active.
    fn update_h_line(&self, lattice: &mut FieldLattice<T>, sten: &Stencil<T>) {
        let scale = self.dt / self.consts.mu0 * sten.inv[2];
        let n = sten.n[2];
        let [ex, ey, _] = &lattice.e;
        let [hx, hy, _] = &mut lattice.h;
        let mag = &self.magnetic_face;
        for k in 0..n {
            if mag[k] {
                continue;
            }
            // (curl E)_x = −∂Ey/∂z, (curl E)_y = ∂Ex/∂z
            hx[k] += scale * (ey[k + 1] - ey[k]);
            hy[k] -= scale * (ex[k + 1] - ex[k]);
        }
    }

    fn update_e_line(&self, lattice: &mut FieldLattice<T>, sten: &Stencil<T>) {
        let n = sten.n[2];
        let inv = sten.inv[2];
        let two = lit::<T>(2.0);
        let [lo, hi] = self.boundaries.faces[2];
        let dhz = |h: &[T], k: usize| -> T {
            if k == 0 {
                if lo == Boundary::Pmc { two * h[0] * inv } else { T::zero() }
            } else if k == n {
                if hi == Boundary::Pmc { -two * h[n - 1] * inv } else { T::zero() }
            } else {
                (h[k] - h[k - 1]) * inv
            }
        };
        let [hx, hy, _] = &lattice.h;
        let [ex, ey, ez] = &mut lattice.e;
        // (curl H)_x = −∂Hy/∂z, (curl H)_y = ∂Hx/∂z, (curl H)_z = 0
        for k in 0..=n {
            if self.pec[0][k] {
                ex[k] = T::zero();
            } else {
                ex[k] = self.ca[0][k] * ex[k] + self.cb[0][k] * -dhz(hy, k);
            }
            if self.pec[1][k] {
                ey[k] = T::zero();
            } else {
                ey[k] = self.ca[1][k] * ey[k] + self.cb[1][k] * dhz(hx, k);
            }
        }
        for k in 0..n {
            ez[k] = if self.pec[2][k] { T::zero() } else { self.ca[2][k] * ez[k] };
        }
    }

    fn update_e_grid(&self, lattice: &mut FieldLattice<T>, sten: &Stencil<T>) {
        let spec = lattice.spec;
        let sten = *sten;
        let slab = sten.st[2];
        let h = &lattice.h;
        let bnd = self.boundaries;
        for a in 0..3 {
            let ext = spec.extent([Component::Ex, Component::Ey, Component::Ez][a]);
            let (ca, cb, pec) = (&self.ca[a], &self.cb[a], &self.pec[a]);
            let kernel = |(k0, chunk): (usize, &mut [T])| {
                for kl in 0..chunk.len() / slab {
                    let kk = k0 + kl;
                    if kk >= ext[2] {
                        return;
                    }
                    for j in 0..ext[1] {
                        for i in 0..ext[0] {
                            let at = kk * slab + i + j * sten.st[1];
                            let ev = &mut chunk[kl * slab + i + j * sten.st[1]];
                            if pec[at] {
                                *ev = T::zero();
                                continue;
                            }
                            *ev = ca[at] * *ev + cb[at] * sten.curl_h(&bnd, h, a, [i, j, kk], at);
                        }
                    }
                }
            };
            if self.parallel {
                lattice.e[a].par_chunks_mut(slab).enumerate().for_each(kernel);
            } else {
                kernel((0, &mut lattice.e[a][..]));
            }
        }
    }

    /// Re-imposes the PEC constraint (tangential E = 0 on PEC walls).
    pub fn apply_boundaries(&self, lattice: &mut FieldLattice<T>) {
        for a in 0..3 {
            for (ev, &z) in lattice.e[a].iter_mut().zip(&self.pec[a]) {
                if z {
                    *ev = T::zero();
                }
            }
        }
    }

    /// Electric energy `Σ ½ ε w E² V`.
    pub fn electric_energy(&self, lattice: &FieldLattice<T>) -> T {
        let v = cell_volume(&lattice.spec);
        let mut s = T::zero();
        for a in 0..3 {
            for ((e, w), eps) in lattice.e[a].iter().zip(&self.weight_e[a]).zip(&self.eps_node[a]) {
                s += *w * *eps * *e * *e;
            }
        }
        s * v * lit(0.5)
    }

    /// Magnetic energy `Σ ½ μ0 w H_a·H_b V`; pass the same array twice for
    /// `|H|²`, or two successive half steps for the leap-frog invariant.
    pub fn magnetic_energy(&self, spec: &GridSpec<T>, ha: &[Vec<T>; 3], hb: &[Vec<T>; 3]) -> T {
        let v = cell_volume(spec);
        let mut s = T::zero();
        for a in 0..3 {
            for ((x, y), w) in ha[a].iter().zip(&hb[a]).zip(&self.weight_h[a]) {
                s += *w * *x * *y;
            }
        }
        s * v * self.consts.mu0 * lit(0.5)
    }

    /// Soft-source injection list for `src` at time `t`.
    pub fn drive_terms(&self, spec: &GridSpec<T>, src: &SourceSpec<T>, t: T) -> Vec<(usize, usize, T)> {
        let s = src.value(t);
        let [i, j, k] = src.location;
        let at = spec.node_index(i, j, k);
        let pol = src.polarization.to_array();
        (0..3)
            .filter(|&a| pol[a] != T::zero())
            .map(|a| (a, at, s * pol[a]))
            .collect()
    }
}

pub fn cell_volume<T: Real>(spec: &GridSpec<T>) -> T {
    spec.dx * spec.dy * spec.dz
}

/// Strides, inverse spacings and active axes of a grid.
#[derive(Clone, Copy, Debug)]
struct Stencil<T> {
    st: [usize; 3],
    inv: [T; 3],
    active: [bool; 3],
    n: [usize; 3],
}

impl<T: Real> Stencil<T> {
    fn line_z(&self) -> bool {
        !self.active[0] && !self.active[1] && self.active[2]
    }

    fn new(spec: &GridSpec<T>) -> Self {
        let d = spec.sizes();
        Self {
            st: strides(spec),
            inv: [T::one() / d[0], T::one() / d[1], T::one() / d[2]],
            active: [spec.active(0), spec.active(1), spec.active(2)],
            n: spec.cells(),
        }
    }

    #[inline]
    fn curl_e(&self, e: &[Vec<T>; 3], a: usize, at: usize) -> T {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        let mut s = T::zero();
        if self.active[b] {
            s += (e[c][at + self.st[b]] - e[c][at]) * self.inv[b];
        }
        if self.active[c] {
            s -= (e[b][at + self.st[c]] - e[b][at]) * self.inv[c];
        }
        s
    }

    #[inline]
    fn dh(&self, bnd: &BoundarySpec, hc: &[T], b: usize, p: [usize; 3], at: usize) -> T {
        if !self.active[b] {
            return T::zero();
        }
        let st = self.st[b];
        if p[b] == 0 {
            match bnd.faces[b][0] {
                Boundary::Pmc => lit::<T>(2.0) * hc[at] * self.inv[b],
                _ => T::zero(),
            }
        } else if p[b] == self.n[b] {
            match bnd.faces[b][1] {
                Boundary::Pmc => -lit::<T>(2.0) * hc[at - st] * self.inv[b],
                _ => T::zero(),
            }
        } else {
            (hc[at] - hc[at - st]) * self.inv[b]
        }
    }

    #[inline]
    fn curl_h(&self, bnd: &BoundarySpec, h: &[Vec<T>; 3], a: usize, p: [usize; 3], at: usize) -> T {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        self.dh(bnd, &h[c], b, p, at) - self.dh(bnd, &h[b], c, p, at)
    }
}

/// `(curl E)_a` at the `H_a` sample with node index `at`.
pub fn curl_e_at<T: Real>(spec: &GridSpec<T>, e: &[Vec<T>; 3], a: usize, at: usize) -> T {
    Stencil::new(spec).curl_e(e, a, at)
}

/// Node index and component of the E sample named by `c` at `(i, j, k)`.
pub fn e_slot(spec: &GridSpec<impl Real>, c: Component, i: usize, j: usize, k: usize) -> Option<(usize, usize)> {
    match c.kind() {
        FieldKind::E(a) => Some((a, spec.node_index(i, j, k))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MaterialMap;
    use crate::units::{MaterialCell, C0};

    fn lattice(n: [usize; 3], d: [f64; 3], cell: MaterialCell<f64>) -> FieldLattice<f64> {
        let spec = GridSpec::new(n, d).unwrap();
        FieldLattice::allocate(spec, MaterialMap::uniform(n, cell)).unwrap()
    }

    #[test]
    fn cfl_examples() {
        let unit = GridSpec::new([4, 4, 4], [1.0; 3]).unwrap();
        let dt = cfl_timestep(&unit, 1.0).unwrap();
        assert!((dt - 1.0 / (C0 * 3f64.sqrt())).abs() / dt < 1e-14);

        let paper = GridSpec::new([4, 4, 4], [5e-6, 19e-6, 1e-6]).unwrap();
        let dt = cfl_timestep(&paper, 0.9).unwrap();
        assert!((dt / 2.94e-15 - 1.0_f64).abs() < 0.01, "{dt}");

        let line = GridSpec::line_z(10, 1e-6).unwrap();
        let dt = cfl_timestep(&line, 0.5).unwrap();
        assert!((dt - 1e-6 / (2.0 * C0)).abs() / dt < 1e-14);

        assert!(cfl_timestep(&line, 0.0).is_err());
        assert!(cfl_timestep(&line, 1.5).is_err());
    }

    fn pulse(amp: f64) -> SourceSpec<f64> {
        SourceSpec {
            kind: SourceKind::ModifiedGaussian,
            f0: 16e9,
            tp: 0.0625e-9,
            amplitude: amp,
            location: [0, 0, 0],
            polarization: Vec3::new(1.0, 0.0, 0.0),
        }
    }

    #[test]
    fn source_examples() {
        let s = pulse(2.0);
        assert!((s.value(3.0 * s.tp) - 2.0).abs() < 1e-12);
        assert!((s.value(0.0) - 2.0 * (-4.5f64).exp()).abs() < 1e-15);
        assert!(s.value(0.5e-9).abs() < 1e-5 * 2.0);
    }

    #[test]
    fn boundary_names() {
        assert_eq!("PMC".parse::<Boundary>().unwrap(), Boundary::Pmc);
        assert!("pml".parse::<Boundary>().is_err());
    }

    #[test]
    fn uniform_e_has_zero_curl() {
        let mut l = lattice([3, 3, 3], [1e-3; 3], MaterialCell::vacuum());
        for a in 0..3 {
            l.e[a].iter_mut().for_each(|v| *v = 1.5);
        }
        let op = EmOperator::new(&l, 1e-13, BoundarySpec::uniform(Boundary::Pmc));
        op.update_h_nonmagnetic(&mut l);
        assert!(l.h.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_edge_touches_four_faces() {
        let d = 1e-3;
        let mut l = lattice([3, 3, 3], [d; 3], MaterialCell::vacuum());
        // Ez at node (1,1) spanning z in (1, 2).
        let at = l.spec.node_index(1, 1, 1);
        l.e[2][at] = 1.0;
        let dt = 1e-13;
        let op = EmOperator::new(&l, dt, BoundarySpec::uniform(Boundary::Pmc));
        op.update_h_nonmagnetic(&mut l);
        let s = dt / crate::units::MU0 / d;
        let mut changed = vec![];
        for a in 0..3 {
            for (n, &v) in l.h[a].iter().enumerate() {
                if v != 0.0 {
                    changed.push((a, unindex(&l.spec, n), v / s));
                }
            }
        }
        // Hx = -dt/mu0 (dEz/dy): below the edge +, above -. Hy = +dt/mu0 dEz/dx.
        let mut expect = vec![
            (0, [1, 0, 1], -1.0),
            (0, [1, 1, 1], 1.0),
            (1, [0, 1, 1], 1.0),
            (1, [1, 1, 1], -1.0),
        ];
        changed.sort_by(|x, y| x.partial_cmp(y).unwrap());
        expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(changed.len(), 4);
        for (g, w) in changed.iter().zip(&expect) {
            assert_eq!((g.0, g.1), (w.0, w.1));
            assert!((g.2 - w.2).abs() < 1e-12, "{g:?} vs {w:?}");
        }
    }

    #[test]
    fn free_evolution_without_curl() {
        let mut l = lattice([1, 1, 4], [1e-3; 3], MaterialCell::vacuum());
        l.e[0].iter_mut().for_each(|v| *v = 2.0);
        let mut op = EmOperator::new(&l, 1e-12, BoundarySpec::uniform(Boundary::Pmc));
        op.update_e(&mut l, &[]);
        assert!(l.e[0].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn strong_conductor_flips_and_decays() {
        let mut l = lattice([1, 1, 4], [1e-3; 3], MaterialCell::dielectric(1.0, 1e6));
        l.e[0].iter_mut().for_each(|v| *v = 1.0);
        let dt = 1e-12;
        let eps = crate::units::PhysicalConstants::<f64>::default().eps0;
        let sig = 1e6;
        let mut op = EmOperator::new(&l, dt, BoundarySpec::uniform(Boundary::Pmc));
        op.update_e(&mut l, &[]);
        let r = -(sig / 2.0 - eps / dt) / (sig / 2.0 + eps / dt);
        assert!((l.e[0][2] - r).abs() < 1e-12);
        assert!(r < 0.0 && r.abs() < 1.0);
    }

    #[test]
    fn lossy_decay_matches_ode() {
        let eps_r = 4.0;
        let sig = 1e-2;
        let mut l = lattice([1, 1, 4], [1e-3; 3], MaterialCell::dielectric(eps_r, sig));
        l.e[0].iter_mut().for_each(|v| *v = 1.0);
        let eps = eps_r * crate::units::PhysicalConstants::<f64>::default().eps0;
        let tau = eps / sig;
        let dt = tau / 50.0;
        let mut op = EmOperator::new(&l, dt, BoundarySpec::uniform(Boundary::Pmc));
        for _ in 0..100 {
            op.update_e(&mut l, &[]);
        }
        let exact = (-100.0 * dt / tau).exp();
        assert!((l.e[0][2] / exact - 1.0).abs() < 0.01);
    }

    #[test]
    fn pec_wall_holds_zero() {
        let mut l = lattice([1, 1, 8], [1e-3; 3], MaterialCell::vacuum());
        let dt = cfl_timestep(&l.spec, 0.9).unwrap();
        let mut op = EmOperator::new(&l, dt, BoundarySpec::uniform(Boundary::Pec));
        l.h[1].iter_mut().take(8).for_each(|v| *v = 1.0);
        for _ in 0..5 {
            op.update_h_nonmagnetic(&mut l);
            op.update_e(&mut l, &[(0, 0, 1.0)]);
            op.apply_boundaries(&mut l);
            assert_eq!(l.sample(Component::Ex, 0, 0, 0).unwrap(), 0.0);
            assert_eq!(l.sample(Component::Ex, 0, 0, 8).unwrap(), 0.0);
        }
    }

    #[test]
    fn curl_operators_are_adjoint() {
        use rand::{Rng, SeedableRng};
        let spec = GridSpec::new([5, 4, 6], [1.0, 0.7, 1.3]).unwrap();
        let st = Stencil::new(&spec);
        let bnd = BoundarySpec::uniform(Boundary::Pec);
        let n = spec.cells();
        let len = spec.node_dims().iter().product();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut e: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
        let mut h: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
        let comps = [Component::Ex, Component::Ey, Component::Ez, Component::Hx, Component::Hy, Component::Hz];
        for (ci, c) in comps.iter().enumerate() {
            let ext = spec.extent(*c);
            for k in 0..ext[2] {
                for j in 0..ext[1] {
                    for i in 0..ext[0] {
                        let p = [i, j, k];
                        let at = spec.node_index(i, j, k);
                        if ci < 3 {
                            // tangential E vanishes on the walls
                            let wall = (0..3).any(|b| b != ci && (p[b] == 0 || p[b] == n[b]));
                            if !wall {
                                e[ci][at] = rng.random_range(-1.0..1.0);
                            }
                        } else {
                            h[ci - 3][at] = rng.random_range(-1.0..1.0);
                        }
                    }
                }
            }
        }
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for a in 0..3 {
            let ext = spec.extent(comps[a + 3]);
            for k in 0..ext[2] {
                for j in 0..ext[1] {
                    for i in 0..ext[0] {
                        let at = spec.node_index(i, j, k);
                        lhs += h[a][at] * st.curl_e(&e, a, at);
                    }
                }
            }
            let ext = spec.extent(comps[a]);
            for k in 0..ext[2] {
                for j in 0..ext[1] {
                    for i in 0..ext[0] {
                        let at = spec.node_index(i, j, k);
                        rhs += e[a][at] * st.curl_h(&bnd, &h, a, [i, j, k], at);
                    }
                }
            }
        }
        assert!(lhs.abs() > 1.0);
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs(), "{lhs} {rhs}");
    }
}
