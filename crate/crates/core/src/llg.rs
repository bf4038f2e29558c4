//! Implicit trapezoidal LLG update coupled to the H-field iteration.
//!
//! The printed update coefficients (`μ0|γ|Δt/4` in `a`, `b` and `Δt/(2μ0)` in
//! the H iteration) are those of a trapezoidal step over `Δt/2`. The
//! low-level functions keep that literal form and take `scheme_dt`;
//! [`coupled_cell_step`] advances a cell by `interval` and therefore calls them
//! with `scheme_dt = 2 * interval`. With this reading the precession angle per
//! step is `μ0|γ||H|·interval` and the ringdown frequency is the Kittel value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::curl_e_at;
use crate::grid::FieldLattice;
use crate::scalar::{lit, Arith, Real};
use crate::units::PhysicalConstants;
use crate::vec3::Vec3;

const PAR_MAGNETIC: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlgError {
    #[error("cell is not magnetic (Ms = 0)")]
    NonMagnetic,
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("iteration diverging at iterate {iter} (residual {residual:e})")]
    Diverged { iter: usize, residual: f64 },
    #[error("cell ({i}, {j}, {k}): {source}")]
    AtCell {
        i: usize,
        j: usize,
        k: usize,
        source: Box<LlgError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlgIterationParams<T> {
    /// Bound on `max|M^{r} - M^{r-1}| / Ms`.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for LlgIterationParams<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-6),
            max_iters: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveFieldTerms {
    pub include_bias: bool,
    pub include_em: bool,
}

impl Default for EffectiveFieldTerms {
    fn default() -> Self {
        Self {
            include_bias: true,
            include_em: true,
        }
    }
}

impl EffectiveFieldTerms {
    pub fn validate(&self) -> bool {
        self.include_bias || self.include_em
    }
}

/// `a = -[(μ0|γ|Δt/4) H_eff^{n+1,r-1} + (α/Ms) M^n]`,
/// `b = M^n - (μ0|γ|Δt/4)(M^n × H_eff^n)`.
pub fn llg_ab_vectors<S: Arith>(
    mn: Vec3<S>,
    heff_n: Vec3<S>,
    heff_prev_iter: Vec3<S>,
    scheme_dt: S,
    alpha: S,
    ms: S,
    mu0_gamma: S,
) -> (Vec3<S>, Vec3<S>) {
    let four = S::unit() + S::unit() + S::unit() + S::unit();
    let k = mu0_gamma * scheme_dt / four;
    let a = -(heff_prev_iter.scale(k) + mn.scale(alpha / ms));
    let b = mn - mn.cross(heff_n).scale(k);
    (a, b)
}

/// Solves `M + a × M = b`, then rescales to `ms`.
pub fn llg_m_next<S: Arith + PartialEq>(a: Vec3<S>, b: Vec3<S>, ms: S) -> Vec3<S> {
    let m = (b + a.scale(a.dot(b)) - a.cross(b)).scale(S::unit() / (S::unit() + a.norm_sq()));
    m.with_norm(ms)
}

/// `H^{n+1,r} = H^n + M^n - M^{n+1,r} - (Δt/2μ0) curl E^n`.
pub fn iterate_h<T: Real>(
    hn: Vec3<T>,
    mn: Vec3<T>,
    m_next: Vec3<T>,
    curl_e: Vec3<T>,
    scheme_dt: T,
    mu0: T,
) -> Vec3<T> {
    hn + mn - m_next - curl_e.scale(scheme_dt / (lit::<T>(2.0) * mu0))
}

/// One trapezoidal M update with prescribed effective fields at both ends.
/// Generic so that it can run on dual numbers.
pub fn llg_map<S: Arith + PartialEq>(
    m: Vec3<S>,
    heff_n: Vec3<S>,
    heff_next: Vec3<S>,
    scheme_dt: S,
    alpha: S,
    ms: S,
    mu0_gamma: S,
) -> Vec3<S> {
    let (a, b) = llg_ab_vectors(m, heff_n, heff_next, scheme_dt, alpha, ms, mu0_gamma);
    llg_m_next(a, b, ms)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState<T> {
    pub h: Vec3<T>,
    pub m: Vec3<T>,
}

/// Everything a magnetic cell sees from outside during one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellInputs<T> {
    pub curl_e: Vec3<T>,
    pub bias: Vec3<T>,
    /// Optional applied field at the start and end of the step.
    pub ext_n: Vec3<T>,
    pub ext_next: Vec3<T>,
    pub ms: T,
    pub alpha: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport<T> {
    pub iters: usize,
    pub residual: T,
}

#[derive(Clone, Copy, Debug)]
pub struct LlgSolver<T> {
    pub params: LlgIterationParams<T>,
    pub terms: EffectiveFieldTerms,
    pub consts: PhysicalConstants<T>,
}

impl<T: Real> Default for LlgSolver<T> {
    fn default() -> Self {
        Self {
            params: LlgIterationParams::default(),
            terms: EffectiveFieldTerms::default(),
            consts: PhysicalConstants::default(),
        }
    }
}

impl<T: Real> LlgSolver<T> {
    fn heff(&self, h: Vec3<T>, bias: Vec3<T>, ext: Vec3<T>) -> Vec3<T> {
        let mut s = ext;
        if self.terms.include_em {
            s += h;
        }
        if self.terms.include_bias {
            s += bias;
        }
        s
    }

    /// Advances `(H, M)` of one magnetic cell by `interval`, iterating the
    /// M map and the H update to self-consistency.
    pub fn coupled_cell_step(
        &self,
        state: CellState<T>,
        inp: &CellInputs<T>,
        interval: T,
    ) -> Result<(CellState<T>, StepReport<T>), LlgError> {
        if !(inp.ms > T::zero()) {
            return Err(LlgError::NonMagnetic);
        }
        let sdt = lit::<T>(2.0) * interval;
        let g = self.consts.mu0_gamma_abs();
        let mu0 = self.consts.mu0;
        let heff_n = self.heff(state.h, inp.bias, inp.ext_n);
        let b = state.m - state.m.cross(heff_n).scale(g * sdt * lit(0.25));
        // H^{n+1,0}: the field update with M held at M^n.
        let mut h_it = iterate_h(state.h, state.m, state.m, inp.curl_e, sdt, mu0);
        let mut m_prev = state.m;
        let mut last = T::max_value().unwrap_or(T::one());
        let mut growing = 0;
        for r in 1..=self.params.max_iters {
            let heff = self.heff(h_it, inp.bias, inp.ext_next);
            let a = -(heff.scale(g * sdt * lit(0.25)) + state.m.scale(inp.alpha / inp.ms));
            let m = llg_m_next(a, b, inp.ms);
            h_it = iterate_h(state.h, state.m, m, inp.curl_e, sdt, mu0);
            let d = m - m_prev;
            let res = d.x.abs().max(d.y.abs()).max(d.z.abs()) / inp.ms;
            m_prev = m;
            // The first iterate is compared with M^n, which only measures the
            // step size; accept it only when the cell is stationary.
            let stationary = res <= lit::<T>(16.0) * T::eps();
            if (r > 1 && res <= self.params.tol) || stationary {
                return Ok((CellState { h: h_it, m }, StepReport { iters: r, residual: res }));
            }
            if res > last {
                growing += 1;
                if growing >= 3 {
                    return Err(LlgError::Diverged {
                        iter: r,
                        residual: res.to_f64_lossy(),
                    });
                }
            } else {
                growing = 0;
            }
            last = res;
        }
        Err(LlgError::NotConverged {
            iters: self.params.max_iters,
            residual: last.to_f64_lossy(),
        })
    }

    /// Updates `(H, M)` in every magnetic cell of the lattice. H faces of
    /// magnetic cells are owned here; the EM operator skips them.
    pub fn step_magnetic(
        &self,
        lattice: &mut FieldLattice<T>,
        interval: T,
        ext: (Vec3<T>, Vec3<T>),
    ) -> Result<IterationStats<T>, LlgError> {
        let spec = lattice.spec;
        let lat: &FieldLattice<T> = lattice;
        let one = |&[i, j, k]: &[usize; 3]| -> Result<(CellState<T>, StepReport<T>), LlgError> {
            let at = spec.node_index(i, j, k);
            let curl = Vec3::new(
                curl_e_at(&spec, &lat.e, 0, at),
                curl_e_at(&spec, &lat.e, 1, at),
                curl_e_at(&spec, &lat.e, 2, at),
            );
            let mat = lat.materials.get(i, j, k);
            let inp = CellInputs {
                curl_e: curl,
                bias: mat.hbias,
                ext_n: ext.0,
                ext_next: ext.1,
                ms: mat.ms,
                alpha: mat.alpha,
            };
            let state = CellState {
                h: lat.h_cell(i, j, k),
                m: lat.m[spec.cell_index(i, j, k)],
            };
            self.coupled_cell_step(state, &inp, interval)
                .map_err(|e| LlgError::AtCell { i, j, k, source: Box::new(e) })
        };
        let results: Vec<_> = if lat.magnetic.len() >= PAR_MAGNETIC {
            lat.magnetic.par_iter().map(one).collect()
        } else {
            lat.magnetic.iter().map(one).collect()
        };
        let mut stats = IterationStats::default();
        let cells = lattice.magnetic.clone();
        for (&[i, j, k], r) in cells.iter().zip(results) {
            let (s, rep) = r?;
            lattice.set_h_cell(i, j, k, s.h);
            let ci = spec.cell_index(i, j, k);
            lattice.m[ci] = s.m;
            stats.record(rep);
        }
        Ok(stats)
    }
}

/// Per-step iteration counters aggregated over cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats<T> {
    pub cells: usize,
    pub total_iters: usize,
    pub max_iters: usize,
    pub max_residual: T,
}

impl<T: Real> IterationStats<T> {
    fn record(&mut self, r: StepReport<T>) {
        self.cells += 1;
        self.total_iters += r.iters;
        self.max_iters = self.max_iters.max(r.iters);
        if r.residual > self.max_residual {
            self.max_residual = r.residual;
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.cells += o.cells;
        self.total_iters += o.total_iters;
        self.max_iters = self.max_iters.max(o.max_iters);
        if o.max_residual > self.max_residual {
            self.max_residual = o.max_residual;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3<f64> {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn force_free_ab() {
        let m = Vec3::new(3.0, 4.0, 0.0);
        let (a, b) = llg_ab_vectors(m, Vec3::zeros(), Vec3::zeros(), 1e-12, 0.0, 5.0, 2.2e5);
        assert_eq!(a, Vec3::zeros());
        assert_eq!(b, m);
    }

    #[test]
    fn parallel_field_ab() {
        let m = Vec3::new(0.0, 0.0, 2.0);
        let h = Vec3::new(0.0, 0.0, 7.0);
        let (a, b) = llg_ab_vectors(m, h, h, 1e-12, 0.0, 2.0, 2.2e5);
        assert_eq!(b, m);
        assert_eq!(a.cross(m), Vec3::zeros());
    }

    #[test]
    fn ab_matches_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = rv(&mut rng, 1e5);
            let hn = rv(&mut rng, 1e5);
            let hp = rv(&mut rng, 1e5);
            let (dt, al, ms, g) = (3e-14, 0.01, 1e5, 2.2e5);
            let (a, b) = llg_ab_vectors(m, hn, hp, dt, al, ms, g);
            let k = g * dt / 4.0;
            let ax = -(k * hp.x + al / ms * m.x);
            let ay = -(k * hp.y + al / ms * m.y);
            let az = -(k * hp.z + al / ms * m.z);
            let bx = m.x - k * (m.y * hn.z - m.z * hn.y);
            let by = m.y - k * (m.z * hn.x - m.x * hn.z);
            let bz = m.z - k * (m.x * hn.y - m.y * hn.x);
            for (u, v) in [(a.x, ax), (a.y, ay), (a.z, az), (b.x, bx), (b.y, by), (b.z, bz)] {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1e-30), "{u} {v}");
            }
        }
    }

    #[test]
    fn m_next_trivial_cases() {
        let b = Vec3::new(1.0, 2.0, 2.0);
        let m = llg_m_next(Vec3::zeros(), b, 3.0);
        assert!((m - b).norm() < 1e-15);
        let a = b.scale(0.3);
        let m = llg_m_next(a, b, 6.0);
        assert!(m.cross(b).norm() < 1e-12);
    }

    #[test]
    fn larmor_angle_per_step() {
        // M along x, H along z, α = 0: rotation about z.
        let solver = LlgSolver::<f64>::default();
        let g = solver.consts.mu0_gamma_abs();
        let ms = 1.0e5;
        let h0 = 1.6e5;
        let dt = 1e-14;
        let inp = CellInputs {
            curl_e: Vec3::zeros(),
            bias: Vec3::new(0.0, 0.0, h0),
            ext_n: Vec3::zeros(),
            ext_next: Vec3::zeros(),
            ms,
            alpha: 0.0,
        };
        let s = CellState { h: Vec3::zeros(), m: Vec3::new(ms, 0.0, 0.0) };
        let (s1, _) = solver.coupled_cell_step(s, &inp, dt).unwrap();
        let angle = s1.m.y.atan2(s1.m.x).abs();
        let expect = g * h0 * dt;
        assert!((angle / expect - 1.0).abs() < 1e-3, "{angle} {expect}");
    }

    #[test]
    fn literal_step_reading_halves_the_angle() {
        let k = PhysicalConstants::<f64>::default();
        let g = k.mu0_gamma_abs();
        let ms = 1.0;
        let h = Vec3::new(0.0, 0.0, 1.6e5);
        let dt = 1e-14;
        let m = llg_map(Vec3::new(ms, 0.0, 0.0), h, h, dt, 0.0, ms, g);
        let angle = m.y.atan2(m.x).abs();
        assert!((angle / (0.5 * g * h.z * dt) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn iterate_h_identities() {
        let h = Vec3::new(1.0, 2.0, 3.0);
        let m = Vec3::new(4.0, 5.0, 6.0);
        assert_eq!(iterate_h(h, m, m, Vec3::zeros(), 1e-12, 1e-6), h);
        let m2 = m + Vec3::new(0.0, 0.0, 0.5);
        let h2 = iterate_h(h, m, m2, Vec3::zeros(), 1e-12, 1e-6);
        assert_eq!(h2, Vec3::new(1.0, 2.0, 2.5));
    }

    #[test]
    fn equilibrium_takes_one_iteration() {
        let solver = LlgSolver::<f64>::default();
        let inp = CellInputs {
            curl_e: Vec3::zeros(),
            bias: Vec3::new(1.6e5, 0.0, 0.0),
            ext_n: Vec3::zeros(),
            ext_next: Vec3::zeros(),
            ms: 9.7e5,
            alpha: 0.003,
        };
        let s = CellState { h: Vec3::zeros(), m: Vec3::new(9.7e5, 0.0, 0.0) };
        let (s1, rep) = solver.coupled_cell_step(s, &inp, 2.9e-15).unwrap();
        assert_eq!(rep.iters, 1);
        assert!((s1.m - s.m).norm() < 1e-12 * 9.7e5);
        assert!(s1.h.norm() < 1e-12 * 9.7e5);
    }

    #[test]
    fn random_small_fields_converge_quickly() {
        let solver = LlgSolver::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ms = 9.7e5;
        let dt = 0.9 * 1e-6 / (crate::units::C0 * 3f64.sqrt());
        let mut iters = vec![];
        for _ in 0..200 {
            let dir = rv(&mut rng, 1.0) + Vec3::new(3.0, 0.0, 0.0);
            let inp = CellInputs {
                curl_e: rv(&mut rng, 1e6),
                bias: Vec3::new(1.6e5, 0.0, 0.0),
                ext_n: Vec3::zeros(),
                ext_next: Vec3::zeros(),
                ms,
                alpha: 0.003,
            };
            let s = CellState { h: rv(&mut rng, 1e3), m: dir.with_norm(ms) };
            let (_, rep) = solver.coupled_cell_step(s, &inp, dt).unwrap();
            iters.push(rep.iters);
        }
        assert!(iters.iter().all(|&n| n < 20), "{iters:?}");
    }

    #[test]
    fn divergence_is_reported() {
        // A wildly oversized step makes the fixed point expansive.
        let solver = LlgSolver::<f64> {
            params: LlgIterationParams { tol: 1e-12, max_iters: 200 },
            ..Default::default()
        };
        let ms = 9.7e5;
        let inp = CellInputs {
            curl_e: Vec3::zeros(),
            bias: Vec3::new(1.6e5, 0.0, 0.0),
            ext_n: Vec3::zeros(),
            ext_next: Vec3::zeros(),
            ms,
            alpha: 0.0,
        };
        let s = CellState { h: Vec3::zeros(), m: Vec3::new(0.0, ms, 0.0) };
        let r = solver.coupled_cell_step(s, &inp, 1e-9);
        assert!(matches!(r, Err(LlgError::Diverged { .. }) | Err(LlgError::NotConverged { .. })), "{r:?}");
    }
}
