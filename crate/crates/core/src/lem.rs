//! Long-expressive-memory sequence surrogate for probe magnetization.
//!
//! All trainable tensors live in one flat vector (`SurrogateModel::theta`);
//! cells and readouts address it through fixed offsets. Gradients are
//! computed by hand-written reverse mode over the unrolled encoder and both
//! decoders, including the LLG residual term.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Component;
use crate::llg::llg_map;
use crate::scalar::{lit, Dual, Real};
use crate::signal::{minmax_params, MinMax};
use crate::simulation::CuratedDataset;
use crate::vec3::Vec3;

const N_GATES: usize = 4;
const G1: usize = 0;
const G2: usize = 1;
const GZ: usize = 2;
const GY: usize = 3;
const GATE_NAMES: [&str; N_GATES] = ["1", "2", "z", "y"];

pub const CHECKPOINT_FORMAT: &str = "mpsim-lem";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LemError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("effective field history has {got} entries, need {need}")]
    MissingField { need: usize, got: usize },
    #[error("non-finite loss in stage {stage}, epoch {epoch}, step {step}")]
    NonFinite { stage: usize, epoch: usize, step: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// dense helpers, row-major

/// `out += W x`
fn mv<T: Real>(out: &mut [T], w: &[T], x: &[T]) {
    let c = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * c..(r + 1) * c];
        let mut s = T::zero();
        for (a, b) in row.iter().zip(x) {
            s += *a * *b;
        }
        *o += s;
    }
}

/// `out += Wᵀ g`
fn mtv<T: Real>(out: &mut [T], w: &[T], g: &[T]) {
    let c = out.len();
    for (r, gr) in g.iter().enumerate() {
        if *gr == T::zero() {
            continue;
        }
        let row = &w[r * c..(r + 1) * c];
        for (o, a) in out.iter_mut().zip(row) {
            *o += *a * *gr;
        }
    }
}

/// `gw += g xᵀ`
fn outer<T: Real>(gw: &mut [T], g: &[T], x: &[T]) {
    let c = x.len();
    for (r, gr) in g.iter().enumerate() {
        if *gr == T::zero() {
            continue;
        }
        let row = &mut gw[r * c..(r + 1) * c];
        for (o, b) in row.iter_mut().zip(x) {
            *o += *gr * *b;
        }
    }
}

fn add_to<T: Real>(out: &mut [T], g: &[T]) {
    for (o, v) in out.iter_mut().zip(g) {
        *o += *v;
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// ---------------------------------------------------------------------------
// cell

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CellLayout {
    d: usize,
    m: usize,
    base: usize,
}

impl CellLayout {
    fn w(&self, g: usize) -> std::ops::Range<usize> {
        let s = self.base + g * self.d * self.d;
        s..s + self.d * self.d
    }
    fn v(&self, g: usize) -> std::ops::Range<usize> {
        let s = self.base + N_GATES * self.d * self.d + g * self.d * self.m;
        s..s + self.d * self.m
    }
    fn b(&self, g: usize) -> std::ops::Range<usize> {
        let s = self.base + N_GATES * (self.d * self.d + self.d * self.m) + g * self.d;
        s..s + self.d
    }
    fn len(&self) -> usize {
        N_GATES * (self.d * self.d + self.d * self.m + self.d)
    }
}

/// Parameters of a single cell: `W1, W2, Wz, Wy` (d×d), `V1, V2, Vz, Vy`
/// (d×m), `b1, b2, bz, by` (d) stored back to back, and the gate scale `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemCellParams<T> {
    pub hidden: usize,
    pub input: usize,
    pub dt: T,
    pub data: Vec<T>,
}

impl<T: Real> LemCellParams<T> {
    pub fn zeros(hidden: usize, input: usize, dt: T) -> Self {
        let l = CellLayout { d: hidden, m: input, base: 0 };
        Self { hidden, input, dt, data: vec![T::zero(); l.len()] }
    }

    fn layout(&self) -> CellLayout {
        CellLayout { d: self.hidden, m: self.input, base: 0 }
    }

    /// `W_g` for gate `g` in `{"1", "2", "z", "y"}`.
    pub fn w_mut(&mut self, g: &str) -> &mut [T] {
        let r = self.layout().w(gate_index(g));
        &mut self.data[r]
    }
    pub fn v_mut(&mut self, g: &str) -> &mut [T] {
        let r = self.layout().v(gate_index(g));
        &mut self.data[r]
    }
    pub fn b_mut(&mut self, g: &str) -> &mut [T] {
        let r = self.layout().b(gate_index(g));
        &mut self.data[r]
    }
}

fn gate_index(g: &str) -> usize {
    GATE_NAMES.iter().position(|n| *n == g).expect("gate name is one of 1, 2, z, y")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemState<T> {
    /// hidden state
    pub y: Vec<T>,
    /// latent state
    pub z: Vec<T>,
}

impl<T: Real> LemState<T> {
    pub fn zeros(d: usize) -> Self {
        Self { y: vec![T::zero(); d], z: vec![T::zero(); d] }
    }
}

#[derive(Clone, Debug)]
struct StepCache<T> {
    y0: Vec<T>,
    z0: Vec<T>,
    u: Vec<T>,
    g1: Vec<T>,
    g2: Vec<T>,
    tz: Vec<T>,
    ty: Vec<T>,
    z: Vec<T>,
}

#[derive(Clone, Copy)]
struct CellRef<'a, T> {
    l: CellLayout,
    p: &'a [T],
    dt: T,
}

impl<T: Real> CellRef<'_, T> {
    fn pre(&self, g: usize, h: &[T], u: &[T]) -> Vec<T> {
        let mut a = self.p[self.l.b(g)].to_vec();
        mv(&mut a, &self.p[self.l.w(g)], h);
        mv(&mut a, &self.p[self.l.v(g)], u);
        a
    }

    fn step(&self, s: &mut LemState<T>, u: &[T], cache: Option<&mut Vec<StepCache<T>>>) {
        let g1: Vec<T> = self.pre(G1, &s.y, u).into_iter().map(sigmoid).collect();
        let g2: Vec<T> = self.pre(G2, &s.y, u).into_iter().map(sigmoid).collect();
        let tz: Vec<T> = self.pre(GZ, &s.y, u).into_iter().map(|a| a.tanh()).collect();
        let z0 = std::mem::take(&mut s.z);
        let z: Vec<T> = (0..self.l.d)
            .map(|i| {
                let dn = self.dt * g1[i];
                (T::one() - dn) * z0[i] + dn * tz[i]
            })
            .collect();
        let ty: Vec<T> = self.pre(GY, &z, u).into_iter().map(|a| a.tanh()).collect();
        let y: Vec<T> = (0..self.l.d)
            .map(|i| {
                let db = self.dt * g2[i];
                (T::one() - db) * s.y[i] + db * ty[i]
            })
            .collect();
        let y0 = std::mem::replace(&mut s.y, y);
        s.z = z;
        if let Some(c) = cache {
            c.push(StepCache { y0, z0, u: u.to_vec(), g1, g2, tz, ty, z: s.z.clone() });
        }
    }

    /// Given gradients with respect to the new state, overwrites `gy`, `gz`
    /// with gradients with respect to the old state and accumulates into the
    /// parameter gradient and `gu`.
    fn backward(&self, grad: &mut [T], k: &StepCache<T>, gy: &mut [T], gz: &mut [T], gu: &mut [T]) {
        let d = self.l.d;
        let one = T::one();
        let mut gay = vec![T::zero(); d];
        let mut ga2 = vec![T::zero(); d];
        let mut gy0 = vec![T::zero(); d];
        for i in 0..d {
            let db = self.dt * k.g2[i];
            gay[i] = gy[i] * db * (one - k.ty[i] * k.ty[i]);
            ga2[i] = gy[i] * (k.ty[i] - k.y0[i]) * self.dt * k.g2[i] * (one - k.g2[i]);
            gy0[i] = gy[i] * (one - db);
        }
        outer(&mut grad[self.l.w(GY)], &gay, &k.z);
        outer(&mut grad[self.l.v(GY)], &gay, &k.u);
        add_to(&mut grad[self.l.b(GY)], &gay);
        let mut gzt = gz.to_vec();
        mtv(&mut gzt, &self.p[self.l.w(GY)], &gay);
        mtv(gu, &self.p[self.l.v(GY)], &gay);

        let mut gaz = vec![T::zero(); d];
        let mut ga1 = vec![T::zero(); d];
        for i in 0..d {
            let dn = self.dt * k.g1[i];
            gaz[i] = gzt[i] * dn * (one - k.tz[i] * k.tz[i]);
            ga1[i] = gzt[i] * (k.tz[i] - k.z0[i]) * self.dt * k.g1[i] * (one - k.g1[i]);
            gz[i] = gzt[i] * (one - dn);
        }
        for (g, ga) in [(GZ, &gaz), (G1, &ga1), (G2, &ga2)] {
            outer(&mut grad[self.l.w(g)], ga, &k.y0);
            outer(&mut grad[self.l.v(g)], ga, &k.u);
            add_to(&mut grad[self.l.b(g)], ga);
            mtv(&mut gy0, &self.p[self.l.w(g)], ga);
            mtv(gu, &self.p[self.l.v(g)], ga);
        }
        gy.copy_from_slice(&gy0);
    }
}

/// One IMEX step of the cell.
pub fn lem_cell_step<T: Real>(p: &LemCellParams<T>, state: &LemState<T>, u: &[T]) -> Result<LemState<T>, LemError> {
    if state.y.len() != p.hidden || state.z.len() != p.hidden || u.len() != p.input {
        return Err(LemError::Shape(format!(
            "cell is {}x{}, state ({}, {}), input {}",
            p.hidden,
            p.input,
            state.y.len(),
            state.z.len(),
            u.len()
        )));
    }
    let c = CellRef { l: p.layout(), p: &p.data, dt: p.dt };
    let mut s = state.clone();
    c.step(&mut s, u, None);
    Ok(s)
}

// ---------------------------------------------------------------------------
// model

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemHyper<T> {
    pub hidden: usize,
    /// Output channels; two per probe point (the two transverse M components).
    pub channels: usize,
    /// Gate scale shared by all cells.
    pub dt_cell: T,
}

impl<T: Real> Default for LemHyper<T> {
    fn default() -> Self {
        Self { hidden: 64, channels: 2, dt_cell: T::one() }
    }
}

const ENC: usize = 0;
const DEC: usize = 2;
const REC: usize = 4;
const CELL_NAMES: [&str; 6] = [
    "encoder.0",
    "encoder.1",
    "decoder.0",
    "decoder.1",
    "reconstruction.0",
    "reconstruction.1",
];

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    cells: [CellLayout; 6],
    /// `(W, b)` offsets of the prediction and reconstruction readouts.
    readout: [(usize, usize); 2],
    total: usize,
    d: usize,
    c: usize,
}

impl Layout {
    fn new(d: usize, c: usize) -> Self {
        let mut base = 0;
        let mut cells = [CellLayout { d, m: c, base: 0 }; 6];
        for (i, cell) in cells.iter_mut().enumerate() {
            let m = if i % 2 == 0 { c } else { d };
            *cell = CellLayout { d, m, base };
            base += cell.len();
        }
        let mut readout = [(0, 0); 2];
        for r in readout.iter_mut() {
            *r = (base, base + c * d);
            base += c * d + c;
        }
        Self { cells, readout, total: base, d, c }
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (ci, cell) in self.cells.iter().enumerate() {
            for (g, name) in GATE_NAMES.iter().enumerate() {
                out.push((format!("{}.W{name}", CELL_NAMES[ci]), vec![cell.d, cell.d], cell.w(g)));
            }
            for (g, name) in GATE_NAMES.iter().enumerate() {
                out.push((format!("{}.V{name}", CELL_NAMES[ci]), vec![cell.d, cell.m], cell.v(g)));
            }
            for (g, name) in GATE_NAMES.iter().enumerate() {
                out.push((format!("{}.b{name}", CELL_NAMES[ci]), vec![cell.d], cell.b(g)));
            }
        }
        for (prefix, (w, b)) in ["readout", "reconstruction.readout"].iter().zip(self.readout) {
            out.push((format!("{prefix}.W"), vec![self.c, self.d], w..w + self.c * self.d));
            out.push((format!("{prefix}.b"), vec![self.c], b..b + self.c));
        }
        out
    }
}

/// Stacked encoder, autoregressive prediction decoder, teacher-forced
/// reconstruction decoder and their linear readouts.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel<T> {
    pub hyper: LemHyper<T>,
    pub theta: Vec<T>,
    /// Per-channel min-max parameters of the training data.
    pub norm: Vec<MinMax<T>>,
    /// Sample interval of the training data (s).
    pub dt_ml: T,
    layout: Layout,
}

/// Encoder output: final states of both layers.
pub type Encoded<T> = [LemState<T>; 2];

impl<T: Real> SurrogateModel<T> {
    /// All parameters zero.
    pub fn zeros(hyper: LemHyper<T>, norm: Vec<MinMax<T>>, dt_ml: T) -> Self {
        let layout = Layout::new(hyper.hidden, hyper.channels);
        Self { hyper, theta: vec![T::zero(); layout.total], norm, dt_ml, layout }
    }

    /// Uniform `±1/sqrt(d)` initialization.
    pub fn init(hyper: LemHyper<T>, norm: Vec<MinMax<T>>, dt_ml: T, seed: u64) -> Self {
        let mut m = Self::zeros(hyper, norm, dt_ml);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hyper.hidden as f64).sqrt();
        for t in m.theta.iter_mut() {
            *t = lit(rng.random_range(-k..k));
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    fn cell(&self, i: usize) -> CellRef<'_, T> {
        CellRef { l: self.layout.cells[i], p: &self.theta, dt: self.hyper.dt_cell }
    }

    /// Copy of cell `i` (0, 1 encoder; 2, 3 decoder; 4, 5 reconstruction).
    pub fn cell_params(&self, i: usize) -> LemCellParams<T> {
        let l = self.layout.cells[i];
        LemCellParams {
            hidden: l.d,
            input: l.m,
            dt: self.hyper.dt_cell,
            data: self.theta[l.base..l.base + l.len()].to_vec(),
        }
    }

    pub fn set_cell_params(&mut self, i: usize, p: &LemCellParams<T>) -> Result<(), LemError> {
        let l = self.layout.cells[i];
        if p.hidden != l.d || p.input != l.m {
            return Err(LemError::Shape(format!("cell {i} is {}x{}", l.d, l.m)));
        }
        self.theta[l.base..l.base + l.len()].copy_from_slice(&p.data);
        Ok(())
    }

    pub fn readout_mut(&mut self) -> (&mut [T], &mut [T]) {
        let (w, b) = self.layout.readout[0];
        let c = self.layout.c;
        let (lo, hi) = self.theta.split_at_mut(b);
        (&mut lo[w..w + c * self.layout.d], &mut hi[..c])
    }

    fn check_seq(&self, x: &[T]) -> Result<usize, LemError> {
        let c = self.layout.c;
        if x.is_empty() || x.len() % c != 0 {
            return Err(LemError::Shape(format!("sequence length {} is not a positive multiple of {c}", x.len())));
        }
        Ok(x.len() / c)
    }

    fn encode_inner(&self, x: &[T], cache: &mut Option<[Vec<StepCache<T>>; 2]>) -> Encoded<T> {
        let c = self.layout.c;
        let d = self.layout.d;
        let mut s = [LemState::zeros(d), LemState::zeros(d)];
        for u in x.chunks(c) {
            let (a, b) = s.split_at_mut(1);
            self.cell(ENC).step(&mut a[0], u, cache.as_mut().map(|k| &mut k[0]));
            self.cell(ENC + 1).step(&mut b[0], &a[0].y, cache.as_mut().map(|k| &mut k[1]));
        }
        s
    }

    /// Runs the stacked encoder over `x` (flat, `L × channels`).
    pub fn encode(&self, x: &[T]) -> Result<Encoded<T>, LemError> {
        self.check_seq(x)?;
        Ok(self.encode_inner(x, &mut None))
    }

    /// Decoder pass `base` (prediction or reconstruction). With `feed`, step
    /// `n > 0` takes `feed[n-1]`; otherwise the previous readout.
    fn decode_inner(
        &self,
        base: usize,
        init: &Encoded<T>,
        steps: usize,
        feed: Option<&[T]>,
        cache: &mut Option<[Vec<StepCache<T>>; 2]>,
    ) -> Vec<T> {
        let c = self.layout.c;
        let d = self.layout.d;
        let (w, b) = self.layout.readout[if base == DEC { 0 } else { 1 }];
        let mut s = init.clone();
        let mut out = Vec::with_capacity(steps * c);
        let mut u = vec![T::zero(); c];
        for n in 0..steps {
            if n > 0 {
                u = match feed {
                    Some(f) => f[(n - 1) * c..n * c].to_vec(),
                    None => out[(n - 1) * c..n * c].to_vec(),
                };
            }
            let (a, bb) = s.split_at_mut(1);
            self.cell(base).step(&mut a[0], &u, cache.as_mut().map(|k| &mut k[0]));
            self.cell(base + 1).step(&mut bb[0], &a[0].y, cache.as_mut().map(|k| &mut k[1]));
            let mut o = self.theta[b..b + c].to_vec();
            mv(&mut o, &self.theta[w..w + c * d], &bb[0].y);
            out.extend(o);
        }
        out
    }

    /// Autoregressive decode from `init`: zero first input, then each readout
    /// fed back. Returns `steps × channels` normalized outputs.
    pub fn decode(&self, init: &Encoded<T>, steps: usize) -> Vec<T> {
        self.decode_inner(DEC, init, steps, None, &mut None)
    }

    /// Teacher-forced reconstruction of the input window.
    pub fn reconstruct(&self, init: &Encoded<T>, x: &[T]) -> Result<Vec<T>, LemError> {
        let n = self.check_seq(x)?;
        Ok(self.decode_inner(REC, init, n, Some(x), &mut None))
    }

    /// Normalized continuation of `x` by `steps` samples.
    pub fn predict(&self, x: &[T], steps: usize) -> Result<Vec<T>, LemError> {
        let e = self.encode(x)?;
        Ok(self.decode(&e, steps))
    }

    /// Denormalized continuation; input given in physical units.
    pub fn predict_physical(&self, x: &[T], steps: usize) -> Result<Vec<T>, LemError> {
        let c = self.layout.c;
        if self.norm.len() != c {
            return Err(LemError::Shape(format!("model has {} normalization entries for {c} channels", self.norm.len())));
        }
        let xn: Vec<T> = x.iter().enumerate().map(|(i, v)| self.norm[i % c].apply(*v)).collect();
        let p = self.predict(&xn, steps)?;
        Ok(p.iter().enumerate().map(|(i, v)| self.norm[i % c].invert(*v)).collect())
    }
}

// ---------------------------------------------------------------------------
// physics residual

/// Static description of the LLG residual. The field is the bias along the
/// axis not listed in `axes`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSpec<T> {
    /// Bias field (A/m), signed along the bias axis.
    pub h0: T,
    pub ms: T,
    pub alpha: T,
    /// `μ0|γ|` in m/(A·s).
    pub mu0_gamma: T,
    /// Axes of the two predicted components, for example `[0, 2]` for
    /// `(M_x, M_z)` with the bias along y.
    pub axes: [usize; 2],
    /// Residuals are divided by this before squaring.
    pub scale: T,
}

impl<T: Real> PhysicsSpec<T> {
    pub fn bias_axis(&self) -> usize {
        3 - self.axes[0] - self.axes[1]
    }

    pub fn bias_field(&self) -> Vec3<T> {
        let mut h = Vec3::zeros();
        h[self.bias_axis()] = self.h0;
        h
    }

    fn validate(&self) -> Result<(), LemError> {
        let [a, b] = self.axes;
        if a > 2 || b > 2 || a == b || !(self.ms > T::zero()) || !(self.scale > T::zero()) {
            return Err(LemError::Shape(format!("bad physics axes or scale: {:?}", self.axes)));
        }
        Ok(())
    }

    /// Full vector from the two transverse components, with the bias-axis
    /// component fixed by `|M| = Ms` and the sign of the bias.
    fn full<S: crate::scalar::Arith + PartialEq>(&self, a: S, b: S, ms: S, floor: S, sign: S) -> Vec3<S>
    where
        S: PartialOrd,
    {
        let mut rest = ms * ms - a * a - b * b;
        if rest < floor {
            rest = floor;
        }
        let mut m = Vec3::zeros();
        m[self.axes[0]] = a;
        m[self.axes[1]] = b;
        m[self.bias_axis()] = sign * rest.root();
        m
    }
}

/// Trapezoidal LLG step of the predicted transverse components over `dt_ml`,
/// with its 2×2 Jacobian.
fn llg_next_with_jac<T: Real>(
    spec: &PhysicsSpec<T>,
    pair: [T; 2],
    h_n: Vec3<T>,
    h_next: Vec3<T>,
    dt_ml: T,
) -> ([T; 2], [[T; 2]; 2]) {
    type D<T> = Dual<T, 2>;
    let c = |v: T| D::constant(v);
    let sign = if spec.h0 < T::zero() { -T::one() } else { T::one() };
    let floor = (spec.ms * lit(1e-6)).powi(2);
    let ms = c(spec.ms);
    let m = spec.full(D::var(pair[0], 0), D::var(pair[1], 1), ms, c(floor), c(sign));
    let next = llg_map(
        m,
        h_n.map(c),
        h_next.map(c),
        c(lit::<T>(2.0) * dt_ml),
        c(spec.alpha),
        ms,
        c(spec.mu0_gamma),
    );
    let (a, b) = (next[spec.axes[0]], next[spec.axes[1]]);
    ([a.v, b.v], [a.d, b.d])
}

/// `M^{n+1}(LLG) - M^{n+1}(ML)` for `n = 0..T-1`, in physical units.
///
/// `pred` holds the two transverse components per sample. `heff`, when
/// given, replaces the static bias and must cover every sample.
pub fn physics_residuals<T: Real>(
    pred: &[[T; 2]],
    heff: Option<&[Vec3<T>]>,
    spec: &PhysicsSpec<T>,
    dt_ml: T,
) -> Result<Vec<[T; 2]>, LemError> {
    spec.validate()?;
    if let Some(h) = heff {
        if h.len() != pred.len() {
            return Err(LemError::MissingField { need: pred.len(), got: h.len() });
        }
    }
    let bias = spec.bias_field();
    let field = |n: usize| heff.map_or(bias, |h| h[n]);
    Ok(pred
        .windows(2)
        .enumerate()
        .map(|(n, w)| {
            let (llg, _) = llg_next_with_jac(spec, w[0], field(n), field(n + 1), dt_ml);
            [llg[0] - w[1][0], llg[1] - w[1][1]]
        })
        .collect())
}

/// Optional physics context for the loss.
#[derive(Clone, Copy, Debug)]
pub struct PhysicsContext<'a, T> {
    pub spec: &'a PhysicsSpec<T>,
    pub norm: &'a [MinMax<T>],
    pub dt_ml: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub total: T,
    pub recon: T,
    pub pred: T,
    /// Sum of squared scaled residuals, before the `λ` weight.
    pub phys: T,
}

impl<T: Real> LossParts<T> {
    fn add(&mut self, o: &Self) {
        self.total += o.total;
        self.recon += o.recon;
        self.pred += o.pred;
        self.phys += o.phys;
    }
    fn scale(&mut self, s: T) {
        self.total *= s;
        self.recon *= s;
        self.pred *= s;
        self.phys *= s;
    }
}

fn mse_with_grad<T: Real>(a: &[T], b: &[T], g: &mut [T]) -> T {
    let n: T = lit(a.len() as f64);
    let mut s = T::zero();
    for i in 0..a.len() {
        let e = a[i] - b[i];
        s += e * e;
        g[i] = lit::<T>(2.0) * e / n;
    }
    s / n
}

/// Physics term on normalized predictions, with gradient added into `g`
/// scaled by `lambda`.
fn physics_term<T: Real>(pred: &[T], c: usize, ctx: &PhysicsContext<'_, T>, lambda: T, g: &mut [T]) -> Result<T, LemError> {
    ctx.spec.validate()?;
    if c % 2 != 0 || ctx.norm.len() != c {
        return Err(LemError::Shape(format!(
            "physics loss needs an even channel count with matching normalization, got {c} channels and {} entries",
            ctx.norm.len()
        )));
    }
    let steps = pred.len() / c;
    let h = ctx.spec.bias_field();
    let inv = T::one() / ctx.spec.scale;
    let two: T = lit(2.0);
    let mut total = T::zero();
    for p in 0..c / 2 {
        let (na, nb) = (ctx.norm[2 * p], ctx.norm[2 * p + 1]);
        let span = [na.max - na.min, nb.max - nb.min];
        let phys = |n: usize| [na.invert(pred[n * c + 2 * p]), nb.invert(pred[n * c + 2 * p + 1])];
        for n in 0..steps.saturating_sub(1) {
            let (llg, j) = llg_next_with_jac(ctx.spec, phys(n), h, h, ctx.dt_ml);
            let next = phys(n + 1);
            let r = [(llg[0] - next[0]) * inv, (llg[1] - next[1]) * inv];
            total += r[0] * r[0] + r[1] * r[1];
            if lambda != T::zero() {
                let gr = [two * lambda * r[0] * inv, two * lambda * r[1] * inv];
                for q in 0..2 {
                    let dm = gr[0] * j[0][q] + gr[1] * j[1][q];
                    g[n * c + 2 * p + q] += dm * span[q];
                    g[(n + 1) * c + 2 * p + q] -= gr[q] * span[q];
                }
            }
        }
    }
    Ok(total)
}

/// Model outputs for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutputs<T> {
    pub recon: Vec<T>,
    pub pred: Vec<T>,
}

/// `MSE(recon, inputs) + MSE(pred, targets) + λ·L_phy` and the gradients
/// with respect to both outputs.
pub fn total_loss_with_grad<T: Real>(
    out: &WindowOutputs<T>,
    inputs: &[T],
    targets: &[T],
    channels: usize,
    lambda: T,
    physics: Option<&PhysicsContext<'_, T>>,
) -> Result<(LossParts<T>, WindowOutputs<T>), LemError> {
    if out.recon.len() != inputs.len() || out.pred.len() != targets.len() || channels == 0 {
        return Err(LemError::Shape(format!(
            "outputs ({}, {}) vs data ({}, {})",
            out.recon.len(),
            out.pred.len(),
            inputs.len(),
            targets.len()
        )));
    }
    let mut g = WindowOutputs { recon: vec![T::zero(); inputs.len()], pred: vec![T::zero(); targets.len()] };
    let recon = mse_with_grad(&out.recon, inputs, &mut g.recon);
    let pred = mse_with_grad(&out.pred, targets, &mut g.pred);
    let phys = match physics {
        Some(ctx) => physics_term(&out.pred, channels, ctx, lambda, &mut g.pred)?,
        None => T::zero(),
    };
    Ok((LossParts { total: recon + pred + lambda * phys, recon, pred, phys }, g))
}

pub fn total_loss<T: Real>(
    out: &WindowOutputs<T>,
    inputs: &[T],
    targets: &[T],
    channels: usize,
    lambda: T,
    physics: Option<&PhysicsContext<'_, T>>,
) -> Result<LossParts<T>, LemError> {
    total_loss_with_grad(out, inputs, targets, channels, lambda, physics).map(|r| r.0)
}

impl<T: Real> SurrogateModel<T> {
    pub fn forward(&self, inputs: &[T], pred_len: usize) -> Result<WindowOutputs<T>, LemError> {
        let e = self.encode(inputs)?;
        Ok(WindowOutputs { recon: self.reconstruct(&e, inputs)?, pred: self.decode(&e, pred_len) })
    }

    /// Loss of one window and its gradient with respect to `theta`.
    pub fn loss_and_grad(
        &self,
        inputs: &[T],
        targets: &[T],
        lambda: T,
        physics: Option<&PhysicsContext<'_, T>>,
    ) -> Result<(LossParts<T>, Vec<T>), LemError> {
        let c = self.layout.c;
        let d = self.layout.d;
        self.check_seq(inputs)?;
        let p = self.check_seq(targets)?;
        let mut ec = Some([Vec::new(), Vec::new()]);
        let mut dc = Some([Vec::new(), Vec::new()]);
        let mut rc = Some([Vec::new(), Vec::new()]);
        let e = self.encode_inner(inputs, &mut ec);
        let out = WindowOutputs {
            recon: self.decode_inner(REC, &e, inputs.len() / c, Some(inputs), &mut rc),
            pred: self.decode_inner(DEC, &e, p, None, &mut dc),
        };
        let (loss, gout) = total_loss_with_grad(&out, inputs, targets, c, lambda, physics)?;

        let mut grad = vec![T::zero(); self.layout.total];
        let mut ge = [vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]];
        for (base, cache, gfeed, autoreg) in [
            (DEC, dc.unwrap(), &gout.pred, true),
            (REC, rc.unwrap(), &gout.recon, false),
        ] {
            let g0 = self.decoder_backward(base, &cache, gfeed, autoreg, &mut grad);
            for (acc, g) in ge.iter_mut().zip(g0) {
                add_to(acc, &g);
            }
        }
        let [mut gy0, mut gz0, mut gy1, mut gz1] = ge;
        let ec = ec.unwrap();
        let mut gu = vec![T::zero(); d];
        let mut gx = vec![T::zero(); c];
        for n in (0..ec[0].len()).rev() {
            gu.iter_mut().for_each(|v| *v = T::zero());
            self.cell(ENC + 1).backward(&mut grad, &ec[1][n], &mut gy1, &mut gz1, &mut gu);
            add_to(&mut gy0, &gu);
            gx.iter_mut().for_each(|v| *v = T::zero());
            self.cell(ENC).backward(&mut grad, &ec[0][n], &mut gy0, &mut gz0, &mut gx);
        }
        Ok((loss, grad))
    }

    /// Backward pass through one decoder; returns gradients with respect to
    /// its initial `[y0, z0, y1, z1]`.
    fn decoder_backward(
        &self,
        base: usize,
        cache: &[Vec<StepCache<T>>; 2],
        gout: &[T],
        autoreg: bool,
        grad: &mut [T],
    ) -> [Vec<T>; 4] {
        let c = self.layout.c;
        let d = self.layout.d;
        let (w, b) = self.layout.readout[if base == DEC { 0 } else { 1 }];
        let mut gy = [vec![T::zero(); d], vec![T::zero(); d]];
        let mut gz = [vec![T::zero(); d], vec![T::zero(); d]];
        let mut carry = vec![T::zero(); c];
        let mut gu1 = vec![T::zero(); d];
        let mut gu0 = vec![T::zero(); c];
        for n in (0..cache[0].len()).rev() {
            let mut go = gout[n * c..(n + 1) * c].to_vec();
            if autoreg {
                add_to(&mut go, &carry);
            }
            let top = match cache[1].get(n + 1) {
                Some(k) => k.y0.clone(),
                None => self.final_y(&cache[1][n]),
            };
            outer(&mut grad[w..w + c * d], &go, &top);
            add_to(&mut grad[b..b + c], &go);
            mtv(&mut gy[1], &self.theta[w..w + c * d], &go);

            gu1.iter_mut().for_each(|v| *v = T::zero());
            let (g0, g1) = gy.split_at_mut(1);
            let (z0, z1) = gz.split_at_mut(1);
            self.cell(base + 1).backward(grad, &cache[1][n], &mut g1[0], &mut z1[0], &mut gu1);
            add_to(&mut g0[0], &gu1);
            gu0.iter_mut().for_each(|v| *v = T::zero());
            self.cell(base).backward(grad, &cache[0][n], &mut g0[0], &mut z0[0], &mut gu0);
            if autoreg {
                carry.copy_from_slice(&gu0);
            }
        }
        let [a, b2] = gy;
        let [za, zb] = gz;
        [a, za, b2, zb]
    }

    fn final_y(&self, k: &StepCache<T>) -> Vec<T> {
        let dt = self.hyper.dt_cell;
        (0..k.y0.len())
            .map(|i| {
                let db = dt * k.g2[i];
                (T::one() - db) * k.y0[i] + db * k.ty[i]
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// data

/// Normalized trajectories, `len × channels` each, flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSet<T> {
    pub channels: usize,
    pub dt_ml: T,
    pub norm: Vec<MinMax<T>>,
    pub trajs: Vec<Vec<T>>,
    pub physics: Option<PhysicsSpec<T>>,
}

impl<T: Real> SequenceSet<T> {
    /// From physical-unit trajectories; normalization is per channel over
    /// all trajectories.
    pub fn from_physical(
        channels: usize,
        dt_ml: T,
        trajs: &[Vec<T>],
        physics: Option<PhysicsSpec<T>>,
    ) -> Result<Self, LemError> {
        if channels == 0 || trajs.is_empty() || trajs.iter().any(|t| t.is_empty() || t.len() % channels != 0) {
            return Err(LemError::Dataset("trajectories must be non-empty multiples of the channel count".into()));
        }
        let norm = (0..channels)
            .map(|ch| {
                let vals: Vec<T> = trajs.iter().flat_map(|t| t.iter().skip(ch).step_by(channels).copied()).collect();
                minmax_params(&vals).map_err(|e| LemError::Dataset(format!("channel {ch}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trajs = trajs
            .iter()
            .map(|t| t.iter().enumerate().map(|(i, v)| norm[i % channels].apply(*v)).collect())
            .collect();
        Ok(Self { channels, dt_ml, norm, trajs, physics })
    }

    /// Pairs the two components of every probe location and bias in a
    /// curated dataset. Each pair becomes one two-channel trajectory.
    pub fn from_curated(ds: &CuratedDataset<T>, comps: [Component; 2], physics: Option<PhysicsSpec<T>>) -> Result<Self, LemError> {
        let mut trajs = Vec::new();
        let mut dt = None;
        for a in ds.series.iter().filter(|s| s.component == comps[0]) {
            let Some(b) = ds.series.iter().find(|s| s.component == comps[1] && s.at == a.at && s.bias == a.bias) else {
                continue;
            };
            if a.samples.len() != b.samples.len() || a.dt != b.dt {
                return Err(LemError::Dataset(format!("{:?} and {:?} at {:?} differ in length or dt", comps[0], comps[1], a.at)));
            }
            let step = a.dt * lit(ds.factor as f64);
            if dt.is_some_and(|d| d != step) {
                return Err(LemError::Dataset("series have different sample intervals".into()));
            }
            dt = Some(step);
            let mut t = Vec::with_capacity(2 * a.samples.len());
            for (x, y) in a.samples.iter().zip(&b.samples) {
                t.push(a.norm.invert(*x));
                t.push(b.norm.invert(*y));
            }
            trajs.push(t);
        }
        let dt = dt.ok_or_else(|| LemError::Dataset(format!("no {}/{} pairs found", comps[0].name(), comps[1].name())))?;
        Self::from_physical(2, dt, &trajs, physics)
    }

    pub fn len_of(&self, i: usize) -> usize {
        self.trajs[i].len() / self.channels
    }

    /// `(trajectory, start)` of every window of `input_len + pred_len`
    /// samples at the given stride.
    pub fn windows(&self, input_len: usize, pred_len: usize, stride: usize) -> Vec<(usize, usize)> {
        let span = input_len + pred_len;
        let mut out = Vec::new();
        for i in 0..self.trajs.len() {
            let n = self.len_of(i);
            let mut s = 0;
            while s + span <= n {
                out.push((i, s));
                s += stride.max(1);
            }
        }
        out
    }

    fn slice(&self, i: usize, start: usize, len: usize) -> &[T] {
        &self.trajs[i][start * self.channels..(start + len) * self.channels]
    }
}

/// Macrospin ringdown trajectories of the two transverse components,
/// generated with the same trapezoidal map the residual uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingdownToy<T> {
    pub physics: PhysicsSpec<T>,
    pub dt_ml: T,
    pub n_traj: usize,
    pub len: usize,
    /// Initial tilt range from the bias axis (rad).
    pub tilt: (T, T),
}

impl Default for RingdownToy<f64> {
    fn default() -> Self {
        let h0 = 1.0e4;
        let mu0_gamma = 2.2104e5;
        let f = mu0_gamma * h0 / (2.0 * std::f64::consts::PI);
        Self {
            physics: PhysicsSpec { h0, ms: 1.4e5, alpha: 0.02, mu0_gamma, axes: [0, 2], scale: 1.4e5 },
            dt_ml: 1.0 / (16.0 * f),
            n_traj: 32,
            len: 200,
            tilt: (0.05, 0.3),
        }
    }
}

pub fn macrospin_ringdown<T: Real>(toy: &RingdownToy<T>, seed: u64) -> Result<SequenceSet<T>, LemError> {
    let p = &toy.physics;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = p.bias_field();
    let sign = if p.h0 < T::zero() { -T::one() } else { T::one() };
    let two: T = lit(2.0);
    let mut trajs = Vec::with_capacity(toy.n_traj);
    for _ in 0..toy.n_traj {
        let (lo, hi) = (toy.tilt.0.to_f64_lossy(), toy.tilt.1.to_f64_lossy());
        let th: T = lit(if hi > lo { rng.random_range(lo..hi) } else { lo });
        let ph: T = lit(rng.random_range(0.0..std::f64::consts::TAU));
        let mut m = Vec3::zeros();
        m[p.axes[0]] = p.ms * th.sin() * ph.cos();
        m[p.axes[1]] = p.ms * th.sin() * ph.sin();
        m[p.bias_axis()] = sign * p.ms * th.cos();
        let mut t = Vec::with_capacity(2 * toy.len);
        for _ in 0..toy.len {
            t.push(m[p.axes[0]]);
            t.push(m[p.axes[1]]);
            m = llg_map(m, h, h, two * toy.dt_ml, p.alpha, p.ms, p.mu0_gamma);
        }
        trajs.push(t);
    }
    SequenceSet::from_physical(2, toy.dt_ml, &trajs, Some(*p))
}

// ---------------------------------------------------------------------------
// training

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage<T> {
    pub lr: T,
    pub pred_len: usize,
    pub batch: usize,
    pub lambda: T,
    pub input_len: usize,
    pub epochs: usize,
}

/// Four-stage default: learning rate 1e-3 down to 1.25e-4, prediction
/// length 50 to 400, batch 64 to 512, physics weight 0 to 2.5e6, input
/// length alternating 100 and 200, 1250 epochs in total.
pub fn default_schedule<T: Real>() -> Vec<CurriculumStage<T>> {
    let s = |lr: f64, pred_len, batch, lambda: f64, input_len, epochs| CurriculumStage {
        lr: lit(lr),
        pred_len,
        batch,
        lambda: lit(lambda),
        input_len,
        epochs,
    };
    vec![
        s(1e-3, 50, 64, 0.0, 100, 250),
        s(5e-4, 100, 128, 2.5e4, 200, 300),
        s(2.5e-4, 200, 256, 2.5e5, 100, 350),
        s(1.25e-4, 400, 512, 2.5e6, 200, 350),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        Self { beta1: lit(0.9), beta2: lit(0.999), eps: lit(1e-8) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub params: AdamParams<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, params: AdamParams<T>) -> Self {
        Self { params, m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [T], g: &[T], lr: T) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let one = T::one();
        let c1 = one - beta1.powi(self.t as i32);
        let c2 = one - beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (one - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (one - beta2) * g[i] * g[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions<T> {
    pub seed: u64,
    pub adam: AdamParams<T>,
    /// Spacing of window start offsets.
    pub window_stride: usize,
    /// Evaluate batch chunks on the rayon pool. Chunk sums are reduced in a
    /// fixed order, so results do not depend on the thread count.
    pub parallel: bool,
    /// Windows per gradient chunk.
    pub chunk: usize,
    /// Global gradient-norm clip.
    pub clip: Option<T>,
}

impl<T: Real> Default for TrainOptions<T> {
    fn default() -> Self {
        Self { seed: 0, adam: AdamParams::default(), window_stride: 10, parallel: false, chunk: 16, clip: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPosition {
    pub stage: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageHistory<T> {
    pub stage: usize,
    /// Mean loss per epoch.
    pub epochs: Vec<LossParts<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<T> {
    pub history: Vec<StageHistory<T>>,
    pub steps: usize,
    pub position: CurriculumPosition,
}

/// Mean loss and gradient over a batch of windows.
pub fn batch_loss_and_grad<T: Real>(
    model: &SurrogateModel<T>,
    data: &SequenceSet<T>,
    batch: &[(usize, usize)],
    input_len: usize,
    pred_len: usize,
    lambda: T,
    opts: &TrainOptions<T>,
) -> Result<(LossParts<T>, Vec<T>), LemError> {
    let ctx = data.physics.as_ref().map(|spec| PhysicsContext { spec, norm: &data.norm, dt_ml: data.dt_ml });
    let one = |&(i, s): &(usize, usize)| {
        let x = data.slice(i, s, input_len);
        let t = data.slice(i, s + input_len, pred_len);
        model.loss_and_grad(x, t, lambda, ctx.as_ref())
    };
    let chunk_sum = |c: &[(usize, usize)]| -> Result<(LossParts<T>, Vec<T>), LemError> {
        let mut l = LossParts::default();
        let mut g = vec![T::zero(); model.n_params()];
        for w in c {
            let (lw, gw) = one(w)?;
            l.add(&lw);
            add_to(&mut g, &gw);
        }
        Ok((l, g))
    };
    let chunks: Vec<&[(usize, usize)]> = batch.chunks(opts.chunk.max(1)).collect();
    let parts: Vec<_> = if opts.parallel {
        chunks.par_iter().map(|c| chunk_sum(c)).collect()
    } else {
        chunks.iter().map(|c| chunk_sum(c)).collect()
    };
    let mut loss = LossParts::default();
    let mut grad = vec![T::zero(); model.n_params()];
    for p in parts {
        let (l, g) = p?;
        loss.add(&l);
        add_to(&mut grad, &g);
    }
    let inv = T::one() / lit(batch.len() as f64);
    loss.scale(inv);
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss, grad))
}

/// Runs the curriculum. `data.norm` and `data.dt_ml` are copied into the
/// model.
pub fn train<T: Real>(
    model: &mut SurrogateModel<T>,
    data: &SequenceSet<T>,
    schedule: &[CurriculumStage<T>],
    opts: &TrainOptions<T>,
) -> Result<TrainReport<T>, LemError> {
    if data.channels != model.hyper.channels {
        return Err(LemError::Shape(format!("model has {} channels, data {}", model.hyper.channels, data.channels)));
    }
    model.norm = data.norm.clone();
    model.dt_ml = data.dt_ml;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(model.n_params(), opts.adam);
    let mut history = Vec::new();
    let mut steps = 0;
    let mut position = CurriculumPosition::default();
    for (si, st) in schedule.iter().enumerate() {
        if st.batch == 0 || st.pred_len == 0 || st.input_len == 0 || !(st.lr > T::zero()) || st.lambda < T::zero() {
            return Err(LemError::Shape(format!("stage {si} has a non-positive setting")));
        }
        let mut windows = data.windows(st.input_len, st.pred_len, opts.window_stride);
        if windows.is_empty() {
            return Err(LemError::Dataset(format!(
                "stage {si}: no trajectory holds {} samples",
                st.input_len + st.pred_len
            )));
        }
        let mut hist = StageHistory { stage: si, epochs: Vec::with_capacity(st.epochs) };
        for ep in 0..st.epochs {
            windows.shuffle(&mut rng);
            let mut mean = LossParts::default();
            let mut nb = 0usize;
            for (bi, batch) in windows.chunks(st.batch).enumerate() {
                let (loss, mut g) = batch_loss_and_grad(model, data, batch, st.input_len, st.pred_len, st.lambda, opts)?;
                if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(LemError::NonFinite { stage: si, epoch: ep, step: bi });
                }
                if let Some(c) = opts.clip {
                    let n = g.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
                    if n > c {
                        let s = c / n;
                        g.iter_mut().for_each(|v| *v *= s);
                    }
                }
                adam.step(&mut model.theta, &g, st.lr);
                mean.add(&loss);
                nb += 1;
                steps += 1;
            }
            mean.scale(T::one() / lit(nb as f64));
            hist.epochs.push(mean);
            position = CurriculumPosition { stage: si, epoch: ep + 1 };
        }
        history.push(hist);
    }
    Ok(TrainReport { history, steps, position })
}

/// Root-mean-square error (normalized units) of `horizon`-sample
/// continuations from the windows of every trajectory.
pub fn rollout_rmse<T: Real>(
    model: &SurrogateModel<T>,
    data: &SequenceSet<T>,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<T, LemError> {
    let windows = data.windows(input_len, horizon, stride);
    if windows.is_empty() {
        return Err(LemError::Dataset(format!("no trajectory holds {} samples", input_len + horizon)));
    }
    let mut s = T::zero();
    let mut n = 0usize;
    for (i, st) in windows {
        let p = model.predict(data.slice(i, st, input_len), horizon)?;
        for (a, b) in p.iter().zip(data.slice(i, st + input_len, horizon)) {
            s += (*a - *b) * (*a - *b);
            n += 1;
        }
    }
    Ok((s / lit(n as f64)).sqrt())
}

// ---------------------------------------------------------------------------
// checkpoint

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub hyper: LemHyper<T>,
    pub dt_ml: T,
    pub norm: Vec<MinMax<T>>,
    pub physics: Option<PhysicsSpec<T>>,
    pub position: CurriculumPosition,
    pub tensors: Vec<NamedTensor<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(m: &SurrogateModel<T>, physics: Option<PhysicsSpec<T>>, position: CurriculumPosition) -> Self {
        let tensors = m
            .layout
            .tensors()
            .into_iter()
            .map(|(name, shape, r)| NamedTensor { name, shape, data: m.theta[r].to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyper: m.hyper,
            dt_ml: m.dt_ml,
            norm: m.norm.clone(),
            physics,
            position,
            tensors,
        }
    }

    pub fn to_model(&self) -> Result<SurrogateModel<T>, LemError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(LemError::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let mut m = SurrogateModel::zeros(self.hyper, self.norm.clone(), self.dt_ml);
        let expected = m.layout.tensors();
        if expected.len() != self.tensors.len() {
            return Err(LemError::Checkpoint(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        for (name, shape, r) in expected {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| LemError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != r.len() {
                return Err(LemError::Checkpoint(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            m.theta[r].copy_from_slice(&t.data);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), LemError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LemError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn random_cell(d: usize, m: usize, dt: f64, seed: u64) -> LemCellParams<f64> {
        let mut p = LemCellParams::zeros(d, m, dt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        p
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_cell_halves_state() {
        let p = LemCellParams::zeros(3, 2, 1.0);
        let s = LemState { y: vec![1.0, -2.0, 4.0], z: vec![0.5, 8.0, -1.0] };
        let n = lem_cell_step(&p, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(n.y, vec![0.5, -1.0, 2.0]);
        assert_eq!(n.z, vec![0.25, 4.0, -0.5]);
    }

    #[test]
    fn zero_gate_scale_is_identity() {
        let p = random_cell(4, 2, 0.0, 3);
        let s = LemState { y: vec![0.1, 0.2, 0.3, 0.4], z: vec![-1.0, 2.0, 0.0, 5.0] };
        assert_eq!(lem_cell_step(&p, &s, &[0.7, -0.2]).unwrap(), s);
    }

    #[test]
    fn cell_matches_matrix_form() {
        let (d, m) = (5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let mut p = random_cell(d, m, 0.7, seed);
            let s = LemState { y: random_vec(d, &mut rng), z: random_vec(d, &mut rng) };
            let u = random_vec(m, &mut rng);
            let got = lem_cell_step(&p, &s, &u).unwrap();

            let wm = |p: &mut LemCellParams<f64>, g: &str| DMatrix::from_row_slice(d, d, p.w_mut(g));
            let vm = |p: &mut LemCellParams<f64>, g: &str| DMatrix::from_row_slice(d, m, p.v_mut(g));
            let bv = |p: &mut LemCellParams<f64>, g: &str| DVector::from_column_slice(p.b_mut(g));
            let y = DVector::from_column_slice(&s.y);
            let z = DVector::from_column_slice(&s.z);
            let uu = DVector::from_column_slice(&u);
            let sig = |v: DVector<f64>| v.map(|x| 1.0 / (1.0 + (-x).exp()));
            let dtn = sig(wm(&mut p, "1") * &y + vm(&mut p, "1") * &uu + bv(&mut p, "1")) * 0.7;
            let dtb = sig(wm(&mut p, "2") * &y + vm(&mut p, "2") * &uu + bv(&mut p, "2")) * 0.7;
            let zt = (wm(&mut p, "z") * &y + vm(&mut p, "z") * &uu + bv(&mut p, "z")).map(f64::tanh);
            let zn = z.component_mul(&dtn.map(|v| 1.0 - v)) + dtn.component_mul(&zt);
            let yt = (wm(&mut p, "y") * &zn + vm(&mut p, "y") * &uu + bv(&mut p, "y")).map(f64::tanh);
            let yn = y.component_mul(&dtb.map(|v| 1.0 - v)) + dtb.component_mul(&yt);
            for i in 0..d {
                assert!((got.z[i] - zn[i]).abs() < 1e-12);
                assert!((got.y[i] - yn[i]).abs() < 1e-12);
            }
        }
    }

    fn toy_model(d: usize, seed: u64) -> SurrogateModel<f64> {
        let norm = vec![MinMax { min: -2.0e4, max: 2.0e4 }, MinMax { min: -2.0e4, max: 2.0e4 }];
        SurrogateModel::init(LemHyper { hidden: d, channels: 2, dt_cell: 0.8 }, norm, 1e-11, seed)
    }

    #[test]
    fn zero_model_outputs_readout_bias() {
        let norm = vec![MinMax { min: 0.0, max: 1.0 }; 2];
        let mut m = SurrogateModel::zeros(LemHyper { hidden: 4, channels: 2, dt_cell: 1.0 }, norm, 1.0);
        let e = m.encode(&[0.0; 6]).unwrap();
        assert!(e.iter().all(|s| s.y.iter().chain(&s.z).all(|v| *v == 0.0)));
        m.readout_mut().1.copy_from_slice(&[0.25, -3.0]);
        let e = m.encode(&[0.3, 0.1, 0.9, 0.4]).unwrap();
        assert_eq!(m.decode(&e, 3), vec![0.25, -3.0, 0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn single_step_encoder_and_decoder() {
        let m = toy_model(4, 5);
        let x = [0.2, 0.6];
        let e = m.encode(&x).unwrap();
        let s0 = lem_cell_step(&m.cell_params(0), &LemState::zeros(4), &x).unwrap();
        let s1 = lem_cell_step(&m.cell_params(1), &LemState::zeros(4), &s0.y).unwrap();
        assert_eq!(e, [s0, s1]);
        let out = m.decode(&e, 1);
        let d0 = lem_cell_step(&m.cell_params(2), &e[0], &[0.0, 0.0]).unwrap();
        let d1 = lem_cell_step(&m.cell_params(3), &e[1], &d0.y).unwrap();
        let (w, b) = m.layout.readout[0];
        let mut o = m.theta[b..b + 2].to_vec();
        mv(&mut o, &m.theta[w..w + 8], &d1.y);
        assert_eq!(out, o);
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let m = toy_model(6, 9);
        let x = [0.1, 0.9, 0.5, 0.2, 0.8, 0.3];
        let rev = [0.8, 0.3, 0.5, 0.2, 0.1, 0.9];
        assert_ne!(m.encode(&x).unwrap(), m.encode(&rev).unwrap());
    }

    fn spec() -> PhysicsSpec<f64> {
        PhysicsSpec { h0: 1.0e4, ms: 1.4e5, alpha: 0.02, mu0_gamma: 2.2104e5, axes: [0, 2], scale: 1.4e5 }
    }

    fn llg_traj(n: usize, dt: f64) -> Vec<[f64; 2]> {
        let s = spec();
        let h = s.bias_field();
        let mut m = Vec3::new(0.2 * s.ms, 0.0, 0.1 * s.ms);
        m.y = (s.ms * s.ms - m.x * m.x - m.z * m.z).sqrt();
        (0..n)
            .map(|_| {
                let out = [m.x, m.z];
                m = llg_map(m, h, h, 2.0 * dt, s.alpha, s.ms, s.mu0_gamma);
                out
            })
            .collect()
    }

    #[test]
    fn residual_vanishes_on_llg_trajectory() {
        let dt = 2e-11;
        let r = physics_residuals(&llg_traj(50, dt), None, &spec(), dt).unwrap();
        assert_eq!(r.len(), 49);
        assert!(r.iter().all(|v| v[0].abs() / spec().ms < 1e-10 && v[1].abs() / spec().ms < 1e-10));
    }

    #[test]
    fn residual_is_local() {
        let dt = 2e-11;
        let t = llg_traj(20, dt);
        let base = physics_residuals(&t, None, &spec(), dt).unwrap();
        let mut p = t.clone();
        p[7][0] += 1.0;
        let r = physics_residuals(&p, None, &spec(), dt).unwrap();
        let changed: Vec<usize> = (0..r.len()).filter(|&n| r[n] != base[n]).collect();
        assert_eq!(changed, vec![6, 7]);
        assert!((r[6][0] - base[6][0] + 1.0).abs() < 1e-6);
        assert!(r[7][0].abs() < 10.0 && r[7][1].abs() < 10.0);
    }

    #[test]
    fn residual_zero_at_equilibrium() {
        let r = physics_residuals(&[[0.0, 0.0]; 10], None, &spec(), 1e-11).unwrap();
        assert!(r.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn residual_field_history_length_checked() {
        let h = vec![spec().bias_field(); 3];
        assert!(matches!(
            physics_residuals(&[[0.0, 0.0]; 4], Some(&h), &spec(), 1e-11),
            Err(LemError::MissingField { need: 4, got: 3 })
        ));
    }

    #[test]
    fn loss_is_zero_for_perfect_consistent_outputs() {
        let dt = 2e-11;
        let t = llg_traj(12, dt);
        let norm = vec![MinMax { min: -3.0e4, max: 3.0e4 }; 2];
        let flat: Vec<f64> = t.iter().flat_map(|p| [norm[0].apply(p[0]), norm[1].apply(p[1])]).collect();
        let (x, y) = flat.split_at(8);
        let out = WindowOutputs { recon: x.to_vec(), pred: y.to_vec() };
        let s = spec();
        let ctx = PhysicsContext { spec: &s, norm: &norm, dt_ml: dt };
        let l = total_loss(&out, x, y, 2, 1e3, Some(&ctx)).unwrap();
        assert_eq!(l.recon, 0.0);
        assert_eq!(l.pred, 0.0);
        assert!(l.phys < 1e-20, "{}", l.phys);
    }

    #[test]
    fn lambda_enters_linearly() {
        let m = toy_model(4, 2);
        let x = [0.1, 0.9, 0.5, 0.2, 0.8, 0.3];
        let t = [0.4, 0.6, 0.5, 0.5];
        let s = spec();
        let ctx = PhysicsContext { spec: &s, norm: &m.norm, dt_ml: m.dt_ml };
        let out = m.forward(&x, 2).unwrap();
        let l0 = total_loss(&out, &x, &t, 2, 0.0, Some(&ctx)).unwrap();
        let l1 = total_loss(&out, &x, &t, 2, 3.0, Some(&ctx)).unwrap();
        let l2 = total_loss(&out, &x, &t, 2, 6.0, Some(&ctx)).unwrap();
        assert_eq!(l0.total, l0.recon + l0.pred);
        assert!(((l2.total - l1.total) - 3.0 * l1.phys).abs() <= 1e-12 * l2.total);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = toy_model(4, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = spec();
        let norm = m.norm.clone();
        let ctx = PhysicsContext { spec: &s, norm: &norm, dt_ml: m.dt_ml };
        let lambda = 50.0;
        let (l, g) = m.loss_and_grad(&x, &t, lambda, Some(&ctx)).unwrap();
        assert!(l.phys * lambda > 0.1 * l.total, "physics term should matter: {l:?}");
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let i = rng.random_range(0..m.n_params());
            let v = m.theta[i];
            m.theta[i] = v + h;
            let lp = total_loss(&m.forward(&x, 4).unwrap(), &x, &t, 2, lambda, Some(&ctx)).unwrap().total;
            m.theta[i] = v - h;
            let lm = total_loss(&m.forward(&x, 4).unwrap(), &x, &t, 2, lambda, Some(&ctx)).unwrap().total;
            m.theta[i] = v;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn ringdown_toy_is_llg_consistent() {
        let toy = RingdownToy { n_traj: 3, len: 40, ..Default::default() };
        let d = macrospin_ringdown(&toy, 1).unwrap();
        assert!(d.trajs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        for t in &d.trajs {
            let phys: Vec<[f64; 2]> = t.chunks(2).map(|c| [d.norm[0].invert(c[0]), d.norm[1].invert(c[1])]).collect();
            let r = physics_residuals(&phys, None, d.physics.as_ref().unwrap(), d.dt_ml).unwrap();
            assert!(r.iter().all(|v| v[0].abs().max(v[1].abs()) / toy.physics.ms < 1e-10));
        }
    }

    #[test]
    fn training_is_deterministic_and_parallel_safe() {
        let toy = RingdownToy { n_traj: 4, len: 30, ..Default::default() };
        let data = macrospin_ringdown(&toy, 2).unwrap();
        let stage = [CurriculumStage { lr: 1e-3, pred_len: 5, batch: 4, lambda: 10.0, input_len: 10, epochs: 1 }];
        let run = |parallel| {
            let mut m = SurrogateModel::init(LemHyper { hidden: 6, channels: 2, dt_cell: 1.0 }, vec![], 0.0, 3);
            let opts = TrainOptions { parallel, chunk: 2, window_stride: 15, ..Default::default() };
            let r = train(&mut m, &data, &stage, &opts).unwrap();
            (m, r)
        };
        let (a, ra) = run(false);
        let (b, rb) = run(false);
        let (c, rc) = run(true);
        assert_eq!(ra.history[0].epochs.len(), 1);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(a, c);
        assert_eq!(ra, rc);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = toy_model(3, 8);
        let ck = Checkpoint::from_model(&m, Some(spec()), CurriculumPosition { stage: 1, epoch: 7 });
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
        assert!(ck.tensors.iter().any(|t| t.name == "decoder.1.Wy" && t.shape == vec![3, 3]));
        let mut bad = back.clone();
        bad.tensors[0].shape = vec![2, 2];
        assert!(bad.to_model().is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let toy = RingdownToy { n_traj: 2, len: 20, ..Default::default() };
        let data = macrospin_ringdown(&toy, 2).unwrap();
        let mut m = SurrogateModel::init(LemHyper { hidden: 3, channels: 2, dt_cell: 1.0 }, vec![], 0.0, 3);
        m.theta[0] = f64::NAN;
        let stage = [CurriculumStage { lr: 1e-3, pred_len: 4, batch: 2, lambda: 0.0, input_len: 4, epochs: 1 }];
        let e = train(&mut m, &data, &stage, &TrainOptions::default()).unwrap_err();
        assert!(matches!(e, LemError::NonFinite { stage: 0, epoch: 0, step: 0 }));
    }
}
