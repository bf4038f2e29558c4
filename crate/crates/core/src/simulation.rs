//! Time loop coupling the EM and LLG updates, probe recording, snapshots,
//! bias sweeps and dataset curation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{cell_volume, cfl_timestep, BoundarySpec, EmError, EmOperator, SourceSpec};
use crate::grid::{Component, FieldKind, FieldLattice, GridError, GridSpec, MaterialMap};
use crate::llg::{IterationStats, LlgError, LlgIterationParams, LlgSolver};
use crate::scalar::{lit, Real};
use crate::signal::{fft_magnitude_padded, minmax_params, MinMax, SignalError, Window};
use crate::units::{MaterialCell, MaterialError};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("step {step}: {source}")]
    Step { step: usize, source: LlgError },
    #[error("bias {bias:e} A/m: {source}")]
    AtBias { bias: f64, source: Box<SimError> },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("curation: {0}")]
    Curation(String),
}

/// Half-open cell box `lo..hi` filled with one material.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub cell: MaterialCell<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub component: Component,
    pub at: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub grid: GridSpec<T>,
    pub background: MaterialCell<T>,
    /// Applied in order; later regions overwrite earlier ones.
    pub regions: Vec<Region<T>>,
    pub source: SourceSpec<T>,
    pub boundaries: BoundarySpec,
    pub cfl_factor: T,
    pub t_end: T,
    pub probes: Vec<ProbeSpec>,
    /// Unit direction of the static bias; magnitudes come from `bias_sweep`.
    pub bias_direction: Vec3<T>,
    /// A/m.
    pub bias_sweep: Vec<T>,
    pub llg: LlgIterationParams<T>,
    /// Record a probe sample every this many steps.
    pub record_every: usize,
    /// Probe index used for sweep spectra.
    pub sweep_probe: usize,
    pub window: Window,
    /// FFT length for sweep spectra (0: record length).
    pub n_fft: usize,
}

impl<T: Real> SimConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        self.background.validate()?;
        for r in &self.regions {
            r.cell.validate()?;
            if (0..3).any(|a| r.lo[a] >= r.hi[a]) {
                return Err(SimError::Config(format!("empty region {:?}..{:?}", r.lo, r.hi)));
            }
        }
        self.source.validate(&self.grid)?;
        if !(self.cfl_factor > T::zero() && self.cfl_factor <= T::one()) {
            return Err(SimError::Config("cfl factor must lie in (0, 1]".into()));
        }
        if !(self.t_end > T::zero()) {
            return Err(SimError::Config("t_end must be positive".into()));
        }
        if self.bias_sweep.is_empty() {
            return Err(SimError::Config("bias sweep is empty".into()));
        }
        if self.bias_sweep.iter().any(|b| !(*b >= T::zero())) {
            return Err(SimError::Config("bias magnitudes must be non-negative".into()));
        }
        if !(self.bias_direction.norm_sq() > T::zero()) {
            return Err(SimError::Config("bias direction is zero".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::Config("record_every must be at least 1".into()));
        }
        for p in &self.probes {
            let ext = self.grid.extent(p.component);
            if (0..3).any(|a| p.at[a] >= ext[a]) {
                return Err(SimError::Config(format!(
                    "probe {} at {:?} outside extent {:?}",
                    p.component.name(),
                    p.at,
                    ext
                )));
            }
        }
        if !self.probes.is_empty() && self.sweep_probe >= self.probes.len() {
            return Err(SimError::Config("sweep probe index out of range".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> Result<T, SimError> {
        Ok(cfl_timestep(&self.grid, self.cfl_factor)?)
    }

    pub fn n_steps(&self) -> Result<usize, SimError> {
        let n = (self.t_end / self.dt()?).ceil();
        n.to_usize().ok_or_else(|| SimError::Config("step count overflows".into()))
    }

    pub fn materials(&self, bias: T) -> MaterialMap<T> {
        let mut m = MaterialMap::uniform(self.grid.cells(), self.background);
        for r in &self.regions {
            m.fill_box(r.lo, r.hi, r.cell);
        }
        m.set_bias(self.bias_direction.with_norm(bias));
        m
    }

    /// Bytes held by field and material arrays.
    pub fn memory_estimate(&self) -> usize {
        let nodes: usize = self.grid.node_dims().iter().product();
        let s = std::mem::size_of::<T>();
        // E, H, ca, cb, weights, eps per component plus masks
        nodes * 3 * (8 * s + 2) + self.grid.n_cells() * (std::mem::size_of::<MaterialCell<T>>() + 3 * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries<T> {
    pub component: Component,
    pub at: [usize; 3],
    /// A/m.
    pub bias: T,
    /// Sample interval, s.
    pub dt: T,
    /// Time of the first sample, s.
    pub t0: T,
    pub samples: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics<T> {
    pub steps: usize,
    pub llg: IterationStats<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub step: usize,
    pub bias: T,
    pub lattice: FieldLattice<T>,
    pub probes: Vec<ProbeSeries<T>>,
    pub diagnostics: RunDiagnostics<T>,
}

impl<T: Real> Snapshot<T> {
    pub fn to_json(&self) -> Result<String, SimError> {
        serde_json::to_string(self).map_err(|e| SimError::Snapshot(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::Snapshot(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifact<T> {
    pub bias: T,
    pub probes: Vec<ProbeSeries<T>>,
    pub snapshot: Snapshot<T>,
    pub diagnostics: RunDiagnostics<T>,
}

pub struct Simulation<T> {
    pub config: SimConfig<T>,
    pub bias: T,
    pub lattice: FieldLattice<T>,
    pub op: EmOperator<T>,
    pub solver: LlgSolver<T>,
    pub step: usize,
    pub n_steps: usize,
    pub probes: Vec<ProbeSeries<T>>,
    pub diagnostics: RunDiagnostics<T>,
}

impl<T: Real> Simulation<T> {
    pub fn new(config: &SimConfig<T>, bias: T) -> Result<Self, SimError> {
        config.validate()?;
        let lattice = FieldLattice::allocate(config.grid, config.materials(bias))?;
        Self::from_lattice(config, bias, lattice, 0, None, RunDiagnostics::default())
    }

    fn from_lattice(
        config: &SimConfig<T>,
        bias: T,
        lattice: FieldLattice<T>,
        step: usize,
        probes: Option<Vec<ProbeSeries<T>>>,
        diagnostics: RunDiagnostics<T>,
    ) -> Result<Self, SimError> {
        let dt = config.dt()?;
        let op = EmOperator::new(&lattice, dt, config.boundaries);
        let solver = LlgSolver {
            params: config.llg,
            ..LlgSolver::default()
        };
        let every = T::from_usize(config.record_every).unwrap();
        let probes = probes.unwrap_or_else(|| {
            config
                .probes
                .iter()
                .map(|p| {
                    let t0 = match p.component.kind() {
                        FieldKind::E(_) => dt * every,
                        _ => dt * (every - lit(0.5)),
                    };
                    ProbeSeries {
                        component: p.component,
                        at: p.at,
                        bias,
                        dt: dt * every,
                        t0,
                        samples: Vec::new(),
                    }
                })
                .collect()
        });
        Ok(Self {
            n_steps: config.n_steps()?,
            config: config.clone(),
            bias,
            lattice,
            op,
            solver,
            step,
            probes,
            diagnostics,
        })
    }

    pub fn dt(&self) -> T {
        self.op.dt
    }

    /// Advances `H` (and `M` in magnetic cells) from `n − ½` to `n + ½`.
    fn half_step_h(&mut self) -> Result<(), SimError> {
        if !self.lattice.magnetic.is_empty() {
            let z = Vec3::zeros();
            let stats = self
                .solver
                .step_magnetic(&mut self.lattice, self.op.dt, (z, z))
                .map_err(|e| SimError::Step {
                    step: self.step,
                    source: e,
                })?;
            self.diagnostics.llg.merge(&stats);
        }
        self.op.update_h_nonmagnetic(&mut self.lattice);
        Ok(())
    }

    /// Advances `E` to `n + 1`, applies walls and records probes.
    fn finish_step(&mut self) -> Result<(), SimError> {
        let t_next = self.op.dt * T::from_usize(self.step + 1).unwrap();
        let drive = self.op.drive_terms(&self.lattice.spec, &self.config.source, t_next);
        self.op.update_e(&mut self.lattice, &drive);
        self.op.apply_boundaries(&mut self.lattice);
        self.step += 1;
        self.diagnostics.steps = self.step;
        if self.step % self.config.record_every == 0 {
            for p in &mut self.probes {
                let v = self.lattice.sample(p.component, p.at[0], p.at[1], p.at[2])?;
                p.samples.push(v);
            }
        }
        Ok(())
    }

    pub fn step_once(&mut self) -> Result<(), SimError> {
        self.half_step_h()?;
        self.finish_step()
    }

    pub fn advance(&mut self, steps: usize) -> Result<(), SimError> {
        for _ in 0..steps {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        let left = self.n_steps.saturating_sub(self.step);
        self.advance(left)
    }

    /// Discrete energy at integer steps: `Σ ½εE²V + ½μ0 H^{n−½}·H^{n+½} V −
    /// μ0 H0·M V`, one value per step taken.
    pub fn energy_trace(&mut self, steps: usize) -> Result<Vec<T>, SimError> {
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let h_prev = self.lattice.h.clone();
            self.half_step_h()?;
            let we = self.op.electric_energy(&self.lattice);
            let wh = self.op.magnetic_energy(&self.lattice.spec, &h_prev, &self.lattice.h);
            out.push(we + wh + self.zeeman_energy());
            self.finish_step()?;
        }
        Ok(out)
    }

    pub fn zeeman_energy(&self) -> T {
        let v = cell_volume(&self.lattice.spec);
        let mut s = T::zero();
        for &[i, j, k] in &self.lattice.magnetic {
            let c = self.lattice.spec.cell_index(i, j, k);
            s += self.lattice.materials.get(i, j, k).hbias.dot(self.lattice.m[c]);
        }
        -s * v * self.op.consts.mu0
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            step: self.step,
            bias: self.bias,
            lattice: self.lattice.clone(),
            probes: self.probes.clone(),
            diagnostics: self.diagnostics,
        }
    }

    pub fn restore(config: &SimConfig<T>, snap: Snapshot<T>) -> Result<Self, SimError> {
        config.validate()?;
        if snap.lattice.spec != config.grid {
            return Err(SimError::Snapshot("grid differs from config".into()));
        }
        if snap.probes.len() != config.probes.len() {
            return Err(SimError::Snapshot("probe set differs from config".into()));
        }
        Self::from_lattice(config, snap.bias, snap.lattice, snap.step, Some(snap.probes), snap.diagnostics)
    }

    pub fn into_artifact(self) -> RunArtifact<T> {
        let snapshot = self.snapshot();
        RunArtifact {
            bias: self.bias,
            probes: self.probes,
            diagnostics: self.diagnostics,
            snapshot,
        }
    }
}

/// Runs the configuration at one bias magnitude to `t_end`.
pub fn run<T: Real>(config: &SimConfig<T>, bias: T) -> Result<RunArtifact<T>, SimError> {
    let mut sim = Simulation::new(config, bias)?;
    sim.run_to_end()?;
    Ok(sim.into_artifact())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMap<T> {
    pub biases: Vec<T>,
    pub freqs: Vec<T>,
    /// Rows follow `biases`.
    pub mags: Vec<Vec<T>>,
}

/// One run per bias, each labelled; order follows `biases`. `threads = 1`
/// runs serially, `0` uses the global pool.
pub fn sweep_runs<T: Real>(
    config: &SimConfig<T>,
    biases: &[T],
    threads: usize,
) -> Vec<Result<RunArtifact<T>, SimError>> {
    let one = |&b: &T| {
        run(config, b).map_err(|e| SimError::AtBias {
            bias: b.to_f64_lossy(),
            source: Box::new(e),
        })
    };
    match threads {
        1 => biases.iter().map(one).collect(),
        0 => biases.par_iter().map(one).collect(),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| biases.par_iter().map(one).collect()),
            Err(_) => biases.iter().map(one).collect(),
        },
    }
}

/// FFT magnitude of the sweep probe of one run.
pub fn probe_spectrum<T: Real>(config: &SimConfig<T>, art: &RunArtifact<T>) -> Result<crate::signal::Spectrum<T>, SimError> {
    let p = art
        .probes
        .get(config.sweep_probe)
        .ok_or_else(|| SimError::Config("configuration has no probes".into()))?;
    let n_fft = if config.n_fft == 0 { p.samples.len() } else { config.n_fft.max(p.samples.len()) };
    Ok(fft_magnitude_padded(&p.samples, p.dt, config.window, n_fft)?)
}

/// Bias × frequency magnitude matrix over `config.bias_sweep`.
pub fn sweep<T: Real>(config: &SimConfig<T>, threads: usize) -> Result<SpectrumMap<T>, SimError> {
    config.validate()?;
    let runs = sweep_runs(config, &config.bias_sweep, threads);
    let mut map = SpectrumMap {
        biases: config.bias_sweep.clone(),
        freqs: vec![],
        mags: vec![],
    };
    for r in runs {
        let art = r?;
        let s = probe_spectrum(config, &art)?;
        if map.freqs.is_empty() {
            map.freqs = s.freqs;
        }
        map.mags.push(s.mags);
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedSeries<T> {
    pub component: Component,
    pub at: [usize; 3],
    pub bias: T,
    pub dt: T,
    pub t0: T,
    pub samples: Vec<T>,
    pub norm: MinMax<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedDataset<T> {
    pub truncate: usize,
    pub factor: usize,
    pub series: Vec<CuratedSeries<T>>,
}

/// `samples[truncate..]` keeping every `factor`-th value, with per-series
/// min-max parameters of the retained samples.
pub fn curate<T: Real>(s: &ProbeSeries<T>, truncate: usize, factor: usize) -> Result<CuratedSeries<T>, SimError> {
    if factor == 0 {
        return Err(SimError::Curation("downsampling factor must be at least 1".into()));
    }
    if s.samples.len() <= truncate {
        return Err(SimError::Curation(format!(
            "series of length {} has nothing left after truncating {truncate}",
            s.samples.len()
        )));
    }
    let kept: Vec<T> = s.samples[truncate..].iter().step_by(factor).copied().collect();
    let norm = if kept.len() == 1 {
        MinMax { min: kept[0], max: kept[0] }
    } else {
        minmax_params(&kept)?
    };
    Ok(CuratedSeries {
        component: s.component,
        at: s.at,
        bias: s.bias,
        dt: s.dt * T::from_usize(factor).unwrap(),
        t0: s.t0 + s.dt * T::from_usize(truncate).unwrap(),
        samples: kept,
        norm,
    })
}

pub fn export_dataset<T: Real>(
    series: &[ProbeSeries<T>],
    truncate: usize,
    factor: usize,
) -> Result<CuratedDataset<T>, SimError> {
    let series = series
        .iter()
        .map(|s| curate(s, truncate, factor))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CuratedDataset { truncate, factor, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{Boundary, SourceKind};

    pub(crate) fn tiny(nz: usize) -> SimConfig<f64> {
        SimConfig {
            grid: GridSpec::line_z(nz, 1e-5).unwrap(),
            background: MaterialCell::vacuum(),
            regions: vec![],
            source: SourceSpec {
                kind: SourceKind::ModifiedGaussian,
                f0: 15e9,
                tp: 2e-11,
                amplitude: 0.0,
                location: [0, 0, nz / 3],
                polarization: Vec3::new(1.0, 0.0, 0.0),
            },
            boundaries: BoundarySpec::uniform(Boundary::Pmc),
            cfl_factor: 0.9,
            t_end: 1e-11,
            probes: vec![
                ProbeSpec { component: Component::Ex, at: [0, 0, 1] },
                ProbeSpec { component: Component::Hy, at: [0, 0, nz / 2] },
            ],
            bias_direction: Vec3::new(1.0, 0.0, 0.0),
            bias_sweep: vec![1e5],
            llg: LlgIterationParams::default(),
            record_every: 1,
            sweep_probe: 0,
            window: Window::None,
            n_fft: 0,
        }
    }

    #[test]
    fn silent_vacuum() {
        let art = run(&tiny(40), 1e5).unwrap();
        assert!(!art.probes[0].samples.is_empty());
        assert!(art.probes.iter().all(|p| p.samples.iter().all(|&v| v == 0.0)));
        assert_eq!(art.probes[0].samples.len(), art.diagnostics.steps);
    }

    #[test]
    fn rejects_bad_probe() {
        let mut c = tiny(40);
        c.probes.push(ProbeSpec { component: Component::Ex, at: [0, 0, 41] });
        assert!(matches!(c.validate(), Err(SimError::Config(_))));
        let mut c = tiny(40);
        c.bias_sweep.clear();
        assert!(c.validate().is_err());
        let mut c = tiny(40);
        c.t_end = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn probe_timing() {
        let mut c = tiny(40);
        c.record_every = 3;
        let sim = Simulation::new(&c, 1e5).unwrap();
        let dt = sim.dt();
        assert_eq!(sim.probes[0].t0, 3.0 * dt);
        assert_eq!(sim.probes[1].t0, 2.5 * dt);
        assert_eq!(sim.probes[0].dt, 3.0 * dt);
    }

    fn ramp(n: usize) -> ProbeSeries<f64> {
        ProbeSeries {
            component: Component::Mx,
            at: [0, 0, 0],
            bias: 0.0,
            dt: 1e-15,
            t0: 0.0,
            samples: (0..n).map(|v| v as f64).collect(),
        }
    }

    #[test]
    fn curation_arithmetic() {
        let d = curate(&ramp(1160), 160, 1000).unwrap();
        assert_eq!(d.samples, vec![160.0]);
        let d = curate(&ramp(50), 0, 1).unwrap();
        assert_eq!(d.samples, ramp(50).samples);
        assert_eq!((d.norm.min, d.norm.max), (0.0, 49.0));
        let d = curate(&ramp(5000), 160, 1000).unwrap();
        assert_eq!(d.samples[0], 160.0);
        assert_eq!(d.samples[1], 1160.0);
        assert!((d.dt - 1e-12).abs() < 1e-27);
        assert!(curate(&ramp(160), 160, 1).is_err());
        assert!(curate(&ramp(10), 0, 0).is_err());
    }
}
