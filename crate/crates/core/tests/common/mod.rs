#![allow(dead_code)]

use mpsim::em::{Boundary, BoundarySpec, SourceKind, SourceSpec};
use mpsim::grid::{Component, GridSpec};
use mpsim::llg::LlgIterationParams;
use mpsim::signal::Window;
use mpsim::simulation::{ProbeSpec, Region, SimConfig};
use mpsim::units::MaterialCell;
use mpsim::Vec3;

pub use mpsim::units::{C0, MU0};

pub const ETA0: f64 = MU0 * C0;

/// Source-free line along z with Ex probes at node 1.
pub fn line(nz: usize, dz: f64, walls: Boundary) -> SimConfig<f64> {
    SimConfig {
        grid: GridSpec::line_z(nz, dz).unwrap(),
        background: MaterialCell::vacuum(),
        regions: vec![],
        source: SourceSpec {
            kind: SourceKind::ModifiedGaussian,
            f0: 15e9,
            tp: 2e-11,
            amplitude: 0.0,
            location: [0, 0, nz / 4],
            polarization: Vec3::new(1.0, 0.0, 0.0),
        },
        boundaries: BoundarySpec::uniform(walls),
        cfl_factor: 0.99,
        t_end: 1e-12,
        probes: vec![ProbeSpec { component: Component::Ex, at: [0, 0, 1] }],
        bias_direction: Vec3::new(1.0, 0.0, 0.0),
        bias_sweep: vec![0.0],
        llg: LlgIterationParams::default(),
        record_every: 1,
        sweep_probe: 0,
        window: Window::None,
        n_fft: 0,
    }
}

/// Small driven cavity with a magnet slab.
pub fn small_cavity(nz: usize, t_end: f64) -> SimConfig<f64> {
    let mut c = line(nz, 7e-6, Boundary::Pmc);
    c.background = MaterialCell::dielectric(7.1, 1e-3);
    c.regions.push(Region {
        lo: [0, 0, nz / 2],
        hi: [1, 1, nz / 2 + 2],
        cell: MaterialCell::magnet(9.7e5, 0.003, 1.0, 1e-3),
    });
    c.source.amplitude = 1e3;
    c.source.f0 = 16e9;
    c.source.tp = 6.25e-11;
    c.source.location = [0, 0, 5];
    c.t_end = t_end;
    c.bias_sweep = vec![1.43e5];
    c.probes.push(ProbeSpec { component: Component::Mz, at: [0, 0, nz / 2] });
    c.probes.push(ProbeSpec { component: Component::Hy, at: [0, 0, nz / 3] });
    c
}

pub fn gaussian(z: f64, z0: f64, w: f64) -> f64 {
    (-((z - z0) / w).powi(2) / 2.0).exp()
}
