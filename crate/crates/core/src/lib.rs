pub mod config;
pub mod em;
pub mod grid;
pub mod io;
pub mod lem;
pub mod llg;
pub mod oracle;
pub mod scalar;
pub mod signal;
pub mod simulation;
pub mod units;
pub mod vec3;

pub use scalar::{Arith, Dual, Real};
pub use vec3::Vec3;

/// `f64` instantiations of the generic types.
pub mod f64 {
    use super::*;

    pub type Vec3 = vec3::Vec3<f64>;
    pub type PhysicalConstants = units::PhysicalConstants<f64>;
    pub type MaterialCell = units::MaterialCell<f64>;
    pub type GridSpec = grid::GridSpec<f64>;
    pub type MaterialMap = grid::MaterialMap<f64>;
    pub type FieldLattice = grid::FieldLattice<f64>;
    pub type SourceSpec = em::SourceSpec<f64>;
    pub type EmOperator = em::EmOperator<f64>;
    pub type LlgSolver = llg::LlgSolver<f64>;
    pub type CellState = llg::CellState<f64>;
    pub type SimConfig = simulation::SimConfig<f64>;
    pub type Simulation = simulation::Simulation<f64>;
    pub type ProbeSeries = simulation::ProbeSeries<f64>;
    pub type Snapshot = simulation::Snapshot<f64>;
    pub type SpectrumMap = simulation::SpectrumMap<f64>;
    pub type CuratedDataset = simulation::CuratedDataset<f64>;
    pub type CavityModel1D = oracle::CavityModel1D<f64>;
    pub type Susceptibility = oracle::Susceptibility<f64>;
    pub type FloquetParams = oracle::FloquetParams<f64>;
    pub type FloquetResult = oracle::FloquetResult<f64>;
    pub type Spectrum = signal::Spectrum<f64>;
    pub type ModeEstimate = signal::ModeEstimate<f64>;
    pub type SurrogateModel = lem::SurrogateModel<f64>;
    pub type SequenceSet = lem::SequenceSet<f64>;
    pub type Checkpoint = lem::Checkpoint<f64>;
}
