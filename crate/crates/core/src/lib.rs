//! Simulation of a deterministic time-bin entanglement source built on a
//! Rydberg-blockaded atomic ensemble: state space, pulse protocol, photon
//! optics and detection, Monte Carlo sampling, and the estimators used to
//! read out the experiment.

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod hilbert;
pub mod montecarlo;
pub mod optics;
pub mod protocol;
pub mod scenario;

pub use analysis::{BellResult, ChshAngles, EigenVisibility, FringeFit, RabiFit};
pub use calibration::{CalibrationGrid, CalibrationPoint, CalibrationResult, Prediction, PAPER_CALIBRATED};
pub use error::{Error, Result};
pub use hilbert::{AtomLevel, DensityOperator, KrausChannel, PhotonMode, PureState, Subsystem, C64};
pub use montecarlo::{CountsTable, ScanSpec, ScanVariable, SeedPolicy, SettingsCounts, ShotRecord, DEFAULT_SHOTS};
pub use optics::{
    AnalyzerSetting, DarkCountProb, DetectorArrangement, DetectorModel, LossChain, Outcome, OutcomeDistribution,
    PortConvention,
};
pub use protocol::{NoiseConfig, Phase, ProtocolConfig, PulseSpec, Register, RetrievalSpec, RydbergLevel, Variant};
pub use scenario::{Derived, Preset, ScenarioKind, ScenarioOutput, ScenarioSpec};
