//! Named experiments: the Rabi scan, the preparation check, the entangled
//! correlation scan, the Bell test and the efficiency budget.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    chsh_from_counts, eigenbasis_visibility, fidelity_bound_with_errors, fit_fringe, fit_rabi,
    BellResult, ChshAngles, EigenVisibility, FringeFit, RabiFit,
};
use crate::calibration;
use crate::error::{Error, Result};
use crate::montecarlo::{detected_state, sample_point, scan, CountsTable, ScanSpec, ScanVariable, SeedPolicy};
use crate::optics::{AnalyzerSetting, DetectorArrangement, DetectorModel, LossChain, Outcome};
use crate::protocol::{NoiseConfig, Phase, ProtocolConfig, Register, RydbergLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RabiScan,
    PrepVerify,
    EntangleScan,
    Chsh,
    EfficiencyBudget,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::RabiScan,
        ScenarioKind::PrepVerify,
        ScenarioKind::EntangleScan,
        ScenarioKind::Chsh,
        ScenarioKind::EfficiencyBudget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::RabiScan => "rabi-scan",
            ScenarioKind::PrepVerify => "prep-verify",
            ScenarioKind::EntangleScan => "entangle-scan",
            ScenarioKind::Chsh => "chsh",
            ScenarioKind::EfficiencyBudget => "efficiency-budget",
        }
    }

    /// Grid used when the configuration gives none.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            ScenarioKind::RabiScan => (0..=40).map(|i| 10.0 * i as f64).collect(),
            ScenarioKind::PrepVerify | ScenarioKind::EntangleScan => phase_grid(24),
            ScenarioKind::Chsh | ScenarioKind::EfficiencyBudget => Vec::new(),
        }
    }

    /// Which detector layout the experiment uses.
    pub fn arrangement(self) -> DetectorArrangement {
        match self {
            ScenarioKind::Chsh => DetectorArrangement::FourDetector,
            _ => DetectorArrangement::Multiplexed,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario `{s}`")))
    }
}

/// `n` evenly spaced phases on `[0, 2π)`.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Ideal,
    PaperCalibrated,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Ideal => "ideal",
            Preset::PaperCalibrated => "paper-calibrated",
        }
    }

    pub fn noise(self) -> NoiseConfig {
        match self {
            Preset::Ideal => NoiseConfig::ideal(),
            Preset::PaperCalibrated => calibration::PAPER_CALIBRATED.noise(),
        }
    }

    pub fn losses(self) -> LossChain {
        match self {
            Preset::Ideal => LossChain::lossless(),
            Preset::PaperCalibrated => LossChain::experimental(),
        }
    }

    pub fn detector(self) -> DetectorModel {
        match self {
            Preset::Ideal => DetectorModel::ideal(),
            Preset::PaperCalibrated => calibration::PAPER_CALIBRATED.detector(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Preset::Ideal, Preset::PaperCalibrated]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown noise preset `{s}`")))
    }
}

/// Everything a scenario run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub noise: NoiseConfig,
    pub losses: LossChain,
    pub detector: DetectorModel,
    /// Per grid point and settings pair.
    pub shots: u64,
    pub grid: Vec<f64>,
    pub chsh_angles: ChshAngles,
    /// Internal phase ψ of the photon pair, set through the last patch pulse.
    pub psi: f64,
}

impl ScenarioSpec {
    pub fn from_preset(kind: ScenarioKind, preset: Preset, shots: u64) -> Self {
        ScenarioSpec {
            kind,
            noise: preset.noise(),
            losses: preset.losses(),
            detector: preset.detector(),
            shots,
            grid: kind.default_grid(),
            chsh_angles: ChshAngles::CANONICAL,
            psi: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.losses.validate()?;
        self.detector.validate()?;
        if self.shots == 0 {
            return Err(Error::config("shots must be at least 1"));
        }
        if self.grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("grid values must be finite"));
        }
        match self.kind {
            ScenarioKind::RabiScan | ScenarioKind::PrepVerify | ScenarioKind::EntangleScan
                if self.grid.is_empty() =>
            {
                Err(Error::config(format!("{} needs a nonempty grid", self.kind)))
            }
            ScenarioKind::RabiScan if self.grid.iter().any(|&t| t < 0.0) => {
                Err(Error::config("pulse durations must be nonnegative"))
            }
            _ => Ok(()),
        }
    }

    fn detector_for_run(&self) -> DetectorModel {
        self.detector.clone().with_arrangement(self.kind.arrangement())
    }

    pub(crate) fn protocol(&self, base: ProtocolConfig) -> ProtocolConfig {
        base.with_noise(self.noise.clone())
            .with_retrieval_efficiency(Phase::Entangle, self.losses.retrieval)
            .with_retrieval_efficiency(Phase::Readout, self.losses.retrieval)
    }
}

/// Full protocol producing `(|E,E'⟩ + e^{iψ}|L,L'⟩)/√2` when ideal.
pub fn entangling_protocol(psi: f64) -> ProtocolConfig {
    // The final r2 patch is the last pulse; its phase carries ψ.
    ProtocolConfig::full().with_pulse_phase(3, psi)
}

/// Settings measured at every point of the entangled scan: eigenbasis on
/// both photons, and the superposition basis with photon 2's phase scanned.
pub fn entangle_settings(phi: f64) -> [(AnalyzerSetting, AnalyzerSetting); 2] {
    [
        (AnalyzerSetting::eigenbasis(Register::One), AnalyzerSetting::eigenbasis(Register::Two)),
        (AnalyzerSetting::superposition(Register::One, 0.0), AnalyzerSetting::superposition(Register::Two, phi)),
    ]
}

pub fn chsh_settings(angles: &ChshAngles) -> Vec<(AnalyzerSetting, AnalyzerSetting)> {
    angles
        .pairs()
        .iter()
        .map(|&(a, b)| (AnalyzerSetting::from_degrees(Register::One, a), AnalyzerSetting::from_degrees(Register::Two, b)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiLevelFit {
    pub level: RydbergLevel,
    /// (duration ns, click fraction on photon 2)
    pub series: Vec<(f64, f64)>,
    pub fit: RabiFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    /// Fraction of shots with a photon-2 click.
    pub click_probability: f64,
    /// Click probability with the dark-click background removed.
    pub detection_probability: f64,
    pub sigma: f64,
    /// Product of the loss chain.
    pub expected: f64,
    pub factors: Vec<(String, f64)>,
}

/// Quantities derived from the counts, per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Derived {
    RabiScan { fits: Vec<RabiLevelFit> },
    PrepVerify { fringe: FringeFit },
    EntangleScan { v1: EigenVisibility, v2: FringeFit, fidelity: f64, fidelity_err: f64 },
    Chsh { bell: BellResult },
    EfficiencyBudget { efficiency: EfficiencyResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutput {
    pub counts: Vec<CountsTable>,
    pub derived: Derived,
}

fn click_fraction(table: &CountsTable) -> f64 {
    let e = &table.entries[0];
    let clicks = e.clicks(Register::Two, Outcome::PlusPort) + e.clicks(Register::Two, Outcome::MinusPort);
    clicks as f64 / e.shots as f64
}

fn run_rabi(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    let settings = vec![(AnalyzerSetting::eigenbasis(Register::One), AnalyzerSetting::eigenbasis(Register::Two))];
    let mut counts = Vec::new();
    let mut fits = Vec::new();
    for (k, level) in [RydbergLevel::R1, RydbergLevel::R2].into_iter().enumerate() {
        let scan_spec = ScanSpec {
            variable: ScanVariable::PulseDuration,
            grid: spec.grid.clone(),
            settings: settings.clone(),
            phase_register: Register::Two,
            losses: spec.losses.clone(),
            detector: spec.detector_for_run(),
            shots_per_point: spec.shots,
            first_point: (k * spec.grid.len()) as u64,
        };
        let tables = scan(&spec.protocol(ProtocolConfig::rabi_probe(level, 0.0)), &scan_spec, seeds)?;
        let series: Vec<(f64, f64)> = spec.grid.iter().copied().zip(tables.iter().map(click_fraction)).collect();
        let fit = fit_rabi(&series, spec.shots)?;
        fits.push(RabiLevelFit { level, series, fit });
        counts.extend(tables);
    }
    Ok(ScenarioOutput { counts, derived: Derived::RabiScan { fits } })
}

fn run_prep_verify(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    let scan_spec = ScanSpec {
        variable: ScanVariable::AnalyzerPhase,
        grid: spec.grid.clone(),
        settings: vec![(AnalyzerSetting::eigenbasis(Register::One), AnalyzerSetting::superposition(Register::Two, 0.0))],
        phase_register: Register::Two,
        losses: spec.losses.clone(),
        detector: spec.detector_for_run(),
        shots_per_point: spec.shots,
        first_point: 0,
    };
    let counts = scan(&spec.protocol(ProtocolConfig::skip_entangle_phase()), &scan_spec, seeds)?;
    let series: Vec<(f64, u64, u64)> = counts
        .iter()
        .zip(&spec.grid)
        .map(|(t, &phi)| {
            let e = &t.entries[0];
            (phi, e.clicks(Register::Two, Outcome::PlusPort), e.clicks(Register::Two, Outcome::MinusPort))
        })
        .collect();
    let fringe = fit_fringe(&series)?;
    Ok(ScenarioOutput { counts, derived: Derived::PrepVerify { fringe } })
}

fn run_entangle_scan(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    let scan_spec = ScanSpec {
        variable: ScanVariable::AnalyzerPhase,
        grid: spec.grid.clone(),
        settings: entangle_settings(0.0).to_vec(),
        phase_register: Register::Two,
        losses: spec.losses.clone(),
        detector: spec.detector_for_run(),
        shots_per_point: spec.shots,
        first_point: 0,
    };
    let counts = scan(&spec.protocol(entangling_protocol(spec.psi)), &scan_spec, seeds)?;
    let eigen: Vec<(u64, u64)> = counts.iter().map(|t| (t.entries[0].parallel(), t.entries[0].cross())).collect();
    let v1 = eigenbasis_visibility(&eigen)?;
    let fringe: Vec<(f64, u64, u64)> = counts
        .iter()
        .zip(&spec.grid)
        .map(|(t, &phi)| (phi, t.entries[1].parallel(), t.entries[1].cross()))
        .collect();
    let v2 = fit_fringe(&fringe)?;
    let (fidelity, fidelity_err) =
        fidelity_bound_with_errors(v1.direct, v1.direct_err, v2.visibility, v2.visibility_err)?;
    Ok(ScenarioOutput { counts, derived: Derived::EntangleScan { v1, v2, fidelity, fidelity_err } })
}

fn run_chsh(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    let rho = detected_state(&spec.protocol(entangling_protocol(spec.psi)), &spec.losses)?;
    let table = sample_point(&rho, &chsh_settings(&spec.chsh_angles), &spec.detector_for_run(), spec.shots, seeds, 0, None)?;
    let bell = chsh_from_counts(&table, &spec.chsh_angles)?;
    Ok(ScenarioOutput { counts: vec![table], derived: Derived::Chsh { bell } })
}

fn run_efficiency(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    let config = spec.protocol(ProtocolConfig::rabi_probe(RydbergLevel::R1, std::f64::consts::PI));
    let rho = detected_state(&config, &spec.losses)?;
    let det = spec.detector_for_run();
    let settings = [(AnalyzerSetting::eigenbasis(Register::One), AnalyzerSetting::eigenbasis(Register::Two))];
    let table = sample_point(&rho, &settings, &det, spec.shots, seeds, 0, None)?;
    let click = click_fraction(&table);
    let dark: f64 = [Outcome::PlusPort, Outcome::MinusPort]
        .iter()
        .filter_map(|&o| det.detector(Register::Two, o))
        .map(|d| det.dark_count_prob.for_detector(d))
        .sum();
    let detection = (click - dark) / (1.0 - dark);
    let sigma = (click * (1.0 - click) / spec.shots as f64).sqrt() / (1.0 - dark);
    let efficiency = EfficiencyResult {
        click_probability: click,
        detection_probability: detection,
        sigma,
        expected: spec.losses.end_to_end(),
        factors: spec.losses.factors().iter().map(|(n, v)| (n.to_string(), *v)).collect(),
    };
    Ok(ScenarioOutput { counts: vec![table], derived: Derived::EfficiencyBudget { efficiency } })
}

/// Deterministic in `(spec, seeds)`.
pub fn run_scenario(spec: &ScenarioSpec, seeds: &SeedPolicy) -> Result<ScenarioOutput> {
    spec.validate()?;
    match spec.kind {
        ScenarioKind::RabiScan => run_rabi(spec, seeds),
        ScenarioKind::PrepVerify => run_prep_verify(spec, seeds),
        ScenarioKind::EntangleScan => run_entangle_scan(spec, seeds),
        ScenarioKind::Chsh => run_chsh(spec, seeds),
        ScenarioKind::EfficiencyBudget => run_efficiency(spec, seeds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("bell".parse::<ScenarioKind>().is_err());
        assert_eq!("paper-calibrated".parse::<Preset>().unwrap(), Preset::PaperCalibrated);
        assert!("noisy".parse::<Preset>().is_err());
    }

    #[test]
    fn entangling_protocol_sets_psi() {
        let cfg = entangling_protocol(1.25);
        assert!((cfg.branch_phase() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn ideal_prep_verify_has_full_visibility() {
        let spec = ScenarioSpec::from_preset(ScenarioKind::PrepVerify, Preset::Ideal, 20_000);
        let out = run_scenario(&spec, &SeedPolicy::new(4)).unwrap();
        let Derived::PrepVerify { fringe } = out.derived else { panic!() };
        assert!(fringe.visibility > 0.995, "{fringe:?}");
    }

    #[test]
    fn ideal_rabi_scan_finds_pi_times() {
        let spec = ScenarioSpec::from_preset(ScenarioKind::RabiScan, Preset::Ideal, 20_000);
        let out = run_scenario(&spec, &SeedPolicy::new(4)).unwrap();
        let Derived::RabiScan { fits } = out.derived else { panic!() };
        assert_eq!(out.counts.len(), 2 * spec.grid.len());
        assert!((fits[0].fit.pi_time - 92.95).abs() < 0.5, "{:?}", fits[0].fit);
        assert!((fits[1].fit.pi_time - 92.18).abs() < 0.5, "{:?}", fits[1].fit);
    }

    #[test]
    fn empty_grid_is_a_config_error() {
        let mut spec = ScenarioSpec::from_preset(ScenarioKind::EntangleScan, Preset::Ideal, 10);
        spec.grid.clear();
        assert!(matches!(run_scenario(&spec, &SeedPolicy::new(0)), Err(Error::Config(_))));
    }
}
