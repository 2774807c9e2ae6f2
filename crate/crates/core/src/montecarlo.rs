//! Shot-by-shot sampling of detector records and coincidence accumulation.
//!
//! Randomness is addressed, not consumed: every shot owns a fixed slice of
//! a ChaCha8 keystream.
//!
//! ```text
//! key    = ChaCha8Rng::seed_from_u64(master_seed)
//! stream = point index
//! words  = [4·shot, 4·shot + 4)      (two u64 draws per shot)
//! ```
//!
//! Shot `n` at grid point `p` therefore sees the same numbers no matter how
//! shots are split across chunks or threads, and per-chunk counts are merged
//! by integer addition.

use std::f64::consts::{PI, TAU};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::DensityOperator;
use crate::optics::{
    apply_losses, joint_click_distribution, AnalyzerSetting, DetectorModel, LossChain, Outcome,
    OutcomeDistribution,
};
use crate::protocol::{run_protocol, ProtocolConfig, Register, Step, Variant};

const WORDS_PER_SHOT: u128 = 4;
const CHUNK_SHOTS: u64 = 1 << 15;

/// Default shots per grid point or settings pair.
pub const DEFAULT_SHOTS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        SeedPolicy { master_seed }
    }

    /// Generator positioned at the first word of `shot` on `point`'s stream.
    pub fn substream(&self, point: u64, shot: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(point);
        rng.set_word_pos(shot as u128 * WORDS_PER_SHOT);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub settings_index: usize,
    pub outcome: (Outcome, Outcome),
    /// Register 2's click came from an afterpulse of register 1's detector.
    pub afterpulse: bool,
}

/// Counts for one settings pair at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsCounts {
    pub settings: (AnalyzerSetting, AnalyzerSetting),
    /// `counts[a][b]`, indexed by [`Outcome::index`].
    pub counts: [[u64; 3]; 3],
    pub shots: u64,
    pub afterpulses: u64,
}

impl SettingsCounts {
    pub fn count(&self, a: Outcome, b: Outcome) -> u64 {
        self.counts[a.index()][b.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Click-click coincidences with equal labels.
    pub fn parallel(&self) -> u64 {
        self.count(Outcome::PlusPort, Outcome::PlusPort) + self.count(Outcome::MinusPort, Outcome::MinusPort)
    }

    /// Click-click coincidences with opposite labels.
    pub fn cross(&self) -> u64 {
        self.count(Outcome::PlusPort, Outcome::MinusPort) + self.count(Outcome::MinusPort, Outcome::PlusPort)
    }

    pub fn clicks(&self, reg: Register, outcome: Outcome) -> u64 {
        Outcome::ALL
            .iter()
            .map(|&o| match reg {
                Register::One => self.count(outcome, o),
                Register::Two => self.count(o, outcome),
            })
            .sum()
    }
}

/// All counts collected at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub point_index: u64,
    pub grid_value: Option<f64>,
    pub entries: Vec<SettingsCounts>,
}

impl CountsTable {
    pub fn total_shots(&self) -> u64 {
        self.entries.iter().map(|e| e.shots).sum()
    }

    pub const CSV_HEADER: &'static str =
        "point,grid_value,settings,theta1,phi1,theta2,phi2,outcome1,outcome2,count";

    /// One line per (settings, outcome pair); no header.
    pub fn write_csv_rows(&self, out: &mut String) {
        use std::fmt::Write;
        let grid = self.grid_value.map(|g| format!("{g:.12e}")).unwrap_or_default();
        for (k, e) in self.entries.iter().enumerate() {
            let (s1, s2) = e.settings;
            for a in Outcome::ALL {
                for b in Outcome::ALL {
                    writeln!(
                        out,
                        "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
                        self.point_index,
                        grid,
                        k,
                        s1.theta,
                        s1.phi,
                        s2.theta,
                        s2.phi,
                        a.as_str(),
                        b.as_str(),
                        e.count(a, b)
                    )
                    .expect("writing to String");
                }
            }
        }
    }
}

/// Serializes tables to the delimited counts format, header included.
pub fn counts_csv(tables: &[CountsTable]) -> String {
    let mut s = String::from(CountsTable::CSV_HEADER);
    s.push('\n');
    for t in tables {
        t.write_csv_rows(&mut s);
    }
    s
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

struct Sampler {
    cumulative: [f64; 9],
    afterpulse: f64,
}

impl Sampler {
    fn new(dist: &OutcomeDistribution) -> Self {
        let mut cumulative = [0.0; 9];
        let mut acc = 0.0;
        for (i, c) in cumulative.iter_mut().enumerate() {
            acc += dist.probs[i / 3][i % 3];
            *c = acc;
        }
        Sampler { cumulative, afterpulse: dist.afterpulse_prob }
    }

    /// Consumes exactly two u64 draws.
    fn shot(&self, rng: &mut ChaCha8Rng) -> ((Outcome, Outcome), bool) {
        let u = unit_f64(rng) * self.cumulative[8];
        let cell = self.cumulative.iter().position(|&c| u < c).unwrap_or(8);
        let (a, mut b) = (Outcome::ALL[cell / 3], Outcome::ALL[cell % 3]);
        let v = unit_f64(rng);
        let mut after = false;
        // Multiplexed detectors record the same label for both registers.
        if a.is_click() && b == Outcome::NoClick && v < self.afterpulse {
            b = a;
            after = true;
        }
        ((a, b), after)
    }
}

fn check_distribution(dist: &OutcomeDistribution) -> Result<()> {
    if dist.probs.iter().flatten().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidState("outcome probabilities must be finite and nonnegative".into()));
    }
    let total = dist.total();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("outcome probabilities sum to {total}")));
    }
    Ok(())
}

/// Draws `shots` records from `dist`, shots `shot_offset..shot_offset+shots`
/// on stream `point`. Intended for inspection; [`sample_counts`] is the
/// bulk path and agrees with it shot for shot.
pub fn sample_records(
    dist: &OutcomeDistribution,
    shots: u64,
    seeds: &SeedPolicy,
    point: u64,
    shot_offset: u64,
    settings_index: usize,
) -> Result<Vec<ShotRecord>> {
    check_distribution(dist)?;
    let sampler = Sampler::new(dist);
    let mut rng = seeds.substream(point, shot_offset);
    Ok((0..shots)
        .map(|i| {
            let (outcome, afterpulse) = sampler.shot(&mut rng);
            ShotRecord { shot: shot_offset + i, settings_index, outcome, afterpulse }
        })
        .collect())
}

/// Multinomial sampling of `shots` windows with afterpulse coupling.
pub fn sample_counts(
    dist: &OutcomeDistribution,
    shots: u64,
    seeds: &SeedPolicy,
    point: u64,
    shot_offset: u64,
) -> Result<SettingsCounts> {
    if shots == 0 {
        return Err(Error::config("shots must be at least 1"));
    }
    check_distribution(dist)?;
    let sampler = Sampler::new(dist);
    let chunks = shots.div_ceil(CHUNK_SHOTS);
    let (counts, afterpulses) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_SHOTS;
            let end = (start + CHUNK_SHOTS).min(shots);
            let mut rng = seeds.substream(point, shot_offset + start);
            let mut counts = [[0u64; 3]; 3];
            let mut after = 0u64;
            for _ in start..end {
                let ((a, b), ap) = sampler.shot(&mut rng);
                counts[a.index()][b.index()] += 1;
                after += ap as u64;
            }
            (counts, after)
        })
        .reduce(
            || ([[0u64; 3]; 3], 0),
            |(mut x, ax), (y, ay)| {
                for i in 0..3 {
                    for j in 0..3 {
                        x[i][j] += y[i][j];
                    }
                }
                (x, ax + ay)
            },
        );
    Ok(SettingsCounts { settings: dist.settings, counts, shots, afterpulses })
}

/// Outcome probabilities including afterpulse coupling; the distribution
/// that [`sample_counts`] draws from.
pub fn expected_probabilities(dist: &OutcomeDistribution) -> [[f64; 3]; 3] {
    let mut p = dist.probs;
    let ap = dist.afterpulse_prob;
    let none = Outcome::NoClick.index();
    for a in [Outcome::PlusPort, Outcome::MinusPort] {
        let moved = dist.probs[a.index()][none] * ap;
        p[a.index()][none] -= moved;
        p[a.index()][a.index()] += moved;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    /// Analyzer phase φ on `ScanSpec::phase_register`, radians.
    AnalyzerPhase,
    /// Area of the Rabi-probe pulse, radians.
    PulseArea,
    /// Duration of the Rabi-probe pulse, ns; area = π·t / t_π.
    PulseDuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub variable: ScanVariable,
    pub grid: Vec<f64>,
    /// Settings pairs measured at every point; each gets `shots_per_point`.
    pub settings: Vec<(AnalyzerSetting, AnalyzerSetting)>,
    pub phase_register: Register,
    pub losses: LossChain,
    pub detector: DetectorModel,
    pub shots_per_point: u64,
    /// Stream index of the first grid point; later points follow on.
    #[serde(default)]
    pub first_point: u64,
}

/// Protocol config with the scan variable set to `value`.
pub fn apply_scan_value(
    config: &ProtocolConfig,
    variable: ScanVariable,
    value: f64,
) -> Result<ProtocolConfig> {
    let mut cfg = config.clone();
    match (variable, config.variant) {
        (ScanVariable::AnalyzerPhase, Variant::RabiProbe { .. }) => {
            Err(Error::config("analyzer-phase scans need an interfering protocol variant"))
        }
        (ScanVariable::AnalyzerPhase, _) => Ok(cfg),
        (ScanVariable::PulseArea | ScanVariable::PulseDuration, Variant::RabiProbe { target }) => {
            let area = match variable {
                ScanVariable::PulseArea => value,
                // U(θ + 2π) = −U(θ) on the driven pair; from |G⟩ that is a
                // global sign, so long pulses fold back into [0, 2π).
                _ => (PI * value / cfg.noise.atom.pi_time(target)).rem_euclid(TAU),
            };
            match cfg.prepare.first_mut() {
                Some(Step::Pulse(p)) => p.area = area,
                _ => return Err(Error::config("Rabi probe has no excitation pulse")),
            }
            Ok(cfg)
        }
        (_, variant) => Err(Error::config(format!(
            "{variable:?} scans only apply to the Rabi probe, not {variant:?}"
        ))),
    }
}

/// Final state with transmission losses on both registers.
pub fn detected_state(config: &ProtocolConfig, losses: &LossChain) -> Result<DensityOperator> {
    let rho = run_protocol(config)?;
    let rho = apply_losses(&rho, losses, Register::One)?;
    apply_losses(&rho, losses, Register::Two)
}

/// Samples every settings pair at one point of a run.
pub fn sample_point(
    rho: &DensityOperator,
    settings: &[(AnalyzerSetting, AnalyzerSetting)],
    detector: &DetectorModel,
    shots: u64,
    seeds: &SeedPolicy,
    point: u64,
    grid_value: Option<f64>,
) -> Result<CountsTable> {
    let entries = settings
        .iter()
        .enumerate()
        .map(|(k, (s1, s2))| {
            let dist = joint_click_distribution(rho, s1, s2, detector)?;
            sample_counts(&dist, shots, seeds, point, k as u64 * shots)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountsTable { point_index: point, grid_value, entries })
}

fn point_settings(
    spec: &ScanSpec,
    value: f64,
) -> Vec<(AnalyzerSetting, AnalyzerSetting)> {
    spec.settings
        .iter()
        .map(|&(mut s1, mut s2)| {
            if spec.variable == ScanVariable::AnalyzerPhase {
                for s in [&mut s1, &mut s2] {
                    if s.register == spec.phase_register {
                        s.phi = value.rem_euclid(TAU);
                    }
                }
            }
            (s1, s2)
        })
        .collect()
}

/// run_protocol → apply_losses → joint_click_distribution → sample_counts,
/// once per grid value, each on its own stream.
pub fn scan(config: &ProtocolConfig, spec: &ScanSpec, seeds: &SeedPolicy) -> Result<Vec<CountsTable>> {
    if spec.grid.is_empty() {
        return Err(Error::config("scan grid is empty"));
    }
    if spec.settings.is_empty() {
        return Err(Error::config("scan has no analyzer settings"));
    }
    if spec.shots_per_point == 0 {
        return Err(Error::config("shots must be at least 1"));
    }
    spec.losses.validate()?;
    spec.detector.validate()?;
    // Validate every point before any sampling starts.
    let configs = spec
        .grid
        .iter()
        .map(|&v| apply_scan_value(config, spec.variable, v))
        .collect::<Result<Vec<_>>>()?;

    configs
        .par_iter()
        .zip(spec.grid.par_iter())
        .enumerate()
        .map(|(i, (cfg, &value))| {
            let rho = detected_state(cfg, &spec.losses)?;
            sample_point(
                &rho,
                &point_settings(spec, value),
                &spec.detector,
                spec.shots_per_point,
                seeds,
                spec.first_point + i as u64,
                Some(value),
            )
        })
        .collect()
}
