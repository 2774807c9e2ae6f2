//! The three-phase pulse/retrieval sequence and its noise channels.
//!
//! Pulses rotate the `{G, R_target}` pair and leave the other Rydberg level
//! alone (full blockade). Retrievals map `R_source` to `G` while writing a
//! photon into one `(register, time bin)` slot.
//!
//! Phase bookkeeping: a pulse targeting `r_j` multiplies the amplitude of the
//! `R_j` branch by `e^{iφ_pulse}`. The relative phase of the final state
//! (φ for the skip variant, ψ for the full run) is therefore
//!
//! ```text
//! Σ phases of pulses targeting r2  −  Σ phases of pulses targeting r1
//! ```
//!
//! see [`ProtocolConfig::branch_phase`].

use std::f64::consts::{FRAC_PI_2, FRAC_1_SQRT_2, PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::hilbert::{
    apply_channel, basis_index, basis_label, embed_local, pure_to_density, subspace_depolarizing,
    AtomLevel, DensityOperator, KrausChannel, PhotonMode, PureState, Subsystem, ATOM_DIM, C64,
    DIM, ONE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RydbergLevel {
    R1,
    R2,
}

impl RydbergLevel {
    pub fn level(self) -> AtomLevel {
        match self {
            RydbergLevel::R1 => AtomLevel::R1,
            RydbergLevel::R2 => AtomLevel::R2,
        }
    }

    pub fn other(self) -> RydbergLevel {
        match self {
            RydbergLevel::R1 => RydbergLevel::R2,
            RydbergLevel::R2 => RydbergLevel::R1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Register {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Register {
    pub fn subsystem(self) -> Subsystem {
        match self {
            Register::One => Subsystem::Photon1,
            Register::Two => Subsystem::Photon2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeBin {
    E,
    L,
}

impl TimeBin {
    pub fn mode(self) -> PhotonMode {
        match self {
            TimeBin::E => PhotonMode::E,
            TimeBin::L => PhotonMode::L,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub target: RydbergLevel,
    /// Rotation angle θ in radians, `[0, 2π]`.
    pub area: f64,
    /// Rotation phase in radians, `[0, 2π)`.
    pub phase: f64,
    #[serde(default)]
    pub label: String,
}

impl PulseSpec {
    pub fn new(target: RydbergLevel, area: f64, phase: f64, label: impl Into<String>) -> Self {
        PulseSpec { target, area, phase, label: label.into() }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("pulse area", self.area, 0.0, TAU)?;
        if !(self.phase.is_finite() && (0.0..TAU).contains(&self.phase)) {
            return Err(Error::OutOfRange { name: "pulse phase", value: self.phase });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSpec {
    pub source: RydbergLevel,
    pub register: Register,
    pub mode: TimeBin,
    pub efficiency: f64,
}

impl RetrievalSpec {
    pub fn new(source: RydbergLevel, register: Register, mode: TimeBin, efficiency: f64) -> Self {
        RetrievalSpec { source, register, mode, efficiency }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("retrieval efficiency", self.efficiency, 0.0, 1.0)
    }
}

/// Ensemble facts that do not enter the effective model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomMetadata {
    #[serde(default)]
    pub atom_number: Option<u64>,
    pub pi_time_r1_ns: f64,
    pub pi_time_r2_ns: f64,
}

impl Default for AtomMetadata {
    fn default() -> Self {
        AtomMetadata { atom_number: None, pi_time_r1_ns: 92.95, pi_time_r2_ns: 92.18 }
    }
}

impl AtomMetadata {
    pub fn pi_time(&self, level: RydbergLevel) -> f64 {
        match level {
            RydbergLevel::R1 => self.pi_time_r1_ns,
            RydbergLevel::R2 => self.pi_time_r2_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Probability that a blocked pulse of area ≥ π/2 moves the other
    /// Rydberg excitation into the sink `D`.
    pub blockade_leakage: f64,
    /// Phase-damping strength γ applied after every step.
    pub rydberg_dephasing: f64,
    /// Fractional error on every pulse area.
    pub pulse_area_error: f64,
    /// Strength λ of a depolarizing channel `(1−λ)ρ + λ·I/4` on the
    /// `{R1,R2}⊗{E,L}` qubit pair, inserted right before readout.
    pub depolarizing_before_readout: f64,
    pub atom: AtomMetadata,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            blockade_leakage: 0.0,
            rydberg_dephasing: 0.0,
            pulse_area_error: 0.0,
            depolarizing_before_readout: 0.0,
            atom: AtomMetadata::default(),
        }
    }
}

impl NoiseConfig {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        check_range("blockade_leakage", self.blockade_leakage, 0.0, 1.0)?;
        check_range("rydberg_dephasing", self.rydberg_dephasing, 0.0, 1.0)?;
        check_range("pulse_area_error", self.pulse_area_error, -1.0, 1.0)?;
        check_range("depolarizing_before_readout", self.depolarizing_before_readout, 0.0, 1.0)?;
        if !(self.atom.pi_time_r1_ns > 0.0 && self.atom.pi_time_r2_ns > 0.0) {
            return Err(Error::config("pi times must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Step {
    Pulse(PulseSpec),
    Retrieve(RetrievalSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prepare,
    Entangle,
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Prepare, retrieve-and-patch, readout.
    Full,
    /// Prepare then read out immediately (preparation check).
    SkipEntanglePhase,
    /// One pulse on `target` from `|G⟩`, then readout of that level.
    RabiProbe { target: RydbergLevel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub variant: Variant,
    pub prepare: Vec<Step>,
    pub entangle: Vec<Step>,
    pub readout: Vec<Step>,
    pub noise: NoiseConfig,
    /// Stop after this phase instead of running to the end.
    pub halt_after: Option<Phase>,
}

fn pulse(target: RydbergLevel, area: f64, label: &str) -> Step {
    Step::Pulse(PulseSpec::new(target, area, 0.0, label))
}

fn retrieval(source: RydbergLevel, register: Register, mode: TimeBin) -> Step {
    Step::Retrieve(RetrievalSpec::new(source, register, mode, 1.0))
}

fn readout_steps() -> Vec<Step> {
    vec![
        retrieval(RydbergLevel::R1, Register::Two, TimeBin::E),
        retrieval(RydbergLevel::R2, Register::Two, TimeBin::L),
    ]
}

fn prepare_steps() -> Vec<Step> {
    vec![
        pulse(RydbergLevel::R1, FRAC_PI_2, "prepare r1"),
        pulse(RydbergLevel::R2, PI, "patch r2 (prepare)"),
    ]
}

impl ProtocolConfig {
    pub fn full() -> Self {
        ProtocolConfig {
            variant: Variant::Full,
            prepare: prepare_steps(),
            entangle: vec![
                retrieval(RydbergLevel::R1, Register::One, TimeBin::E),
                pulse(RydbergLevel::R1, PI, "patch r1"),
                retrieval(RydbergLevel::R2, Register::One, TimeBin::L),
                pulse(RydbergLevel::R2, PI, "patch r2"),
            ],
            readout: readout_steps(),
            noise: NoiseConfig::ideal(),
            halt_after: None,
        }
    }

    pub fn skip_entangle_phase() -> Self {
        ProtocolConfig {
            variant: Variant::SkipEntanglePhase,
            prepare: prepare_steps(),
            entangle: Vec::new(),
            readout: readout_steps(),
            noise: NoiseConfig::ideal(),
            halt_after: None,
        }
    }

    pub fn rabi_probe(target: RydbergLevel, area: f64) -> Self {
        ProtocolConfig {
            variant: Variant::RabiProbe { target },
            prepare: vec![pulse(target, area, "rabi")],
            entangle: Vec::new(),
            readout: vec![retrieval(target, Register::Two, TimeBin::E)],
            noise: NoiseConfig::ideal(),
            halt_after: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }

    pub fn halted_after(mut self, phase: Phase) -> Self {
        self.halt_after = Some(phase);
        self
    }

    /// Sets the efficiency of every retrieval in `phase`.
    pub fn with_retrieval_efficiency(mut self, phase: Phase, efficiency: f64) -> Self {
        for step in self.steps_mut(phase) {
            if let Step::Retrieve(r) = step {
                r.efficiency = efficiency;
            }
        }
        self
    }

    /// Sets the phase of the `index`-th pulse (counted over the whole
    /// sequence) to `phase`, wrapped into `[0, 2π)`.
    pub fn with_pulse_phase(mut self, index: usize, phase: f64) -> Self {
        if let Some(p) = self.pulses_mut().nth(index) {
            p.phase = phase.rem_euclid(TAU);
        }
        self
    }

    pub fn steps(&self, phase: Phase) -> &[Step] {
        match phase {
            Phase::Prepare => &self.prepare,
            Phase::Entangle => &self.entangle,
            Phase::Readout => &self.readout,
        }
    }

    fn steps_mut(&mut self, phase: Phase) -> &mut Vec<Step> {
        match phase {
            Phase::Prepare => &mut self.prepare,
            Phase::Entangle => &mut self.entangle,
            Phase::Readout => &mut self.readout,
        }
    }

    pub fn pulses_mut(&mut self) -> impl Iterator<Item = &mut PulseSpec> {
        self.prepare
            .iter_mut()
            .chain(self.entangle.iter_mut())
            .chain(self.readout.iter_mut())
            .filter_map(|s| match s {
                Step::Pulse(p) => Some(p),
                Step::Retrieve(_) => None,
            })
    }

    fn all_steps(&self) -> impl Iterator<Item = (Phase, &Step)> {
        [Phase::Prepare, Phase::Entangle, Phase::Readout]
            .into_iter()
            .flat_map(move |ph| self.steps(ph).iter().map(move |s| (ph, s)))
    }

    /// Relative phase between the `R2` and `R1` branches produced by the
    /// pulse phases: Σφ(r2 pulses) − Σφ(r1 pulses), wrapped to `[0, 2π)`.
    pub fn branch_phase(&self) -> f64 {
        self.all_steps()
            .filter_map(|(_, s)| match s {
                Step::Pulse(p) => Some(match p.target {
                    RydbergLevel::R2 => p.phase,
                    RydbergLevel::R1 => -p.phase,
                }),
                Step::Retrieve(_) => None,
            })
            .sum::<f64>()
            .rem_euclid(TAU)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        let mut slots: Vec<(Register, TimeBin)> = Vec::new();
        let mut seen_pulse = false;
        for (phase, step) in self.all_steps() {
            match step {
                Step::Pulse(p) => {
                    p.validate()?;
                    seen_pulse = true;
                }
                Step::Retrieve(r) => {
                    r.validate()?;
                    if !seen_pulse {
                        return Err(Error::config(format!(
                            "retrieval from {:?} in {phase:?} phase before any excitation pulse",
                            r.source
                        )));
                    }
                    if slots.contains(&(r.register, r.mode)) {
                        return Err(Error::config(format!(
                            "photon slot (register {:?}, bin {:?}) used twice",
                            r.register, r.mode
                        )));
                    }
                    slots.push((r.register, r.mode));
                }
            }
        }
        self.check_template()
    }

    /// Checks that step kinds, targets and slots follow the variant's sequence.
    fn check_template(&self) -> Result<()> {
        let template = match self.variant {
            Variant::Full => ProtocolConfig::full(),
            Variant::SkipEntanglePhase => ProtocolConfig::skip_entangle_phase(),
            Variant::RabiProbe { target } => ProtocolConfig::rabi_probe(target, 0.0),
        };
        for phase in [Phase::Prepare, Phase::Entangle, Phase::Readout] {
            let (ours, theirs) = (self.steps(phase), template.steps(phase));
            let same_shape = ours.len() == theirs.len()
                && ours.iter().zip(theirs).all(|(a, b)| match (a, b) {
                    (Step::Pulse(a), Step::Pulse(b)) => a.target == b.target,
                    (Step::Retrieve(a), Step::Retrieve(b)) => {
                        a.source == b.source && a.register == b.register && a.mode == b.mode
                    }
                    _ => false,
                });
            if !same_shape {
                return Err(Error::config(format!(
                    "{phase:?} phase does not match the {:?} sequence",
                    self.variant
                )));
            }
        }
        Ok(())
    }
}

/// 4×4 atomic Kraus operators for one pulse: blockade leakage followed by the
/// rotation on `{G, R_target}`.
fn pulse_atom_kraus(pulse: &PulseSpec, noise: &NoiseConfig) -> Vec<DMatrix<C64>> {
    let theta = pulse.area * (1.0 + noise.pulse_area_error);
    let (g, t) = (AtomLevel::G.index(), pulse.target.level().index());
    let o = pulse.target.other().level().index();
    let d = AtomLevel::D.index();

    let (s, c) = (theta / 2.0).sin_cos();
    let mut u = DMatrix::<C64>::identity(ATOM_DIM, ATOM_DIM);
    u[(g, g)] = C64::new(c, 0.0);
    u[(t, t)] = C64::new(c, 0.0);
    u[(t, g)] = C64::from_polar(s, pulse.phase);
    u[(g, t)] = -C64::from_polar(s, -pulse.phase);

    let eps = noise.blockade_leakage;
    if eps > 0.0 && pulse.area >= FRAC_PI_2 {
        let mut keep = DMatrix::<C64>::identity(ATOM_DIM, ATOM_DIM);
        keep[(o, o)] = C64::new((1.0 - eps).sqrt(), 0.0);
        let mut leak = DMatrix::<C64>::zeros(ATOM_DIM, ATOM_DIM);
        leak[(d, o)] = C64::new(eps.sqrt(), 0.0);
        vec![&u * keep, &u * leak]
    } else {
        vec![u]
    }
}

pub fn collective_pulse(
    rho: &DensityOperator,
    pulse: &PulseSpec,
    noise: &NoiseConfig,
) -> Result<DensityOperator> {
    let ops = pulse_atom_kraus(pulse, noise)
        .iter()
        .map(|k| embed_local(k, Subsystem::Atom))
        .collect();
    apply_channel(rho, &KrausChannel::new(ops)?)
}

fn slot_of(p1: PhotonMode, p2: PhotonMode, register: Register) -> PhotonMode {
    match register {
        Register::One => p1,
        Register::Two => p2,
    }
}

pub fn retrieval_channel(spec: &RetrievalSpec) -> Result<KrausChannel> {
    spec.validate()?;
    let src = spec.source.level();
    let eta = spec.efficiency;
    let target = spec.mode.mode();
    // No-loss branch: emission plus identity on everything the emission
    // cannot land on. States already holding a photon in the target slot
    // with the atom in G get their own operator so the branches stay
    // orthogonal.
    let mut kept = DMatrix::<C64>::zeros(DIM, DIM);
    let mut lost = DMatrix::<C64>::zeros(DIM, DIM);
    let mut occupied = DMatrix::<C64>::zeros(DIM, DIM);
    for i in 0..DIM {
        let (a, p1, p2) = basis_label(i);
        let slot = slot_of(p1, p2, spec.register);
        if a == src && slot == PhotonMode::Vac {
            let (q1, q2) = match spec.register {
                Register::One => (target, p2),
                Register::Two => (p1, target),
            };
            kept[(basis_index(AtomLevel::G, q1, q2), i)] = C64::new(eta.sqrt(), 0.0);
            lost[(basis_index(AtomLevel::G, p1, p2), i)] = C64::new((1.0 - eta).sqrt(), 0.0);
        } else if a == AtomLevel::G && slot == target {
            occupied[(i, i)] = ONE;
        } else {
            kept[(i, i)] = ONE;
        }
    }
    KrausChannel::new(vec![kept, lost, occupied])
}

pub fn retrieve(rho: &DensityOperator, spec: &RetrievalSpec) -> Result<DensityOperator> {
    apply_channel(rho, &retrieval_channel(spec)?)
}

/// `+1` on basis states of the early branch, `−1` on states carrying any
/// late marker (`R2`, `L` in either register).
fn branch_sign(index: usize) -> f64 {
    let (a, p1, p2) = basis_label(index);
    if a == AtomLevel::R2 || p1 == PhotonMode::L || p2 == PhotonMode::L {
        -1.0
    } else {
        1.0
    }
}

/// Random branch-sign flip with probability `q = (1 − √(1−γ))/2`, so that
/// early/late coherences shrink by exactly `√(1−γ)`.
pub fn dephasing_channel(gamma: f64) -> Result<KrausChannel> {
    check_range("dephasing strength", gamma, 0.0, 1.0)?;
    let q = (1.0 - (1.0 - gamma).sqrt()) / 2.0;
    let mut z = DMatrix::<C64>::zeros(DIM, DIM);
    for i in 0..DIM {
        z[(i, i)] = C64::new(branch_sign(i), 0.0);
    }
    KrausChannel::mixed_unitary(vec![(1.0 - q, DMatrix::identity(DIM, DIM)), (q, z)])
}

pub fn dephase_step(rho: &DensityOperator, gamma: f64) -> Result<DensityOperator> {
    apply_channel(rho, &dephasing_channel(gamma)?)
}

fn readout_depolarizing(lambda: f64) -> Result<KrausChannel> {
    use AtomLevel::{R1, R2};
    use PhotonMode::{Vac, E, L};
    subspace_depolarizing(
        lambda,
        [
            basis_index(R1, E, Vac),
            basis_index(R1, L, Vac),
            basis_index(R2, E, Vac),
            basis_index(R2, L, Vac),
        ],
    )
}

pub fn initial_state() -> DensityOperator {
    pure_to_density(&PureState::basis(AtomLevel::G, PhotonMode::Vac, PhotonMode::Vac))
        .expect("basis state is normalized")
}

pub fn run_protocol(config: &ProtocolConfig) -> Result<DensityOperator> {
    config.validate()?;
    let noise = &config.noise;
    let dephasing = if noise.rydberg_dephasing > 0.0 {
        Some(dephasing_channel(noise.rydberg_dephasing)?)
    } else {
        None
    };
    let mut rho = initial_state();
    for phase in [Phase::Prepare, Phase::Entangle, Phase::Readout] {
        if phase == Phase::Readout && noise.depolarizing_before_readout > 0.0 {
            rho = apply_channel(&rho, &readout_depolarizing(noise.depolarizing_before_readout)?)?;
        }
        for step in config.steps(phase) {
            rho = match step {
                Step::Pulse(p) => collective_pulse(&rho, p, noise)?,
                Step::Retrieve(r) => retrieve(&rho, r)?,
            };
            if let Some(ch) = &dephasing {
                rho = apply_channel(&rho, ch)?;
            }
        }
        if config.halt_after == Some(phase) {
            break;
        }
    }
    Ok(rho)
}

/// `(|R1,E⟩ + e^{iψ}|R2,L⟩)/√2`, the atom-photon state after retrieve-and-patch.
pub fn atom_photon_state(psi: f64) -> PureState {
    use AtomLevel::{R1, R2};
    use PhotonMode::{Vac, E, L};
    PureState::from_terms(&[
        (C64::new(FRAC_1_SQRT_2, 0.0), (R1, E, Vac)),
        (C64::from_polar(FRAC_1_SQRT_2, psi), (R2, L, Vac)),
    ])
}

/// `(|G,E,E'⟩ + e^{iψ}|G,L,L'⟩)/√2`, the two-photon state after readout.
pub fn photon_pair_state(psi: f64) -> PureState {
    use AtomLevel::G;
    use PhotonMode::{E, L};
    PureState::from_terms(&[
        (C64::new(FRAC_1_SQRT_2, 0.0), (G, E, E)),
        (C64::from_polar(FRAC_1_SQRT_2, psi), (G, L, L)),
    ])
}

/// `(|G,Vac,E'⟩ + e^{iφ}|G,Vac,L'⟩)/√2`, the skip-variant output.
pub fn skip_variant_state(phi: f64) -> PureState {
    use AtomLevel::G;
    use PhotonMode::{Vac, E, L};
    PureState::from_terms(&[
        (C64::new(FRAC_1_SQRT_2, 0.0), (G, Vac, E)),
        (C64::from_polar(FRAC_1_SQRT_2, phi), (G, Vac, L)),
    ])
}
