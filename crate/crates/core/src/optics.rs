//! Analyzer bases, transmission losses and detector response.
//!
//! The unbalanced interferometer is folded into the analyzer: a setting
//! `(θ, φ)` projects a register onto
//!
//! ```text
//! |θ,φ⟩   = cos θ |E⟩ + e^{iφ} sin θ |L⟩
//! |θ,φ^⊥⟩ = sin θ |E⟩ − e^{iφ} cos θ |L⟩
//! ```
//!
//! plus the vacuum projector for "no photon".

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::hilbert::{
    apply_channel, embed_local, partial_trace, DensityOperator, KrausChannel, Subsystem, C64,
    PHOTON_DIM,
};
use crate::protocol::Register;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub theta: f64,
    pub phi: f64,
    pub register: Register,
}

impl AnalyzerSetting {
    pub fn new(register: Register, theta: f64, phi: f64) -> Self {
        AnalyzerSetting { theta, phi: phi.rem_euclid(TAU), register }
    }

    /// Early/late eigenbasis.
    pub fn eigenbasis(register: Register) -> Self {
        Self::new(register, 0.0, 0.0)
    }

    /// `(|E⟩ ± e^{iφ}|L⟩)/√2`.
    pub fn superposition(register: Register, phi: f64) -> Self {
        Self::new(register, std::f64::consts::FRAC_PI_4, phi)
    }

    pub fn from_degrees(register: Register, theta_deg: f64) -> Self {
        Self::new(register, theta_deg.to_radians(), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("analyzer theta", self.theta, 0.0, FRAC_PI_2 + 1e-12)?;
        if !(self.phi.is_finite() && (0.0..TAU).contains(&self.phi)) {
            return Err(Error::OutOfRange { name: "analyzer phi", value: self.phi });
        }
        Ok(())
    }
}

/// Recorded outcome of one photon register in one detection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    PlusPort,
    MinusPort,
    NoClick,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::PlusPort, Outcome::MinusPort, Outcome::NoClick];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_click(self) -> bool {
        self != Outcome::NoClick
    }

    pub fn swapped(self) -> Outcome {
        match self {
            Outcome::PlusPort => Outcome::MinusPort,
            Outcome::MinusPort => Outcome::PlusPort,
            Outcome::NoClick => Outcome::NoClick,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::PlusPort => "plus",
            Outcome::MinusPort => "minus",
            Outcome::NoClick => "none",
        }
    }
}

/// Effects `[|θ,φ⟩⟨θ,φ|, |θ,φ^⊥⟩⟨θ,φ^⊥|, |Vac⟩⟨Vac|]` on one 3-mode register.
pub fn measurement_effects(setting: &AnalyzerSetting) -> [DMatrix<C64>; 3] {
    let (s, c) = setting.theta.sin_cos();
    let ph = C64::from_polar(1.0, setting.phi);
    // (Vac, E, L) components
    let plus = [C64::new(0.0, 0.0), C64::new(c, 0.0), ph * s];
    let minus = [C64::new(0.0, 0.0), C64::new(s, 0.0), -ph * c];
    let proj = |v: [C64; 3]| DMatrix::from_fn(PHOTON_DIM, PHOTON_DIM, |i, j| v[i] * v[j].conj());
    let mut vac = DMatrix::zeros(PHOTON_DIM, PHOTON_DIM);
    vac[(0, 0)] = C64::new(1.0, 0.0);
    [proj(plus), proj(minus), vac]
}

/// Transmission factors from excitation to click. `retrieval` is applied by
/// the protocol (it is the retrieval efficiency), so [`LossChain::transmission`]
/// leaves it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossChain {
    pub preparation: f64,
    pub retrieval: f64,
    pub fiber_coupling: f64,
    pub aom_deflection: f64,
    pub mz_transmission: f64,
    pub detector_efficiency: f64,
}

impl Default for LossChain {
    fn default() -> Self {
        Self::lossless()
    }
}

impl LossChain {
    pub fn lossless() -> Self {
        LossChain {
            preparation: 1.0,
            retrieval: 1.0,
            fiber_coupling: 1.0,
            aom_deflection: 1.0,
            mz_transmission: 1.0,
            detector_efficiency: 1.0,
        }
    }

    /// Budget reported for the experiment: 0.90, 0.13, 0.69, 0.77, 0.47, 0.60.
    pub fn experimental() -> Self {
        LossChain {
            preparation: 0.90,
            retrieval: 0.13,
            fiber_coupling: 0.69,
            aom_deflection: 0.77,
            mz_transmission: 0.47,
            detector_efficiency: 0.60,
        }
    }

    pub fn factors(&self) -> [(&'static str, f64); 6] {
        [
            ("preparation", self.preparation),
            ("retrieval", self.retrieval),
            ("fiber_coupling", self.fiber_coupling),
            ("aom_deflection", self.aom_deflection),
            ("mz_transmission", self.mz_transmission),
            ("detector_efficiency", self.detector_efficiency),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.factors() {
            check_range(name, v, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Product of every factor except `retrieval`.
    pub fn transmission(&self) -> f64 {
        self.factors().iter().filter(|(n, _)| *n != "retrieval").map(|(_, v)| v).product()
    }

    /// Product of all six factors.
    pub fn end_to_end(&self) -> f64 {
        self.factors().iter().map(|(_, v)| v).product()
    }
}

pub fn loss_channel(transmission: f64, register: Register) -> Result<KrausChannel> {
    check_range("transmission", transmission, 0.0, 1.0)?;
    let t = transmission.sqrt();
    let r = (1.0 - transmission).sqrt();
    let mut keep = DMatrix::<C64>::zeros(PHOTON_DIM, PHOTON_DIM);
    keep[(0, 0)] = C64::new(1.0, 0.0);
    keep[(1, 1)] = C64::new(t, 0.0);
    keep[(2, 2)] = C64::new(t, 0.0);
    let mut lose_e = DMatrix::<C64>::zeros(PHOTON_DIM, PHOTON_DIM);
    lose_e[(0, 1)] = C64::new(r, 0.0);
    let mut lose_l = DMatrix::<C64>::zeros(PHOTON_DIM, PHOTON_DIM);
    lose_l[(0, 2)] = C64::new(r, 0.0);
    let sub = register.subsystem();
    KrausChannel::new(vec![embed_local(&keep, sub), embed_local(&lose_e, sub), embed_local(&lose_l, sub)])
}

/// Amplitude damping of `E` and `L` toward vacuum with transmission
/// `chain.transmission()`.
pub fn apply_losses(
    rho: &DensityOperator,
    chain: &LossChain,
    register: Register,
) -> Result<DensityOperator> {
    chain.validate()?;
    apply_channel(rho, &loss_channel(chain.transmission(), register)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorArrangement {
    /// Both photons on SPD1/SPD2 in consecutive windows.
    Multiplexed,
    /// Photon 1 on SPD1/SPD2, photon 2 on SPD3/SPD4.
    FourDetector,
}

/// Which physical analyzer port feeds the detector that is recorded as
/// "plus". `SwapSecond` records register 2 with its ports exchanged, which
/// negates every correlation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortConvention {
    Direct,
    SwapSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DarkCountProb {
    Uniform(f64),
    /// SPD1..SPD4.
    PerDetector([f64; 4]),
}

impl DarkCountProb {
    pub fn for_detector(&self, detector: usize) -> f64 {
        match *self {
            DarkCountProb::Uniform(p) => p,
            DarkCountProb::PerDetector(ps) => ps[detector],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Dark-click probability per detection window.
    pub dark_count_prob: DarkCountProb,
    /// Probability that a click in one window leaves a spurious click on the
    /// same detector in the next window.
    pub afterpulse_prob: f64,
    #[serde(default = "default_convention")]
    pub port_convention: PortConvention,
    /// Chosen by the scenario, not the user.
    #[serde(skip, default = "default_arrangement")]
    pub arrangement: DetectorArrangement,
}

fn default_convention() -> PortConvention {
    PortConvention::Direct
}

fn default_arrangement() -> DetectorArrangement {
    DetectorArrangement::FourDetector
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        DetectorModel {
            dark_count_prob: DarkCountProb::Uniform(0.0),
            afterpulse_prob: 0.0,
            port_convention: PortConvention::Direct,
            arrangement: DetectorArrangement::FourDetector,
        }
    }

    pub fn with_arrangement(mut self, arrangement: DetectorArrangement) -> Self {
        self.arrangement = arrangement;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..4 {
            check_range("dark_count_prob", self.dark_count_prob.for_detector(d), 0.0, 0.5)?;
        }
        check_range("afterpulse_prob", self.afterpulse_prob, 0.0, 1.0)
    }

    /// Detector index (0 = SPD1) recording `outcome` on `register`.
    pub fn detector(&self, register: Register, outcome: Outcome) -> Option<usize> {
        let base = match (self.arrangement, register) {
            (DetectorArrangement::FourDetector, Register::Two) => 2,
            _ => 0,
        };
        match outcome {
            Outcome::PlusPort => Some(base),
            Outcome::MinusPort => Some(base + 1),
            Outcome::NoClick => None,
        }
    }

    /// Afterpulsing only couples windows that share detectors.
    pub fn effective_afterpulse(&self) -> f64 {
        match self.arrangement {
            DetectorArrangement::Multiplexed => self.afterpulse_prob,
            DetectorArrangement::FourDetector => 0.0,
        }
    }
}

/// Recorded joint outcome probabilities for one pair of settings.
///
/// `probs[a][b]` is indexed by [`Outcome::index`] of register 1 and 2.
/// `afterpulse_prob` is the window-to-window coupling that sampling must add;
/// it is not folded into `probs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub settings: (AnalyzerSetting, AnalyzerSetting),
    pub probs: [[f64; 3]; 3],
    pub afterpulse_prob: f64,
}

impl OutcomeDistribution {
    pub fn prob(&self, a: Outcome, b: Outcome) -> f64 {
        self.probs[a.index()][b.index()]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().flatten().sum()
    }

    /// Probability that register `reg` clicks at all.
    pub fn click_prob(&self, reg: Register) -> f64 {
        let mut p = 0.0;
        for a in Outcome::ALL {
            for b in Outcome::ALL {
                let clicked = match reg {
                    Register::One => a.is_click(),
                    Register::Two => b.is_click(),
                };
                if clicked {
                    p += self.prob(a, b);
                }
            }
        }
        p
    }

    /// Correlation of recorded labels among click-click events.
    pub fn correlation(&self) -> f64 {
        use Outcome::*;
        let par = self.prob(PlusPort, PlusPort) + self.prob(MinusPort, MinusPort);
        let cross = self.prob(PlusPort, MinusPort) + self.prob(MinusPort, PlusPort);
        (par - cross) / (par + cross)
    }
}

/// Born-rule table over the two registers, relabeled per the port
/// convention, then with dark clicks filling empty windows.
pub fn joint_click_distribution(
    rho: &DensityOperator,
    s1: &AnalyzerSetting,
    s2: &AnalyzerSetting,
    det: &DetectorModel,
) -> Result<OutcomeDistribution> {
    if s1.register == s2.register {
        return Err(Error::config("both analyzer settings address the same register"));
    }
    let (s1, s2) = if s1.register == Register::One { (s1, s2) } else { (s2, s1) };
    s1.validate()?;
    s2.validate()?;
    det.validate()?;

    let photons = partial_trace(rho, &[Subsystem::Photon1, Subsystem::Photon2])?;
    let e1 = measurement_effects(s1);
    let e2 = measurement_effects(s2);
    let mut born = [[0.0; 3]; 3];
    for (a, m1) in e1.iter().enumerate() {
        for (b, m2) in e2.iter().enumerate() {
            let joint = m1.kronecker(m2);
            born[a][b] = (joint * photons.matrix()).trace().re.max(0.0);
        }
    }

    let mut recorded = [[0.0; 3]; 3];
    for a in Outcome::ALL {
        for b in Outcome::ALL {
            let b_rec = match det.port_convention {
                PortConvention::Direct => b,
                PortConvention::SwapSecond => b.swapped(),
            };
            recorded[a.index()][b_rec.index()] += born[a.index()][b.index()];
        }
    }

    // Dark clicks: an empty window on register r turns into a click on
    // each of its two detectors with that detector's probability.
    let dark = |reg: Register| -> [[f64; 3]; 3] {
        let p_plus = det.dark_count_prob.for_detector(det.detector(reg, Outcome::PlusPort).unwrap());
        let p_minus = det.dark_count_prob.for_detector(det.detector(reg, Outcome::MinusPort).unwrap());
        // m[from][to]
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [p_plus, p_minus, 1.0 - p_plus - p_minus]]
    };
    let (d1, d2) = (dark(Register::One), dark(Register::Two));
    let mut probs = [[0.0; 3]; 3];
    for a0 in 0..3 {
        for b0 in 0..3 {
            let p = recorded[a0][b0];
            if p == 0.0 {
                continue;
            }
            for a in 0..3 {
                for b in 0..3 {
                    probs[a][b] += p * d1[a0][a] * d2[b0][b];
                }
            }
        }
    }

    Ok(OutcomeDistribution {
        settings: (*s1, *s2),
        probs,
        afterpulse_prob: det.effective_afterpulse(),
    })
}
