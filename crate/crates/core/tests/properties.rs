use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use timebin_core::analysis::{correlation_e, fidelity_bound};
use timebin_core::hilbert::{
    apply_channel, basis_index, partial_trace, pure_to_density, state_fidelity, DIM,
};
use timebin_core::optics::{apply_losses, joint_click_distribution, measurement_effects};
use timebin_core::protocol::{
    atom_photon_state, collective_pulse, retrieve, run_protocol, RetrievalSpec, TimeBin,
};
use timebin_core::scenario::{chsh_settings, entangling_protocol};
use timebin_core::{
    AnalyzerSetting, AtomLevel, ChshAngles, DarkCountProb, DensityOperator, DetectorModel, KrausChannel,
    LossChain, NoiseConfig, Outcome, PhotonMode, ProtocolConfig, PulseSpec, PureState, Register, RydbergLevel,
    SettingsCounts, Subsystem, C64,
};

fn ginibre(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

fn random_state(seed: u64, rank: usize) -> DensityOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ginibre(&mut rng, DIM, rank);
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    DensityOperator::full(rho / tr).unwrap()
}

/// Kraus operators cut from a random isometry.
fn random_channel(seed: u64, n_ops: usize) -> KrausChannel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = ginibre(&mut rng, DIM * n_ops, DIM).qr().q();
    let ops = (0..n_ops).map(|k| q.rows(k * DIM, DIM).into_owned()).collect();
    KrausChannel::new(ops).unwrap()
}

fn random_pure(seed: u64) -> PureState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PureState::from_amplitudes(ginibre(&mut rng, DIM, 1).column(0).into_owned())
        .unwrap()
        .normalized()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { rng_seed: RngSeed::Fixed(0x71b1), ..ProptestConfig::default() })]

    #[test]
    fn channels_preserve_trace(state in any::<u64>(), ch in any::<u64>(), rank in 1usize..6, n in 1usize..5) {
        let rho = random_state(state, rank);
        let out = apply_channel(&rho, &random_channel(ch, n)).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn composition_matches_sequential(state in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let rho = random_state(state, 3);
        let (ca, cb) = (random_channel(a, 2), random_channel(b, 3));
        let seq = apply_channel(&apply_channel(&rho, &ca).unwrap(), &cb).unwrap();
        let composed = apply_channel(&rho, &ca.then(&cb).unwrap()).unwrap();
        prop_assert!(seq.max_abs_diff(&composed) < 1e-9);
    }

    #[test]
    fn fidelity_ignores_global_phase(state in any::<u64>(), psi in any::<u64>(), phase in 0.0..TAU) {
        let rho = random_state(state, 2);
        let psi = random_pure(psi);
        let f0 = state_fidelity(&rho, &psi);
        let f1 = state_fidelity(&rho, &psi.with_global_phase(phase));
        prop_assert!((f0 - f1).abs() < 1e-12);
    }

    #[test]
    fn no_leakage_means_no_sink_population(
        steps in prop::collection::vec((0u8..4, 0.0..TAU, 0.0..TAU, 0.0..1.0f64), 1..10)
    ) {
        let noise = NoiseConfig { pulse_area_error: 0.05, rydberg_dephasing: 0.1, ..NoiseConfig::ideal() };
        let mut rho = pure_to_density(&PureState::basis(AtomLevel::G, PhotonMode::Vac, PhotonMode::Vac)).unwrap();
        let mut used = Vec::new();
        for (kind, area, phase, eta) in steps {
            let level = if kind % 2 == 0 { RydbergLevel::R1 } else { RydbergLevel::R2 };
            if kind < 2 {
                rho = collective_pulse(&rho, &PulseSpec::new(level, area, phase, "p"), &noise).unwrap();
            } else {
                let slot = (if phase < PI { Register::One } else { Register::Two }, if area < PI { TimeBin::E } else { TimeBin::L });
                if used.contains(&slot) { continue; }
                used.push(slot);
                rho = retrieve(&rho, &RetrievalSpec::new(level, slot.0, slot.1, eta)).unwrap();
            }
        }
        prop_assert!(rho.population_where(|a, _, _| a == AtomLevel::D) < 1e-15);
        prop_assert!((rho.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pipeline_preserves_trace(
        leak in 0.0..0.2f64, gamma in 0.0..1.0f64, area_err in -0.2..0.2f64, depol in 0.0..1.0f64,
        eta in 0.0..1.0f64, t in 0.0..1.0f64, dark in 0.0..0.1f64, a in 0.0..FRAC_PI_2, b in 0.0..FRAC_PI_2,
    ) {
        let noise = NoiseConfig {
            blockade_leakage: leak,
            rydberg_dephasing: gamma,
            pulse_area_error: area_err,
            depolarizing_before_readout: depol,
            ..NoiseConfig::ideal()
        };
        let config = ProtocolConfig::full()
            .with_noise(noise)
            .with_retrieval_efficiency(timebin_core::Phase::Entangle, eta)
            .with_retrieval_efficiency(timebin_core::Phase::Readout, eta);
        let rho = run_protocol(&config).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-9);
        let chain = LossChain { detector_efficiency: t, ..LossChain::lossless() };
        let rho = apply_losses(&apply_losses(&rho, &chain, Register::One).unwrap(), &chain, Register::Two).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-9);
        let det = DetectorModel { dark_count_prob: DarkCountProb::Uniform(dark), ..DetectorModel::ideal() };
        let dist = joint_click_distribution(
            &rho,
            &AnalyzerSetting::new(Register::One, a, 0.3),
            &AnalyzerSetting::new(Register::Two, b, 1.2),
            &det,
        ).unwrap();
        prop_assert!((dist.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prepare_phase_shifts_fringe(delta in 0.0..TAU, x in 0.0..TAU) {
        let plus = |cfg: &ProtocolConfig, phi: f64| {
            let rho = run_protocol(cfg).unwrap();
            let d = joint_click_distribution(
                &rho,
                &AnalyzerSetting::eigenbasis(Register::One),
                &AnalyzerSetting::superposition(Register::Two, phi),
                &DetectorModel::ideal(),
            ).unwrap();
            d.prob(Outcome::NoClick, Outcome::PlusPort)
        };
        let base = ProtocolConfig::skip_entangle_phase();
        // pulse 1 is the r2 preparation pulse
        let shifted = base.clone().with_pulse_phase(1, delta);
        let p0 = plus(&base, x);
        let p1 = plus(&shifted, x + delta);
        prop_assert!((p0 - p1).abs() < 1e-12);
        prop_assert!((p0 - (1.0 + x.cos()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn effects_are_positive_and_complete(theta in 0.0..FRAC_PI_2, phi in 0.0..TAU) {
        let e = measurement_effects(&AnalyzerSetting::new(Register::One, theta, phi));
        let sum = &e[0] + &e[1] + &e[2];
        prop_assert!((sum - DMatrix::<C64>::identity(3, 3)).camax() < 1e-12);
        for m in &e {
            let min = m.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min > -1e-12);
        }
    }

    #[test]
    fn losses_scale_clicks(seed in any::<u64>(), t in 0.0..1.0f64, theta in 0.0..FRAC_PI_2, phi in 0.0..TAU) {
        let rho = random_state(seed, 3);
        let s1 = AnalyzerSetting::new(Register::One, theta, phi);
        let s2 = AnalyzerSetting::eigenbasis(Register::Two);
        let chain = LossChain { fiber_coupling: t, ..LossChain::lossless() };
        let det = DetectorModel::ideal();
        let before = joint_click_distribution(&rho, &s1, &s2, &det).unwrap();
        let after = joint_click_distribution(&apply_losses(&rho, &chain, Register::One).unwrap(), &s1, &s2, &det).unwrap();
        let marginal = |d: &timebin_core::OutcomeDistribution, a: Outcome| -> f64 {
            Outcome::ALL.iter().map(|&b| d.prob(a, b)).sum()
        };
        for a in [Outcome::PlusPort, Outcome::MinusPort] {
            prop_assert!((marginal(&after, a) - t * marginal(&before, a)).abs() < 1e-12);
        }
        let none = marginal(&before, Outcome::NoClick);
        prop_assert!((marginal(&after, Outcome::NoClick) - (none + (1.0 - t) * (1.0 - none))).abs() < 1e-12);
    }

    #[test]
    fn dark_counts_reduce_visibility(d1 in 0.0..0.2f64, extra in 1e-4..0.2f64, t in 0.05..1.0f64, a in 0.0..FRAC_PI_2, b in 0.0..FRAC_PI_2) {
        prop_assume!((2.0 * (a - b)).cos().abs() > 1e-3);
        let rho = run_protocol(&ProtocolConfig::full()).unwrap();
        let chain = LossChain { detector_efficiency: t, ..LossChain::lossless() };
        let rho = apply_losses(&apply_losses(&rho, &chain, Register::One).unwrap(), &chain, Register::Two).unwrap();
        let e = |d: f64| {
            let det = DetectorModel { dark_count_prob: DarkCountProb::Uniform(d), ..DetectorModel::ideal() };
            joint_click_distribution(&rho, &AnalyzerSetting::new(Register::One, a, 0.0), &AnalyzerSetting::new(Register::Two, b, 0.0), &det)
                .unwrap()
                .correlation()
                .abs()
        };
        prop_assert!(e(d1 + extra) < e(d1));
    }

    #[test]
    fn fidelity_bound_is_monotone(v1 in 0.0..1.0f64, v2 in 0.0..1.0f64, d1 in 0.0..1.0f64, d2 in 0.0..1.0f64) {
        let (w1, w2) = (v1 + d1 * (1.0 - v1), v2 + d2 * (1.0 - v2));
        prop_assert!(fidelity_bound(w1, w2).unwrap() >= fidelity_bound(v1, v2).unwrap());
    }

    #[test]
    fn correlation_port_swap_symmetry(c in prop::array::uniform9(0u64..1000)) {
        prop_assume!(c[0] + c[1] + c[3] + c[4] > 0);
        let table = |c: [u64; 9]| SettingsCounts {
            settings: (AnalyzerSetting::eigenbasis(Register::One), AnalyzerSetting::eigenbasis(Register::Two)),
            counts: [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]],
            shots: c.iter().sum(),
            afterpulses: 0,
        };
        let swap = |o: usize| [1, 0, 2][o];
        let relabel = |first: bool, second: bool| {
            let mut out = [0u64; 9];
            for a in 0..3 {
                for b in 0..3 {
                    let (ra, rb) = (if first { swap(a) } else { a }, if second { swap(b) } else { b });
                    out[3 * ra + rb] = c[3 * a + b];
                }
            }
            table(out)
        };
        let (e, s) = correlation_e(&table(c)).unwrap();
        let (e_both, s_both) = correlation_e(&relabel(true, true)).unwrap();
        let (e_one, _) = correlation_e(&relabel(false, true)).unwrap();
        prop_assert_eq!((e, s), (e_both, s_both));
        prop_assert!((e + e_one).abs() < 1e-15);
    }

    #[test]
    fn chsh_invariant_under_common_rotation(offset in 0.0..22.5f64) {
        let rho = run_protocol(&entangling_protocol(0.0)).unwrap();
        let s_at = |angles: ChshAngles| {
            let es: Vec<f64> = chsh_settings(&angles)
                .iter()
                .map(|(a, b)| joint_click_distribution(&rho, a, b, &DetectorModel::ideal()).unwrap().correlation())
                .collect();
            (es[0] + es[1] + es[2] - es[3]).abs()
        };
        let c = ChshAngles::CANONICAL;
        let shifted = ChshAngles {
            alpha: c.alpha + offset,
            alpha_star: c.alpha_star + offset,
            beta: c.beta + offset,
            beta_star: c.beta_star + offset,
        };
        prop_assert!((s_at(shifted) - s_at(c)).abs() < 1e-12);
        prop_assert!((s_at(c) - 2.0 * SQRT_2).abs() < 1e-12);
    }
}

#[test]
fn atom_photon_state_has_no_ground_or_sink_population() {
    let rho = pure_to_density(&atom_photon_state(0.7)).unwrap();
    let atom = partial_trace(&rho, &[Subsystem::Atom]).unwrap();
    assert!(atom.matrix()[(AtomLevel::G.index(), AtomLevel::G.index())].norm() < 1e-15);
    assert!(atom.matrix()[(AtomLevel::D.index(), AtomLevel::D.index())].norm() < 1e-15);
}

#[test]
fn retrieve_then_patch_restores_excitation() {
    let start = pure_to_density(&PureState::basis(AtomLevel::R1, PhotonMode::Vac, PhotonMode::Vac)).unwrap();
    let spec = RetrievalSpec::new(RydbergLevel::R1, Register::One, TimeBin::E, 1.0);
    let patch = PulseSpec::new(RydbergLevel::R1, PI, 0.0, "patch");
    let out = collective_pulse(&retrieve(&start, &spec).unwrap(), &patch, &NoiseConfig::ideal()).unwrap();

    // By hand: |R1,Vac,Vac⟩ → |G,E,Vac⟩ → e^{i·0} sin(π/2)|R1,E,Vac⟩.
    let mut hand = DMatrix::<C64>::zeros(DIM, DIM);
    let i = basis_index(AtomLevel::R1, PhotonMode::E, PhotonMode::Vac);
    hand[(i, i)] = C64::new(1.0, 0.0);
    assert!(out.max_abs_diff(&DensityOperator::full(hand).unwrap()) < 1e-12);
}
