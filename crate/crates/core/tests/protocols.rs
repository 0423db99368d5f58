use nvsim::config::{Polarity, ProtocolConfig};
use nvsim::dynamics::{calibrate, CalibrationTargets, RateModel};
use nvsim::protocols::oracle::heralded_readout_fidelity;
use nvsim::protocols::{prepare_nuclear, run_shots, HeraldMode, NuclearReadout, Setup};
use nvsim::register::{HyperfineModel, NuclearConfig};

fn rates(q_nuc: f64) -> RateModel {
    let mut m = calibrate(&CalibrationTargets::default(), &RateModel::default()).unwrap().model;
    m.q_nuc = q_nuc;
    m
}

/// MC fraction of `target`-declared shots after heralding with `mode`.
fn declared_in_target(setup: &Setup, target: NuclearConfig, readout: &NuclearReadout, mode: HeraldMode, shots: usize, seed: u64) -> f64 {
    let hits = run_shots(shots, seed, 0x50_5254, |_, rng| {
        let h = prepare_nuclear(setup, target, 2, mode, rng).unwrap();
        assert!(h.heralded);
        readout.run(setup, &h.state, rng).unwrap().in_target
    });
    hits.iter().filter(|&&b| b).count() as f64 / shots as f64
}

#[test]
fn heralded_readout_monte_carlo_matches_exact_fidelity() {
    let hyperfine = HyperfineModel::nv_b();
    let protocol = ProtocolConfig::default();
    let target = NuclearConfig::n14(-1);
    let n = 3000;
    for (q_nuc, polarity, threshold) in [(2e-3, Polarity::DarkOnTarget, 1), (0.0, Polarity::BrightOnTarget, 2)] {
        let r = rates(q_nuc);
        let setup = Setup::new(&r, &hyperfine, &protocol);
        let exact = heralded_readout_fidelity(&setup, target, 2, 3, threshold, polarity).unwrap();
        let readout = NuclearReadout::new(&setup, target, 3, threshold, polarity).unwrap();
        let on = declared_in_target(&setup, target, &readout, HeraldMode::Target, n, 1);
        let off = 1.0 - declared_in_target(&setup, target, &readout, HeraldMode::Complement, n, 2);
        for (mc, x) in [(on, exact.target), (off, exact.other)] {
            let se = (x * (1.0 - x) / n as f64).sqrt().max(1.0 / n as f64);
            assert!((mc - x).abs() < 4.0 * se, "{polarity:?}: MC {mc:.4} vs exact {x:.4} (SE {se:.4})");
        }
    }
}

#[test]
fn complement_herald_never_returns_the_target_without_pulse_errors() {
    let r = rates(0.0);
    let hyperfine = HyperfineModel::nv_b();
    let protocol = ProtocolConfig::default();
    let setup = Setup::new(&r, &hyperfine, &protocol);
    let target = NuclearConfig::n14(-1);
    let states = run_shots(500, 5, 0x43_4f4d, |_, rng| prepare_nuclear(&setup, target, 1, HeraldMode::Complement, rng).unwrap());
    // selective π leakage is the only route into the heralded set
    let wrong = states.iter().filter(|h| h.state.nuclei == target).count();
    assert!(wrong <= 5, "{wrong} of 500");
    assert!(states.iter().all(|h| h.heralded && h.attempts >= 1));
}
