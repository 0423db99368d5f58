use nvsim::analysis::dwell::{fit_dwells, kolmogorov_survival, ks_exponential, segment_dwells};
use nvsim::analysis::fit::{fit_rabi, multi_line_flip, RabiLine};
use nvsim::analysis::spectrum::{fit_gaussians, line_grid, line_positions};
use nvsim::analysis::{estimate_fidelity, optimize_window};
use nvsim::analysis::fidelity::TimestampRecords;
use nvsim::protocols::Declared;
use nvsim::register::{HyperfineModel, NuclearConfig};
use nvsim::rng::labelled_rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gaussian_fit_recovers_noiseless_amplitudes(amps in prop::collection::vec(0.0f64..0.5, 12), baseline in 0.5f64..1.0) {
        let m = HyperfineModel::nv_b();
        let lines = line_positions(&m, Some(NuclearConfig::n14(-1)), None);
        prop_assert!(lines.len() <= amps.len());
        let grid = line_grid(&m, None, &[-1.0, -0.5, 0.0, 0.5, 1.0], 30);
        let s = m.linewidth;
        let y: Vec<f64> = grid
            .iter()
            .map(|f| baseline - lines.iter().zip(&amps).map(|(l, a)| a * (-(f - l.frequency).powi(2) / (2.0 * s * s)).exp()).sum::<f64>())
            .collect();
        let fit = fit_gaussians(&grid, &y, &vec![0.01; y.len()], &lines, s).unwrap();
        prop_assert!((fit.baseline.value - baseline).abs() < 1e-9);
        for (l, a) in fit.lines.iter().zip(&amps) {
            prop_assert!((l.amplitude.value - a).abs() < 1e-9);
        }
    }

    #[test]
    fn rabi_fit_recovers_noiseless_parameters(rabi in 0.5f64..3.0, c in 0.8f64..0.95, a in 0.3f64..0.7, split in 0.0f64..2.5) {
        let lines: Vec<RabiLine> = [-split, 0.0, split].iter().map(|&d| RabiLine { detuning: d, weight: 1.0 }).collect();
        let t: Vec<f64> = (0..40).map(|i| 0.05 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|&t| c - a * multi_line_flip(&lines, rabi, t)).collect();
        let fit = fit_rabi(&t, &y, &vec![0.01; t.len()], &lines).unwrap();
        prop_assert!((fit.rabi.value - rabi).abs() < 1e-4 * rabi, "{} vs {rabi}", fit.rabi.value);
        prop_assert!((fit.amplitude.value - a).abs() < 1e-4);
        let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(fit.visibility.value >= range - 1e-6);
    }

    #[test]
    fn binned_exponential_dwells_pass_ks(mean_bins in 3.0f64..30.0, seed in any::<u64>()) {
        let mut rng = labelled_rng(seed, 7, 0);
        let exp = Exp::new(1.0 / mean_bins).unwrap();
        let lengths: Vec<u32> = (0..400).map(|_| exp.sample(&mut rng).ceil().max(1.0) as u32).collect();
        let fit = fit_dwells(&lengths, 5.0, 0).unwrap();
        prop_assert!(fit.p_value > 1e-4, "p {}", fit.p_value);
        // continuous mean is estimated from whole bins minus half a bin
        prop_assert!((fit.mean.value - 5.0 * mean_bins).abs() < 5.0 * fit.mean.se + 2.5);
    }

    #[test]
    fn dwell_segmentation_partitions_inner_runs(trace in prop::collection::vec(any::<bool>(), 0..200)) {
        let d = segment_dwells(&trace);
        let inner: u32 = d.bright.iter().chain(&d.dark).sum();
        prop_assert!(inner as usize <= trace.len());
        prop_assert!(d.bright.iter().chain(&d.dark).all(|&k| k >= 1));
    }
}

#[test]
fn equal_dwells_fail_ks() {
    let fit = fit_dwells(&[4; 300], 5.0, 0).unwrap();
    assert!(fit.p_value < 1e-6, "{}", fit.p_value);
    assert!(kolmogorov_survival(0.0) == 1.0);
    let x: Vec<f64> = (1..=1000).map(|i| -(1.0 - (i as f64 - 0.5) / 1000.0).ln()).collect();
    assert!(ks_exponential(&x, 1.0) < 0.002);
}

#[test]
fn fidelity_estimates_on_known_lists() {
    let bright = vec![Declared::Ms0; 90].into_iter().chain(vec![Declared::Pm1; 10]).collect::<Vec<_>>();
    let dark = vec![Declared::Pm1; 100];
    let r = estimate_fidelity(&bright, &dark).unwrap();
    assert!((r.f_ms0.value - 0.9).abs() < 1e-12);
    assert!((r.f_pm1.value - 1.0).abs() < 1e-12);
    assert!((r.f_avg.value - 0.95).abs() < 1e-12);
    // 2 SE of a 0.9 proportion over 100 shots
    assert!((r.f_ms0.half_width - 0.06).abs() < 1e-12);
    assert!(estimate_fidelity(&[], &dark).is_err());
}

#[test]
fn window_search_finds_the_planted_optimum() {
    // bright shots click once in [0, 10); dark shots click only after 30 µs
    let mut rng = labelled_rng(3, 9, 0);
    let bright = (0..500).map(|_| vec![rng.random::<f64>() * 10.0]).collect();
    let dark = (0..500).map(|_| vec![30.0 + rng.random::<f64>() * 70.0]).collect();
    let rec = TimestampRecords { duration: 100.0, bright, dark };
    let r = optimize_window(&rec, &[5.0, 10.0, 20.0, 40.0, 100.0], &[1, 2]).unwrap();
    let c = r.optimizer.unwrap();
    assert_eq!((c.duration, c.threshold), (10.0, 1));
    assert_eq!(r.f_avg.value, 1.0);
}
