use mpsim::signal::{esprit, esprit_screened, synthesize, EspritOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

const DT: f64 = 25e-12;

fn two_mode(n: usize, q1: f64, q2: f64, snr_db: f64, seed: u64) -> Vec<f64> {
    let (f1, f2) = (14.95e9, 15.65e9);
    let (r1, r2) = (PI * f1 / q1, PI * f2 / q2);
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * DT;
            (-r1 * t).exp() * (2.0 * PI * f1 * t).cos() + 0.5 * (-r2 * t).exp() * (2.0 * PI * f2 * t).cos()
        })
        .collect();
    let p = clean.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    clean.into_iter().map(|x| x + noise.sample(&mut rng)).collect()
}

#[test]
fn two_modes_at_40db() {
    for (q1, q2) in [(1e3, 1e3), (1e4, 3e3), (1e5, 1e5), (2e4, 1e5)] {
        for seed in 0..3 {
            let x = two_mode(8000, q1, q2, 40.0, seed);
            let m = esprit(&x, DT, 4, &EspritOptions::default()).unwrap();
            assert_eq!(m.len(), 2, "{m:?}");
            assert!((m[0].freq / 14.95e9 - 1.0).abs() < 1e-3);
            assert!((m[1].freq / 15.65e9 - 1.0).abs() < 1e-3);
            assert!((m[0].q / q1 - 1.0).abs() < 0.05, "{} vs {q1}", m[0].q);
            assert!((m[1].q / q2 - 1.0).abs() < 0.05, "{} vs {q2}", m[1].q);
        }
    }
}

#[test]
fn white_noise_has_no_persistent_modes() {
    let noise = Normal::new(0.0, 1.0).unwrap();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x: Vec<f64> = (0..4000).map(|_| noise.sample(&mut rng)).collect();
        let m = esprit_screened(&x, DT, 4, &EspritOptions::default(), 2e-3).unwrap();
        assert!(m.is_empty(), "seed {seed}: {m:?}");
    }
}

#[test]
fn clean_signal_survives_screening() {
    let x = two_mode(8000, 1e4, 1e4, 200.0, 0);
    let m = esprit_screened(&x, DT, 4, &EspritOptions::default(), 2e-3).unwrap();
    assert_eq!(m.len(), 2);
}

#[test]
fn overlapping_windows_agree() {
    let x = two_mode(8000, 5e3, 8e3, 300.0, 0);
    let cut = x.len() * 8 / 10;
    let a = esprit(&x[..cut], DT, 4, &EspritOptions::default()).unwrap();
    let b = esprit(&x[x.len() - cut..], DT, 4, &EspritOptions::default()).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u.freq / v.freq - 1.0).abs() < 1e-3);
    }
}

#[test]
fn resynthesis_round_trip() {
    let x = two_mode(6000, 2e3, 7e3, 60.0, 3);
    let m = esprit(&x, DT, 4, &EspritOptions::default()).unwrap();
    let y = synthesize(&m, DT, x.len());
    let m2 = esprit(&y, DT, 4, &EspritOptions::default()).unwrap();
    for (u, v) in m.iter().zip(&m2) {
        assert!((u.freq / v.freq - 1.0).abs() < 0.01);
        assert!((u.q / v.q - 1.0).abs() < 0.01);
        assert!((u.amplitude.norm() / v.amplitude.norm() - 1.0).abs() < 0.01);
    }
}

#[test]
fn backward_averaging_is_optional() {
    // Averaging with the time-reversed covariance assumes unit-modulus poles;
    // on an undamped tone it must still return the frequency.
    let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 15.65e9 * i as f64 * DT).sin()).collect();
    let opts = EspritOptions { fb_average: true, ..Default::default() };
    let m = esprit(&x, DT, 2, &opts).unwrap();
    assert!((m[0].freq / 15.65e9 - 1.0).abs() < 1e-6);
}
