use specaug_core::dtm::{dtm_benchmark, dtm_fit, BenchConfig, DtmConfig};
use specaug_core::signal::Segment;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn rates_fall_with_snr_and_favour_the_stronger_vibration() {
    let grid = [f64::INFINITY, 10.0, 0.0, -5.0];
    let rows = dtm_benchmark(&grid, 60, 2024, &BenchConfig::default()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0].rate_v1, rows[0].rate_v2), (1.0, 1.0), "{rows:?}");
    for w in rows.windows(2) {
        assert!(w[1].rate_v1 <= w[0].rate_v1 + 0.05, "{rows:?}");
        assert!(w[1].rate_v2 <= w[0].rate_v2 + 0.05, "{rows:?}");
    }
    for r in &rows {
        assert!(r.rate_v1 >= r.rate_v2, "{r:?}");
        assert_eq!(r.n_trials, 60);
    }
}

#[test]
fn benchmark_is_reproducible_and_rejects_zero_trials() {
    let cfg = BenchConfig::default();
    let a = dtm_benchmark(&[0.0], 8, 5, &cfg).unwrap();
    let b = dtm_benchmark(&[0.0], 8, 5, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(dtm_benchmark(&[0.0], 0, 5, &cfg).is_err());
}

#[test]
fn white_noise_fits_are_flagged_degenerate() {
    let cfg = DtmConfig::default();
    let mut flagged = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..800).map(|_| StandardNormal.sample(&mut rng)).collect();
        let seg = Segment::new(samples, 200.0, None).unwrap();
        let fit = dtm_fit(&seg, &cfg, seed).unwrap();
        let delta = fit.t2 - fit.t1;
        assert!(delta > 0.0 && delta < cfg.tau, "{fit:?}");
        if fit.is_degenerate() {
            flagged += 1;
        }
    }
    assert_eq!(flagged, 100);
}
