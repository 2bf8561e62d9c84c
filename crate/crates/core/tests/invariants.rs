use std::collections::BTreeSet;

use beampred::beamsim::{
    build_codebook, optimal_beam, receive_power, synth_channel, ArrayConfig, ChannelState, Propagation,
};
use beampred::dataset::{generate_scenario, generate_samples, split_dataset, ScenarioConfig, POSITION_LEN, SEQUENCE_LEN};
use beampred::exec::Exec;
use beampred::geodesy::{apply_minmax, fit_minmax, latlon_to_utm, relative_position, GeoPosition};
use beampred::model::{gru_forward, loss_and_gradients, rank_logits, ModelConfig, ModelParams};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn array(m: usize, q: usize, k: usize) -> ArrayConfig {
    ArrayConfig {
        num_antennas: m,
        num_beams: q,
        num_subcarriers: k,
        ..ArrayConfig::default()
    }
}

fn random_channel(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<Complex64>> {
    (0..k)
        .map(|_| {
            (0..m)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codebook_beams_have_unit_norm(m in 1usize..=32, extra in 0usize..=64, sector in 0.05f64..=1.0) {
        let cfg = ArrayConfig { sector, ..array(m, m + extra, 1) };
        let cb = build_codebook(&cfg).unwrap();
        for f in cb.beams() {
            let norm: f64 = f.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn receive_power_matches_triple_loop(seed in any::<u64>(), m in 1usize..=8, q_extra in 0usize..=8, k in 1usize..=4) {
        let q = (m + q_extra).min(16);
        let cfg = array(m, q, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_channel(&mut rng, m, k);
        let tx = rng.random_range(0.1..3.0);
        let ch = ChannelState::new(h.clone(), 0.0, tx).unwrap();
        let cb = build_codebook(&cfg).unwrap();
        let got = receive_power(&ch, &cb).unwrap();
        for qi in 0..q {
            let f = cb.beam(qi);
            let mut acc = 0.0;
            for hk in &h {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..m {
                    re += hk[i].re * f[i].re - hk[i].im * f[i].im;
                    im += hk[i].re * f[i].im + hk[i].im * f[i].re;
                }
                acc += re * re + im * im;
            }
            let want = tx * acc / k as f64;
            prop_assert!((got.as_slice()[qi] - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn scaling_channel_scales_power(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.hypot(im) > 1e-3);
        let cfg = array(8, 32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = ChannelState::new(random_channel(&mut rng, 8, 3), 0.0, 1.0).unwrap();
        let cb = build_codebook(&cfg).unwrap();
        let c = Complex64::new(re, im);
        let base = receive_power(&ch, &cb).unwrap();
        let scaled = receive_power(&ch.scaled(c), &cb).unwrap();
        for (a, b) in base.as_slice().iter().zip(scaled.as_slice()) {
            prop_assert!((b - a * c.norm_sqr()).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        prop_assert_eq!(optimal_beam(base.as_slice()).unwrap(), optimal_beam(scaled.as_slice()).unwrap());
    }

    #[test]
    fn minmax_maps_extremes_and_keeps_order(points in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 2..50)) {
        let pts: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x, y]).collect();
        let stats = fit_minmax(&pts).unwrap();
        for axis in 0..2 {
            let lo = pts.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            let mut min_p = [0.0; 2];
            min_p[axis] = lo;
            let mut max_p = [0.0; 2];
            max_p[axis] = hi;
            if hi > lo {
                prop_assert_eq!(apply_minmax(min_p, &stats)[axis], 0.0);
                prop_assert_eq!(apply_minmax(max_p, &stats)[axis], 1.0);
            }
        }
        for a in &pts {
            for b in &pts {
                let (na, nb) = (apply_minmax(*a, &stats), apply_minmax(*b, &stats));
                for axis in 0..2 {
                    if a[axis] < b[axis] {
                        prop_assert!(na[axis] <= nb[axis]);
                    }
                }
            }
        }
    }

    #[test]
    fn one_metre_steps_stay_one_metre(lat in -60.0f64..60.0, lon in -179.0f64..179.0, bearing in 0.0f64..360.0) {
        let p = GeoPosition::new(lat, lon).unwrap();
        let (s, c) = bearing.to_radians().sin_cos();
        let q = p.offset(s, c);
        let a = latlon_to_utm(&p).unwrap();
        let b = beampred::geodesy::latlon_to_utm_zone(&q, a.zone).unwrap();
        let d = relative_position(&b, &a).unwrap();
        prop_assert!((d[0].hypot(d[1]) - 1.0).abs() < 0.01);
    }

    #[test]
    fn shifting_logits_keeps_ranking(logits in prop::collection::vec(-50.0f64..50.0, 2..64), shift in -100.0f64..100.0, k in 1usize..4) {
        let k = k.min(logits.len());
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        // a shift can merge nearly equal logits through rounding; only compare distinct ones
        let mut sorted = logits.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
        prop_assert_eq!(rank_logits(&logits, k), rank_logits(&shifted, k));
    }

    #[test]
    fn hidden_states_inside_open_interval(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let cfg = ModelConfig { hidden_dim: 6, num_classes: 5, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = gru_forward(&p, &x).unwrap();
        prop_assert!(out.hidden_states.iter().flatten().flatten().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn cross_entropy_finite_for_huge_logits() {
    let cfg = ModelConfig {
        hidden_dim: 4,
        num_classes: 3,
        ..ModelConfig::default()
    };
    let mut p = ModelParams::zeros(&cfg).unwrap();
    p.tensor_mut("fc.b").unwrap().copy_from_slice(&[1e3, -1e3, 0.0]);
    for label in 0..3 {
        let (loss, grad) = loss_and_gradients(&p, &[vec![0.1; 4]], &[label]).unwrap();
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
    }
    let (loss, _) = loss_and_gradients(&p, &[vec![0.1; 4]], &[1]).unwrap();
    assert!((loss - 2e3).abs() < 1e-9);
}

fn scenario(noise: f64, trajectories: usize, seed: u64) -> ScenarioConfig {
    let bs = GeoPosition::new(40.4168, -3.7038).unwrap();
    ScenarioConfig {
        gps_noise_std: noise,
        ..ScenarioConfig::from_local(3, bs, 30.0, [-150.0, 200.0], [150.0, 220.0], trajectories, 12.0, seed)
    }
}

#[test]
fn gps_noise_has_configured_spread() {
    let cfg = scenario(1.5, 40, 17);
    let trajs = generate_scenario(&cfg, &ArrayConfig::default()).unwrap();
    let mut errs = Vec::new();
    for r in trajs.iter().flat_map(|t| &t.records) {
        let truth = latlon_to_utm(&r.true_position).unwrap();
        let gps = latlon_to_utm(&r.gps_position).unwrap();
        errs.extend(relative_position(&gps, &truth).unwrap());
    }
    assert!(errs.len() >= 10_000, "{} error samples", errs.len());
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std / 1.5 - 1.0).abs() < 0.05, "empirical std {std}");
}

#[test]
fn labels_are_argmax_and_schema_holds() {
    let samples = generate_samples(Exec::default(), &[scenario(1.0, 3, 2)], &ArrayConfig::default(), 100).unwrap();
    assert!(!samples.is_empty());
    for s in &samples {
        let pv = s.power_vector.as_ref().unwrap();
        assert_eq!(pv.len(), 64);
        assert_eq!(s.label, Some(optimal_beam(pv.as_slice()).unwrap()));
        assert_eq!(s.positions.len(), POSITION_LEN);
        assert_eq!(s.modality_refs.image.len(), SEQUENCE_LEN);
        assert_eq!(s.modality_refs.lidar.len(), SEQUENCE_LEN);
        assert_eq!(s.modality_refs.radar.len(), SEQUENCE_LEN);
    }
    let ids: Vec<u64> = samples.iter().map(|s| s.sample_id).collect();
    assert_eq!(ids, (100..100 + samples.len() as u64).collect::<Vec<_>>());
}

#[test]
fn split_is_a_partition() {
    let samples = generate_samples(Exec::default(), &[scenario(1.0, 2, 4)], &ArrayConfig::default(), 0).unwrap();
    let split = split_dataset(&samples, [0.6, 0.25, 0.15], 8).unwrap();
    let parts: Vec<BTreeSet<u64>> = [&split.train, &split.validation, &split.test]
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    assert_eq!(parts.iter().map(BTreeSet::len).sum::<usize>(), samples.len());
    assert!(parts[0].is_disjoint(&parts[1]) && parts[0].is_disjoint(&parts[2]) && parts[1].is_disjoint(&parts[2]));
    let all: BTreeSet<u64> = parts.iter().flatten().copied().collect();
    assert_eq!(all, samples.iter().map(|s| s.sample_id).collect());
}

#[test]
fn generation_identical_across_exec_modes() {
    let cfg = scenario(1.0, 6, 99);
    let a = generate_samples(Exec::Sequential, &[cfg.clone()], &ArrayConfig::default(), 0).unwrap();
    let b = generate_samples(Exec::default(), &[cfg], &ArrayConfig::default(), 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn los_peak_neighbourhood_keeps_half_power() {
    let cfg = ArrayConfig::default();
    let cb = build_codebook(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let y = rng.random_range(50.0..300.0);
        let x = y * rng.random_range(-0.45..0.45);
        let ch = synth_channel([x, y], &[], &cfg, &Propagation::default()).unwrap();
        let p = receive_power(&ch, &cb).unwrap();
        let p = p.as_slice();
        let best = optimal_beam(p).unwrap();
        let lo = best.saturating_sub(3);
        let hi = (best + 3).min(cfg.num_beams - 1);
        for q in lo..=hi {
            assert!(p[q] >= 0.5 * p[best], "beam {q} vs optimum {best}");
        }
    }
}
