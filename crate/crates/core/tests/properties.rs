use std::sync::OnceLock;

use faar::baseline::iforest::iforest_fit;
use faar::baseline::p2p::{p2p_reject, peak_to_peak};
use faar::decoder::logreg::logreg_fit;
use faar::decoder::spd::{riemannian_mean, tangent_project, SpdMatrix};
use faar::features::FeatureExtractor;
use faar::knee::{reject, select_threshold};
use faar::metrics::{balanced_accuracy, ece, f1_precision, win_rate};
use faar::model::{default_channel_names, validate_epochs};
use faar::reference::{
    calibrate_epochs, rms_grid, select_clean_windows, standardize_per_channel, update_reference, CalibrationConfig,
    ReferenceModel, SelectionParams,
};
use faar::rng::PortableRng;
use faar::sqi::{epoch_sqi, score_epochs, SqiReport};
use faar::synth::{gen_clean, gen_two_class, inject, ArtifactKind, ArtifactLabel, ClassGainMap, SynthConfig};
use faar::{EpochTensor, Recording};
use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;

const FS: f64 = 250.0;

fn window(seed: u64) -> Vec<f64> {
    let mut rng = PortableRng::new(seed);
    let amp = rng.uniform_in(0.5, 50.0);
    let f = rng.uniform_in(2.0, 40.0);
    (0..250).map(|t| amp * (rng.normal() + (2.0 * std::f64::consts::PI * f * t as f64 / FS).sin())).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn clean_model() -> &'static (EpochTensor, ReferenceModel) {
    static M: OnceLock<(EpochTensor, ReferenceModel)> = OnceLock::new();
    M.get_or_init(|| {
        let e = gen_clean(&SynthConfig { n_epochs: 40, n_channels: 4, seed: 11, ..Default::default() }).unwrap();
        let m = calibrate_epochs(&e, &CalibrationConfig::default()).unwrap().model;
        (e, m)
    })
}

fn random_spd(rng: &mut PortableRng, n: usize) -> SpdMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
    SpdMatrix::new(&a * a.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
}

fn report(sqi: f64, id: u64) -> SqiReport {
    SqiReport { epoch_id: id, sqi, severity: Array3::zeros((0, 0, 0)), worst_channel: 0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_scale_and_shift(seed in any::<u64>(), c in 0.01f64..100.0, neg in any::<bool>(), b in -200.0f64..200.0) {
        let fx = FeatureExtractor::new(FS, 1.0).unwrap();
        let x = window(seed);
        let base = fx.window_features(&x).unwrap();
        let signed = if neg { -c } else { c };
        let scaled = fx.window_features(&x.iter().map(|v| signed * v).collect::<Vec<_>>()).unwrap();
        prop_assert!(close(scaled.rms, c * base.rms, 1e-9));
        prop_assert!(close(scaled.max_grad, c * base.max_grad, 1e-9));
        prop_assert!(close(scaled.band_mag, c * base.band_mag, 1e-9));
        prop_assert!(close(scaled.kurt, base.kurt, 1e-9));
        let positive = fx.window_features(&x.iter().map(|v| c * v).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(positive.zcr, base.zcr);
        let shifted = fx.window_features(&x.iter().map(|v| v + b).collect::<Vec<_>>()).unwrap();
        prop_assert!(close(shifted.kurt, base.kurt, 1e-9));
        prop_assert!(close(shifted.max_grad, base.max_grad, 1e-9));
        prop_assert!(close(shifted.band_mag, base.band_mag, 1e-9));
        prop_assert!(base.to_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sqi_is_bounded_and_deterministic(seed in any::<u64>(), spread in 0.0f64..1e4) {
        let (_, m) = clean_model();
        let mut rng = PortableRng::new(seed);
        let mut grid = FeatureExtractor::new(FS, 1.0).unwrap().grid(clean_model().0.epoch(0)).unwrap();
        grid.values.mapv_inplace(|v| v + spread * rng.normal());
        let a = epoch_sqi(0, &grid, m).unwrap();
        let b = epoch_sqi(0, &grid, m).unwrap();
        prop_assert!((0.0..=3.0).contains(&a.sqi));
        prop_assert_eq!(a.sqi.to_bits(), b.sqi.to_bits());
    }

    #[test]
    fn sqi_is_monotone_in_each_cell(epoch in 0usize..40, cell in any::<prop::sample::Index>(), k in 1.0f64..20.0) {
        let (e, m) = clean_model();
        let grid = FeatureExtractor::new(FS, 1.0).unwrap().grid(e.epoch(epoch)).unwrap();
        let (w, c, f) = grid.values.dim();
        let i = cell.index(w * c * f);
        let (wi, ci, fi) = (i / (c * f), (i / f) % c, i % f);
        let mut pushed = grid.clone();
        let mu = m.mean[ci][fi];
        let v = grid.values[[wi, ci, fi]];
        pushed.values[[wi, ci, fi]] = if v == mu { mu + k * m.std[ci][fi] } else { mu + k * (v - mu) };
        prop_assert!(epoch_sqi(0, &pushed, m).unwrap().sqi >= epoch_sqi(0, &grid, m).unwrap().sqi);
    }

    #[test]
    fn sqi_is_channel_permutation_equivariant(perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
        let (e, m) = clean_model();
        let mut pe = e.clone();
        for (dst, &src) in perm.iter().enumerate() {
            pe.data.index_axis_mut(Axis(1), dst).assign(&e.data.index_axis(Axis(1), src));
            pe.channel_names[dst] = e.channel_names[src].clone();
        }
        let mut pm = m.clone();
        for (dst, &src) in perm.iter().enumerate() {
            pm.mean[dst] = m.mean[src].clone();
            pm.std[dst] = m.std[src].clone();
            pm.channel_names[dst] = m.channel_names[src].clone();
        }
        let a = score_epochs(e, m, 1.0).unwrap();
        let b = score_epochs(&pe, &pm, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.sqi, y.sqi);
        }
    }

    #[test]
    fn clean_selection_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3, bursts in 0usize..4) {
        let mut rng = PortableRng::new(seed);
        let mut data = Array2::from_shape_fn((4, 30 * 100), |_| rng.normal());
        for _ in 0..bursts {
            let (ch, w) = (rng.below(4), rng.below(30));
            data.slice_mut(ndarray::s![ch, w * 100..(w + 1) * 100]).mapv_inplace(|v| 10.0 * v);
        }
        let r = Recording::new(data.clone(), 100.0, default_channel_names(4), "S", "0").unwrap();
        let rc = Recording::new(data * c, 100.0, default_channel_names(4), "S", "0").unwrap();
        let params = SelectionParams::default();
        let a = select_clean_windows(&standardize_per_channel(&rms_grid(&r, 1.0).unwrap()).unwrap(), &params).unwrap();
        let b = select_clean_windows(&standardize_per_channel(&rms_grid(&rc, 1.0).unwrap()).unwrap(), &params).unwrap();
        prop_assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn rejection_is_monotone_in_threshold(sqis in prop::collection::vec(0.0f64..3.0, 5..80), t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
        let reports: Vec<SqiReport> = sqis.iter().enumerate().map(|(i, s)| report(*s, i as u64)).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let strict = reject(&reports, lo);
        let loose = reject(&reports, hi);
        for (s, l) in strict.iter().zip(&loose) {
            prop_assert!(s.rejected || !l.rejected);
        }
    }

    #[test]
    fn threshold_survives_duplication(levels in prop::collection::vec(0u32..60, 5..80), k in 2usize..5) {
        // SQIs are means of integer severities over a fixed cell count
        let sqis: Vec<f64> = levels.iter().map(|v| *v as f64 / 20.0).collect();
        let dup: Vec<f64> = sqis.iter().cycle().take(sqis.len() * k).copied().collect();
        let a = select_threshold(&sqis, 1.0).unwrap();
        let b = select_threshold(&dup, 1.0).unwrap();
        let mut distinct = sqis.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let rank = |t: f64| if t.is_finite() { distinct.iter().position(|v| *v == t).map(|p| p as i64) } else { Some(distinct.len() as i64) };
        let (ra, rb) = (rank(a).unwrap(), rank(b).unwrap());
        prop_assert!((ra - rb).abs() <= 1, "{a} vs {b}");
    }

    #[test]
    fn p2p_ignores_channel_offsets(seed in any::<u64>(), offsets in prop::collection::vec(-1000i32..1000, 3), thr in 1.0f64..200.0) {
        let mut rng = PortableRng::new(seed);
        let data = Array3::from_shape_fn((6, 3, 100), |_| (rng.normal() * 20.0).round());
        let e = EpochTensor::new(data.clone(), 100.0, default_channel_names(3)).unwrap();
        let mut shifted = data;
        for (c, o) in offsets.iter().enumerate() {
            shifted.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + *o as f64);
        }
        let s = EpochTensor::new(shifted, 100.0, default_channel_names(3)).unwrap();
        prop_assert_eq!(peak_to_peak(&e), peak_to_peak(&s));
        prop_assert_eq!(p2p_reject(&e, thr).unwrap(), p2p_reject(&s, thr).unwrap());
    }

    #[test]
    fn iforest_scores_are_open_unit_and_deterministic(seed in any::<u64>(), n in 20usize..300, d in 1usize..6) {
        let mut rng = PortableRng::new(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.normal());
        let f = iforest_fit(x.view(), 50, 64, seed).unwrap();
        let a = f.score_rows(x.view()).unwrap();
        prop_assert!(a.iter().all(|s| *s > 0.0 && *s < 1.0));
        let g = iforest_fit(x.view(), 50, 64, seed).unwrap();
        prop_assert_eq!(a, g.score_rows(x.view()).unwrap());
    }

    #[test]
    fn tangent_vanishes_only_at_the_reference(seed in any::<u64>(), delta in 0.05f64..2.0) {
        let mut rng = PortableRng::new(seed);
        let m = random_spd(&mut rng, 4);
        let at = tangent_project(&m, &m).unwrap();
        prop_assert!(at.iter().all(|v| v.abs() < 1e-10));
        let c = SpdMatrix::new(m.matrix() + DMatrix::identity(4, 4) * delta).unwrap();
        let away = tangent_project(&c, &m).unwrap();
        prop_assert!(away.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-3);
    }

    #[test]
    fn riemannian_mean_is_affine_invariant(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = PortableRng::new(seed);
        let mats: Vec<SpdMatrix> = (0..k).map(|_| random_spd(&mut rng, 3)).collect();
        let a = DMatrix::identity(3, 3) + DMatrix::from_fn(3, 3, |_, _| 0.3 * rng.normal());
        let moved: Vec<SpdMatrix> = mats
            .iter()
            .map(|c| SpdMatrix::new(a.transpose() * c.matrix() * &a).unwrap())
            .collect();
        let m = riemannian_mean(&mats, 1e-12, 200).unwrap().mean;
        let mm = riemannian_mean(&moved, 1e-12, 200).unwrap().mean;
        let expected = a.transpose() * m.matrix() * &a;
        let err = (mm.matrix() - &expected).abs().max() / expected.abs().max();
        prop_assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn logreg_loss_never_increases(seed in any::<u64>(), n in 10usize..80, d in 1usize..5, l2 in 0.0f64..1.0) {
        let mut rng = PortableRng::new(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.normal());
        let mut y: Vec<u32> = (0..n).map(|i| u32::from(x[[i, 0]] + rng.normal() > 0.0)).collect();
        y[0] = 0;
        y[1] = 1;
        let fit = logreg_fit(x.view(), &y, l2).unwrap();
        prop_assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rate_metrics_are_bounded_and_invariant(pairs in prop::collection::vec((0u32..2, 0u32..2, 0.0f64..1.0), 2..60), k in 1usize..4) {
        let mut t: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let pr: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        let proba: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        t[0] = 0;
        t[1] = 1;
        let ba = balanced_accuracy(&t, &pr).unwrap();
        let (f1, prec) = f1_precision(&t, &pr, 1).unwrap();
        let e = ece(&t, &proba, 1, 10).unwrap();
        for v in [ba, f1, prec, e] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let relabel = |v: &[u32]| v.iter().map(|c| 7 + 3 * c).collect::<Vec<_>>();
        prop_assert_eq!(balanced_accuracy(&relabel(&t), &relabel(&pr)).unwrap(), ba);
        let dup = |v: &[u32]| v.iter().cycle().take(v.len() * k).copied().collect::<Vec<_>>();
        prop_assert!((balanced_accuracy(&dup(&t), &dup(&pr)).unwrap() - ba).abs() < 1e-12);
    }

    #[test]
    fn a_method_never_beats_itself(bas in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let m = bas.iter().enumerate().map(|(i, v)| (format!("S{i}"), *v)).collect();
        prop_assert_eq!(win_rate(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn validation_is_idempotent(seed in any::<u64>(), n in 1usize..6, c in 1usize..4) {
        let mut rng = PortableRng::new(seed);
        let data = Array3::from_shape_fn((n, c, 16), |_| rng.normal());
        let once = validate_epochs(EpochTensor::new(data, 64.0, default_channel_names(c)).unwrap()).unwrap();
        prop_assert_eq!(validate_epochs(once.clone()).unwrap(), once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>(), ratio in 1.0f64..4.0) {
        let cfg = SynthConfig { n_epochs: 4, n_channels: 3, seed, ..Default::default() };
        prop_assert_eq!(gen_clean(&cfg).unwrap(), gen_clean(&cfg).unwrap());
        let map = ClassGainMap::ratio(vec![0], ratio);
        prop_assert_eq!(gen_two_class(&cfg, &map).unwrap(), gen_two_class(&cfg, &map).unwrap());
    }

    #[test]
    fn injection_raises_sqi(epoch in 0usize..40, kind in 0usize..4, scale in 5.0f64..30.0, seed in any::<u64>()) {
        let (e, m) = clean_model();
        let kind = ArtifactKind::PLANTED[kind];
        let mut rng = PortableRng::new(seed);
        let affected = faar::synth::default_affected_channels(kind, e.n_channels(), &mut rng);
        let label = ArtifactLabel { epoch_id: e.epoch_ids[epoch], kind, affected_channels: affected, scale };
        let dirty = inject(e, &[label], seed).unwrap();
        let before = score_epochs(e, m, 1.0).unwrap()[epoch].sqi;
        let after = score_epochs(&dirty, m, 1.0).unwrap()[epoch].sqi;
        prop_assert!(after > before, "{kind:?} ×{scale}: {before} -> {after}");
    }
}

#[test]
fn forgetting_of_one_keeps_the_reference() {
    let (e, m) = clean_model();
    let grid = FeatureExtractor::new(FS, 1.0).unwrap().grid(e.epoch(0)).unwrap();
    let next = update_reference(m, grid.values.index_axis(Axis(0), 0), 1.0);
    assert_eq!((&next.mean, &next.std), (&m.mean, &m.std));
    assert_eq!(next.n_windows, m.n_windows + 1);
}
