mod common;

use std::time::Instant;

use common::{burst_recording, stream_all, STREAM_EPOCH_S as EPOCH_S, STREAM_WINDOW_S as WINDOW_S};
use faar::io::stream::{encode_recording, read_frame, read_handshake, StreamConfig, StreamEngine};
use faar::knee::{reject, select_threshold};
use faar::reference::{calibrate_recording, CalibrationConfig};
use faar::sqi::score_epochs;
use faar::Recording;
use ndarray::s;

#[test]
fn online_decisions_equal_offline_reject_once_the_buffer_covers_the_batch() {
    for seed in 0..5 {
        let r = burst_recording(seed, 70.0);
        let cfg = StreamConfig { lambda: 1.0, buffer: 1000, ..Default::default() };
        let (engine, online) = stream_all(&r, cfg);
        let warm_s = engine.warmup_duration_s();
        assert_eq!(warm_s, 10.0);

        let fs = r.fs;
        let warm = Recording::new(
            r.data.slice(s![.., ..(warm_s * fs) as usize]).to_owned(),
            fs,
            r.channel_names.clone(),
            "stream",
            "0",
        )
        .unwrap();
        let model = calibrate_recording(&warm, &CalibrationConfig { forgetting: 1.0, ..Default::default() }).unwrap().model;
        let live = engine.reference().unwrap();
        assert_eq!((&live.mean, &live.std), (&model.mean, &model.std));

        let epochs = r.epochs(warm_s, EPOCH_S).unwrap();
        let reports = score_epochs(&epochs, &model, WINDOW_S).unwrap();
        assert_eq!(online.len(), reports.len());
        for (k, (d, rep)) in online.iter().zip(&reports).enumerate() {
            assert_eq!(d.epoch_id, engine.first_scored_epoch() + k as u64);
            assert_eq!(d.sqi, rep.sqi);
            // each online decision uses the threshold of the prefix seen so far
            let prefix: Vec<f64> = reports[..=k].iter().map(|r| r.sqi).collect();
            let want = if prefix.len() < 5 { f64::INFINITY } else { select_threshold(&prefix, 1.0).unwrap() };
            assert_eq!(d.threshold.to_bits(), want.to_bits(), "seed {seed} epoch {k}");
        }

        let sqis: Vec<f64> = reports.iter().map(|r| r.sqi).collect();
        let offline = reject(&reports, select_threshold(&sqis, 1.0).unwrap());
        let batch = engine.buffered_decisions();
        assert_eq!(batch.len(), offline.len());
        for (b, o) in batch.iter().zip(&offline) {
            assert_eq!((b.sqi, b.rejected, b.threshold.to_bits()), (o.sqi, o.rejected, o.threshold.to_bits()));
        }
        assert!(offline.iter().filter(|d| d.rejected).count() >= 3, "seed {seed}: bursts were not rejected");
    }
}

#[test]
fn reference_adapts_only_on_kept_epochs() {
    let r = burst_recording(1, 70.0);
    let (frozen, kept_frozen) = stream_all(&r, StreamConfig { lambda: 1.0, ..Default::default() });
    let (adaptive, kept_adaptive) = stream_all(&r, StreamConfig { lambda: 0.99, ..Default::default() });
    let per_epoch = (EPOCH_S / WINDOW_S) as usize;
    for (engine, decisions) in [(&frozen, &kept_frozen), (&adaptive, &kept_adaptive)] {
        let kept = decisions.iter().filter(|d| !d.rejected).count();
        assert!(kept < decisions.len(), "the bursts should be rejected");
        let warm_windows = (engine.warmup_duration_s() / WINDOW_S) as usize;
        let live = engine.reference().unwrap();
        // calibration counts its selected windows; only clean windows of kept epochs add one
        assert!(live.n_windows <= warm_windows + kept * per_epoch);
    }
    assert_ne!(frozen.reference().unwrap().mean, adaptive.reference().unwrap().mean);
}

#[test]
fn decisions_arrive_when_their_epoch_completes() {
    let r = burst_recording(2, 40.0);
    let bytes = encode_recording(&r, WINDOW_S, EPOCH_S).unwrap();
    let mut input = &bytes[..];
    let hs = read_handshake(&mut input).unwrap();
    let mut engine = StreamEngine::new(hs, StreamConfig::default()).unwrap();
    let warm = (engine.warmup_duration_s() / WINDOW_S) as usize;
    let per_epoch = (EPOCH_S / WINDOW_S) as usize;
    let mut slowest = 0.0f64;
    let mut i = 0;
    while let Some(w) = read_frame(&mut input, &hs).unwrap() {
        let t = Instant::now();
        let d = engine.push_window(w.view()).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let completes = i >= warm && (i - warm + 1) % per_epoch == 0;
        assert_eq!(d.is_some(), completes, "window {i}");
        if let Some(d) = d {
            assert_eq!(d.epoch_id as usize, (i + 1) / per_epoch - 1);
        }
        i += 1;
    }
    assert!(slowest < WINDOW_S, "slowest window took {slowest} s");
}
