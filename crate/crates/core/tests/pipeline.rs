use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmr_core::dtc::CompressionMethod;
use vmr_core::harness::suite::synthetic_specs;
use vmr_core::harness::{generate_synthetic, simulate, PredictorKind, RunConfig, SyntheticSpec, VideoProfile};
use vmr_core::ifs::run_ifs;
use vmr_core::metrics::{evaluate, EvalPair, MapProtocol, MetricAccumulator};
use vmr_core::timecode::TimeKind;
use vmr_core::Moment;

#[test]
fn charades_profile_satisfies_every_stage_contract() {
    let mut cfg = RunConfig::charades_profile();
    cfg.videos = 25;
    let res = simulate(&cfg).unwrap();
    for out in &res.outputs {
        out.split.validate(60).unwrap();
        assert_eq!(out.split.k(), 32);
        assert_eq!(out.split.key_indices[0], 0);
        assert_eq!(out.total_tokens, 1472);
        assert_eq!(out.sequence_len, 6 * 60 + 2);
        assert_eq!(out.scheme_kind, TimeKind::RelativeIndex);
        assert!(!out.parsed.was_fallback);
    }
    assert_eq!(res.report.r1_at(0.5), Some(100.0));
    assert_eq!(res.report.miou, 100.0);
}

#[test]
fn qvhighlights_profile_uses_timestamps() {
    let mut cfg = RunConfig::qvhighlights_profile();
    cfg.videos = 10;
    let res = simulate(&cfg).unwrap();
    for out in &res.outputs {
        assert_eq!(out.scheme_kind, TimeKind::RoundedTimestamp);
        assert_eq!(out.total_tokens, 32 * 32 + 48 * 16);
        assert_eq!(out.sequence_len, 6 * 80 + 2);
    }
    // whole-second rounding moves each endpoint by at most 0.5 s
    assert_eq!(res.report.r1_at(0.7), Some(100.0));
}

#[test]
fn disabling_selection_and_compression_leaves_encode_parse_eval() {
    let mut cfg = RunConfig::default();
    cfg.videos = 8;
    cfg.pipeline.k = cfg.video.n_frames;
    cfg.pipeline.method = CompressionMethod::None;
    let res = simulate(&cfg).unwrap();
    for out in &res.outputs {
        assert!(out.split.nonkey_indices.is_empty());
        assert_eq!(out.total_tokens, 60 * 32);
    }
    assert_eq!(res.report.map_at(0.75), Some(100.0));

    // each toggle on its own still respects the token law
    cfg.pipeline.k = 16;
    let res = simulate(&cfg).unwrap();
    assert!(res.outputs.iter().all(|o| o.total_tokens == 60 * 32));
    cfg.pipeline.k = 60;
    cfg.pipeline.method = CompressionMethod::AveragePooling;
    let res = simulate(&cfg).unwrap();
    assert!(res.outputs.iter().all(|o| o.total_tokens == 60 * 32));
}

#[test]
fn planted_boundaries_become_key_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let profile = VideoProfile {
        noise_std: 0.0,
        ..VideoProfile::default()
    };
    for i in 0..1000 {
        let spec = SyntheticSpec::random(format!("b{i}"), &profile, rng.random()).unwrap();
        let (frames, _) = generate_synthetic(&spec).unwrap();
        let boundaries = spec.boundaries();
        let (split, _) = run_ifs(&frames, 1.0, boundaries.len() + 1).unwrap();
        for b in &boundaries {
            assert!(
                split.key_indices.contains(b),
                "spec {i}: boundary {b} missed, keys {:?}",
                split.key_indices
            );
        }
    }
}

#[test]
fn timing_profile_adds_up() {
    let mut cfg = RunConfig::default();
    cfg.videos = 5;
    cfg.workers = 1;
    let res = simulate(&cfg).unwrap();
    // stages run back to back on one worker, so their sum cannot exceed the wall clock
    assert!(res.timings.stage_sum() <= res.timings.wall);
    let per_video: std::time::Duration = res.outputs.iter().map(|o| o.timings.stage_sum()).sum();
    assert_eq!(per_video, res.timings.stage_sum());
}

#[test]
fn sharded_evaluation_equals_whole() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let span = |rng: &mut ChaCha8Rng| {
        let s = rng.random_range(0.0..40.0);
        Moment::new(s, s + rng.random_range(0.5..15.0))
    };
    for _ in 0..50 {
        let pairs: Vec<EvalPair> = (0..rng.random_range(2..30))
            .map(|_| {
                let preds = (0..rng.random_range(1..4)).map(|_| span(&mut rng)).collect();
                let gt = (0..rng.random_range(1..3)).map(|_| span(&mut rng)).collect();
                EvalPair::new(preds, gt).unwrap()
            })
            .collect();
        let cut = rng.random_range(1..pairs.len());
        let taus = [0.3, 0.5, 0.7];
        let whole = evaluate(&pairs, &taus, &taus, MapProtocol::PerQuery).unwrap();
        let shard = |ps: &[EvalPair]| {
            let mut acc = MetricAccumulator::new(&taus, &taus);
            ps.iter().for_each(|p| acc.add(p));
            acc
        };
        let (a, b) = (shard(&pairs[..cut]), shard(&pairs[cut..]));
        let merged = a.clone().merge(&b).unwrap().report().unwrap();
        let swapped = b.merge(&a).unwrap().report().unwrap();
        for r in [&merged, &swapped] {
            assert_eq!(r.n_queries, whole.n_queries);
            assert!((r.miou - whole.miou).abs() < 1e-9);
            for (x, y) in r.r1.iter().chain(&r.map).zip(whole.r1.iter().chain(&whole.map)) {
                assert!((x.1 - y.1).abs() < 1e-9);
            }
        }
        // query-count-weighted average of the shard reports
        let (ra, rb) = (evaluate(&pairs[..cut], &taus, &taus, MapProtocol::PerQuery).unwrap(), evaluate(&pairs[cut..], &taus, &taus, MapProtocol::PerQuery).unwrap());
        let w = cut as f64 / pairs.len() as f64;
        assert!((w * ra.miou + (1.0 - w) * rb.miou - whole.miou).abs() < 1e-9);
    }
}

#[test]
fn fixed_string_predictor_scores_zero() {
    let mut cfg = RunConfig::default();
    cfg.videos = 5;
    cfg.pipeline.predictor.kind = PredictorKind::FixedString(String::new());
    let res = simulate(&cfg).unwrap();
    assert!(res.outputs.iter().all(|o| o.parsed.was_fallback));
    assert_eq!(res.report.miou, 0.0);
    assert_eq!(synthetic_specs(&cfg).unwrap().len(), 5);
}
