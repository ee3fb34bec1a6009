mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use xmodal_core::error::Error;
use xmodal_core::midi::{generate_corpus, Corpus, CorpusItem};
use xmodal_core::model::{Model, Perturbation};
use xmodal_core::retrieval::{evaluate, PoolConfig};
use xmodal_core::signal::{DescriptorKind, DescriptorTensor, StftParams};
use xmodal_core::train::{train_on, TrainConfig};
use xmodal_core::validation::*;

use common::cka::*;

#[test]
fn cka_matches_oracle_and_separates_independent_gaussians() {
    let x = gaussian(500, 16, 1);
    let y = gaussian(500, 16, 2);
    let c = cka(&x, &y).unwrap();
    assert!((c - cka_oracle(&x, &y)).abs() < 1e-12, "{c}");
    assert!(c < 0.1, "{c}");
    for seed in 0..10 {
        let a = gaussian(40, 5, 100 + seed);
        let b = gaussian(40, 9, 200 + seed);
        assert!((cka(&a, &b).unwrap() - cka_oracle(&a, &b)).abs() < 1e-12);
        assert!((rsa(&a, &b).unwrap() - rsa_oracle(&a, &b)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cka_is_symmetric_and_transform_invariant(seed in 0u64..10_000, n in 4usize..40, p in 1usize..8, q in 1usize..8, scale in 0.01f64..100.0) {
        let x = gaussian(n, p, seed);
        let y = gaussian(n, q, seed ^ 0x5555);
        let base = cka(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-10);
        prop_assert!((cka(&y, &x).unwrap() - base).abs() < 1e-10);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        prop_assert!((cka(&scaled, &y).unwrap() - base).abs() < 1e-10);
        let rotated = rows_times(&x, &orthogonal(p, seed + 1));
        prop_assert!((cka(&rotated, &y).unwrap() - base).abs() < 1e-10);
        prop_assert!((cka(&x, &rotated).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rsa_is_sign_invariant(seed in 0u64..10_000, n in 3usize..30, p in 1usize..6) {
        let x = gaussian(n, p, seed);
        let neg: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        prop_assert!((rsa(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((rsa(&x, &neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_train_r2_never_rises_with_lambda(seed in 0u64..10_000, l1 in 1e-4f64..10.0, factor in 1.0f64..100.0) {
        let x = gaussian(60, 6, seed);
        let y = gaussian(60, 3, seed + 7);
        let a = linear_probe(&x, &y, l1, seed).unwrap();
        let b = linear_probe(&x, &y, l1 * factor, seed).unwrap();
        prop_assert!(b.train_r2 <= a.train_r2 + 1e-12, "{} > {}", b.train_r2, a.train_r2);
    }

    #[test]
    fn doubling_both_sds_halves_d(ma in 50.0f64..90.0, mb in 50.0f64..90.0, sa in 0.5f64..5.0, sb in 0.5f64..5.0) {
        let a = effect_size(ma, sa, 5, mb, sb, 5).unwrap();
        let b = effect_size(ma, 2.0 * sa, 5, mb, 2.0 * sb, 5).unwrap();
        prop_assert!((a.cohen_d - 2.0 * b.cohen_d).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.p));
    }

    #[test]
    fn export_round_trips_exact_floats(seed in 0u64..10_000, n in 0usize..6) {
        let audio = gaussian(6, 4, seed);
        let midi: Vec<Vec<f64>> = gaussian(6, 4, seed + 1).into_iter().map(|r| r.into_iter().map(|v| v * 1e-300).collect()).collect();
        let ids: Vec<usize> = (0..6).map(|i| i * 3).collect();
        let mut buf = Vec::new();
        prop_assert_eq!(export_embeddings(&mut buf, &ids, &audio, &midi, n).unwrap(), 2 * n);
        let rows = read_embeddings(buf.as_slice()).unwrap();
        prop_assert_eq!(rows.len(), 2 * n);
        for (i, pair) in rows.chunks(2).enumerate() {
            prop_assert_eq!(&pair[0].modality, "audio");
            prop_assert_eq!(pair[1].piece_id, ids[i]);
            prop_assert_eq!(&pair[0].values, &audio[i]);
            prop_assert_eq!(&pair[1].values, &midi[i]);
        }
    }
}

#[test]
fn probe_recovers_linear_targets_and_not_noise() {
    let x = gaussian(400, 8, 3);
    let w = gaussian(8, 4, 4);
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..4).map(|j| 0.5 + r.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>()).collect())
        .collect();
    assert!(linear_probe(&x, &y, 1e-6, 0).unwrap().r2 >= 0.999);
    let mean: f64 = (0..5).map(|s| linear_probe(&x, &gaussian(400, 4, 50 + s), 1e-2, s).unwrap().r2).sum::<f64>() / 5.0;
    assert!(mean <= 0.05, "{mean}");
}

#[test]
fn probe_excludes_constant_targets_and_checks_inputs() {
    let x = gaussian(50, 4, 5);
    let y: Vec<Vec<f64>> = gaussian(50, 2, 6).into_iter().map(|r| vec![r[0], 3.0, r[1]]).collect();
    assert_eq!(linear_probe(&x, &y, 1e-2, 0).unwrap().excluded_dims, vec![1]);
    assert!(linear_probe(&x, &y, 0.0, 0).is_err());
    assert!(linear_probe(&x[..4], &y[..4], 1e-2, 0).is_err());
    assert!(linear_probe(&x, &y[..10], 1e-2, 0).is_err());
}

#[test]
fn alignment_statistics() {
    let a = gaussian(20, 6, 9);
    let same = cosine_alignment(&a, &a).unwrap();
    assert!((same.mean - 1.0).abs() < 1e-12);
    assert_eq!(same.histogram[HIST_BINS - 1], 20);
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64, 0.0]).collect();
    let y: Vec<Vec<f64>> = (0..10).map(|i| vec![0.0, 2.0 - i as f64 * 0.1]).collect();
    let ortho = cosine_alignment(&x, &y).unwrap();
    assert_eq!(ortho.mean, 0.0);
    assert_eq!(ortho.histogram.iter().sum::<usize>(), 10);
    assert!(cosine_alignment(&a[..1], &a[..1]).is_err());
}

#[test]
fn header_only_export_and_bad_input() {
    let mut buf = Vec::new();
    assert_eq!(export_embeddings(&mut buf, &[], &[], &[], 0).unwrap(), 0);
    assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1);
    assert!(read_embeddings(buf.as_slice()).unwrap().is_empty());
    assert!(read_embeddings("nope\n".as_bytes()).is_err());
    assert!(export_embeddings(Vec::new(), &[1], &[vec![0.0]], &[vec![0.0]], 2).is_err());
}

#[test]
fn probe_target_shapes() {
    let corpus = generate_corpus(&xmodal_core::midi::CorpusConfig { n_pieces: 3, ..Default::default() }, 0).unwrap();
    let it = &corpus.items[0];
    for t in ProbeTarget::ALL {
        let v = probe_target(it, t, StftParams::TOY).unwrap();
        assert_eq!(v.len(), t.dims());
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    let h = probe_target(it, ProbeTarget::PitchHistogram, StftParams::TOY).unwrap();
    assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let c = probe_target(it, ProbeTarget::Centroid, StftParams::TOY).unwrap()[0];
    let p = it.midi.pitches();
    assert_eq!(c, p.iter().map(|&x| x as f64).sum::<f64>() / p.len() as f64 / 127.0);
}

struct Trained {
    cfg: TrainConfig,
    corpus: Corpus,
    model: Model<f32>,
}

fn trained(arm: &str) -> Trained {
    let mut cfg = TrainConfig::toy(arm).unwrap();
    cfg.epochs = 1;
    cfg.eval_every = 0;
    let corpus = generate_corpus(&cfg.corpus, cfg.corpus_seed).unwrap();
    let model = train_on::<f32>(&cfg, &corpus, None).unwrap().last;
    Trained { cfg, corpus, model }
}

fn d4a4() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| trained("d4a4"))
}

fn evaluator(t: &Trained) -> Evaluator<'_, f32> {
    Evaluator::new(&t.cfg, &t.model, &t.corpus, PoolConfig::toy()).unwrap()
}

#[test]
fn zero_ablation_matches_explicit_zero_descriptors() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    for (side, kind) in [(AblationSide::Audio, DescriptorKind::A4), (AblationSide::Midi, DescriptorKind::D4)] {
        let r = ablate(&ev, &samples, AblationSpec { side, mode: Perturbation::Zero, seed: 3 }).unwrap();
        assert_eq!(r.kinds, vec![kind]);
        let mut manual = samples.clone();
        for s in &mut manual {
            let frames = s.descriptors[&kind].frames;
            s.descriptors.insert(kind, DescriptorTensor::zeros(kind, frames));
        }
        assert_eq!(r.s_ablated, ev.score(&manual).unwrap().s);
        assert_eq!(r.s_normal, ev.score(&samples).unwrap().s);
        assert_eq!(r.delta_pp, 100.0 * (r.s_ablated - r.s_normal));
    }
    let noise = AblationSpec { side: AblationSide::Audio, mode: Perturbation::Noise, seed: 3 };
    assert_eq!(ablate(&ev, &samples, noise).unwrap(), ablate(&ev, &samples, noise).unwrap());
}

#[test]
fn single_sample_shuffle_is_identity() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    let one = samples[..1].to_vec();
    let mut shuffled = one.clone();
    for k in [DescriptorKind::A4, DescriptorKind::D4] {
        xmodal_core::model::perturb_descriptors(&mut shuffled, k, Perturbation::Shuffle, 11).unwrap();
    }
    assert_eq!(shuffled, one);
    assert_eq!(ev.embed(&shuffled, false).unwrap(), ev.embed(&one, false).unwrap());
}

#[test]
fn ablation_rejects_missing_paths() {
    let cfg = TrainConfig::toy("A4r").unwrap();
    assert!(matches!(AblationSide::Midi.kinds(&cfg.arm), Err(Error::NotApplicable(_))));
    assert!(AblationSide::Audio.kinds(&cfg.arm).is_ok());
    let d0 = TrainConfig::toy("D0").unwrap();
    assert!(matches!(AblationSide::Audio.kinds(&d0.arm), Err(Error::NotApplicable(_))));
    assert!(matches!(param_matched_controls(&d0), Err(Error::NotApplicable(_))));
}

#[test]
fn controls_share_the_architecture() {
    let cfg = TrainConfig::toy("d4a4").unwrap();
    let real = Model::<f32>::init(cfg.arm.clone(), cfg.seed).unwrap().param_count();
    let controls = param_matched_controls(&cfg).unwrap();
    assert_eq!(controls.iter().map(|c| c.control).collect::<Vec<_>>(), Perturbation::ALL.map(Some).to_vec());
    for c in &controls {
        c.validate().unwrap();
        assert_eq!(Model::<f32>::init(c.arm.clone(), c.seed).unwrap().param_count(), real);
        assert_ne!(c.hash(), cfg.hash());
    }
}

#[test]
fn identity_conditions_agree_with_the_scoreboard() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    let e = ev.embed(&samples, false).unwrap();
    let board = xmodal_core::retrieval::scoreboard(&t.cfg.arm.arm, &t.cfg.hash(), 42, &ev.pool, &e.audio, &e.midi).unwrap();
    assert_eq!(board.metrics, evaluate(&ev.pool, &e.audio, &e.midi).unwrap());

    let sweep = transposition_sweep(&ev, &[-3, 0, 3]).unwrap();
    assert_eq!(sweep.s[1], board.metrics.s);
    let r = sweep.retention.unwrap();
    assert_eq!(r, (sweep.s[0] + sweep.s[2]) / 2.0 / sweep.s[1]);
    assert!(transposition_sweep(&ev, &[1, 2]).is_err());
    assert!(transposition_sweep(&ev, &[0, 1]).unwrap().retention.is_none());

    let inv = invariance_suite(&ev, 5).unwrap();
    assert_eq!(inv.clean_s, board.metrics.s);
    let kinds: Vec<&str> = inv.rows.iter().map(|r| r.perturbation.as_str()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "velocity_scale").count(), 4);
    assert_eq!(kinds.iter().filter(|k| **k == "noise_snr_db").count(), 5);
    assert!(kinds.contains(&"temporal_shift") && kinds.contains(&"octave"));
    let shift = inv.rows.iter().find(|r| r.perturbation == "temporal_shift").unwrap();
    assert_eq!(shift.level, 160.0);

    let unit: Vec<CorpusItem> = ev
        .items
        .iter()
        .map(|it| CorpusItem { midi: xmodal_core::midi::scale_velocity(&it.midi, 1.0).unwrap(), ..it.clone() })
        .collect();
    assert_eq!(ev.score(&ev.samples(&unit).unwrap()).unwrap().s, board.metrics.s);
}

#[test]
fn band_sensitivity_contracts() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    let zero = band_sensitivity(&ev, &samples, 0.0).unwrap();
    assert_eq!(zero.deltas, vec![0.0; 8]);
    let r = band_sensitivity(&ev, &samples, 0.1).unwrap();
    assert_eq!(r.deltas.len(), 8);
    assert!(r.deltas.iter().all(|d| *d >= 0.0 && d.is_finite()));
    assert!(r.max_abs_r.iter().all(|x| (0.0..=1.0).contains(x)));
    assert_eq!(r, band_sensitivity(&ev, &samples, 0.1).unwrap());

    let d4 = TrainConfig::toy("D4").unwrap();
    let model = Model::<f32>::init(d4.arm.clone(), 1).unwrap();
    let ev = Evaluator::new(&d4, &model, &t.corpus, PoolConfig::toy()).unwrap();
    let s = ev.clean_samples().unwrap();
    assert!(matches!(band_sensitivity(&ev, &s, 0.1), Err(Error::NotApplicable(_))));
}

#[test]
fn cka_matrix_on_taps_is_bounded_and_repeatable() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    let e = ev.embed(&samples, true).unwrap();
    let r = cka_matrix(&e).unwrap();
    assert_eq!(r.matrix.len(), t.cfg.arm.audio.layers);
    assert_eq!(r.matrix[0].len(), t.cfg.arm.midi.layers);
    assert!(r.matrix.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    assert!(r.rsa_matrix.iter().flatten().all(|c| (-1.0..=1.0).contains(c)));
    assert_eq!(r, cka_matrix(&ev.embed(&samples, true).unwrap()).unwrap());
    assert!(cka_matrix(&ev.embed(&samples, false).unwrap()).is_err());
}

#[test]
fn reports_serialize_with_provenance() {
    let t = d4a4();
    let ev = evaluator(t);
    let samples = ev.clean_samples().unwrap();
    let res = ablate(&ev, &samples, AblationSpec { side: AblationSide::Audio, mode: Perturbation::Zero, seed: 1 }).unwrap();
    let rep = ValidationReport::new(&t.cfg, "t01", res.spec, &res).unwrap();
    assert_eq!(rep.config_hash, t.cfg.hash());
    let back: ValidationReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
    assert_eq!(back, rep);
    let dash = Dashboard::from_reports(&[rep]);
    assert!(dash.runs["d4a4-s42"].contains_key("t01"));
    let wrong = generate_corpus(&t.cfg.corpus, 77).unwrap();
    assert!(Evaluator::new(&t.cfg, &t.model, &wrong, PoolConfig::toy()).is_err());
}
