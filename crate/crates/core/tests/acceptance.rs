//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::cka::{cka_oracle, gaussian, orthogonal, rows_times};
use common::descriptors::{dft_stft, fixture, max_abs_diff, oracle_a4, oracle_a7, oracle_a8, oracle_a9, oracle_d4, sine};
use common::gradcheck::{cases, loss_cases, worst_over_seeds};
use common::retrieval::{oracle_metrics, random_case};
use xmodal_core::loss::{third_tower_graph, vicreg_graph, TowerWeights, VicregWeights};
use xmodal_core::midi::{d4_descriptor, generate_corpus, transpose, Corpus, MidiSegment, NoteEvent};
use xmodal_core::model::{attention_cost_ratio, audio_encode, midi_encode, ArmConfig, Model, Perturbation, Sample, ARMS};
use xmodal_core::retrieval::evaluate;
use xmodal_core::rng::{below, rng_from_seed};
use xmodal_core::signal::{
    a4_descriptor, a7_descriptor, a8_descriptor, a9_descriptor, band_edges, AudioSegment, DescriptorKind, StftParams,
};
use xmodal_core::tensor::nn::Ctx;
use xmodal_core::tensor::op_catalog;
use xmodal_core::train::{train_on, TrainConfig, TrainOutcome};
use xmodal_core::validation::{ablate, cka, effect_size, AblationSide, AblationSpec, Evaluator};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let all: Vec<_> = cases().into_iter().chain(loss_cases()).collect();
    let missing: Vec<&str> = op_catalog().iter().copied().filter(|op| !all.iter().any(|c| c.0 == *op)).collect();
    let (mut worst, mut name) = (0.0_f64, "");
    for case in &all {
        let e = worst_over_seeds(case, 20);
        if e > worst || e.is_nan() {
            worst = e;
            name = case.0;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        missing.is_empty() && worst < 1e-4 && secs < 60.0,
        format!("{} cases x 20 seeds, worst rel err {worst:.2e} ({name}), uncovered {missing:?}, {secs:.1} s", all.len()),
    )
}

fn c2_descriptors() -> Outcome {
    const SR: u32 = 4000;
    let toy = StftParams::TOY;
    let df = SR as f64 / toy.nfft as f64;
    let mut worst = 0.0_f64;
    for seed in 0..12 {
        let a = fixture(seed);
        let mags = dft_stft(&a.samples, toy.nfft, toy.hop);
        worst = worst.max(max_abs_diff(&a4_descriptor(&a, toy).map_err(err)?.values, &oracle_a4(&mags, SR, toy.nfft)));
        worst = worst.max(max_abs_diff(&a7_descriptor(&a, toy).map_err(err)?.values, &oracle_a7(&mags, df)));
        worst = worst.max(max_abs_diff(&a8_descriptor(&a, toy).map_err(err)?.values, &oracle_a8(&mags, df)));
        worst = worst.max(max_abs_diff(&a9_descriptor(&a, toy).map_err(err)?.values, &oracle_a9(&mags, df)));
        let rng = &mut rng_from_seed(seed);
        let p: Vec<u8> = (0..1 + below(rng, 30)).map(|_| below(rng, 128) as u8).collect();
        worst = worst.max(max_abs_diff(&d4_descriptor(&p).values, &oracle_d4(&p)));
    }
    let table = [
        (47.0, 94.0, 4, 8),
        (94.0, 188.0, 8, 16),
        (188.0, 375.0, 16, 32),
        (375.0, 750.0, 32, 64),
        (750.0, 1500.0, 64, 128),
        (1500.0, 3000.0, 128, 256),
        (3000.0, 6000.0, 256, 512),
        (6000.0, 12000.0, 512, 1025),
    ];
    let bands_ok = table.iter().enumerate().all(|(i, &(lo, hi, blo, bhi))| {
        band_edges(i, 24_000, 2048).is_ok_and(|b| (b.lo_hz, b.hi_hz, b.bin_lo, b.bin_hi) == (lo, hi, blo, bhi))
    });
    let sr = 24_000;
    let x: Vec<f64> = sine(440.0, sr, 96_000).iter().zip(sine(660.0, sr, 96_000)).map(|(a, b)| a + b).collect();
    let a7 = a7_descriptor(&AudioSegment::new(x, sr), StftParams::FULL).map_err(err)?;
    let mut fifth_ok = true;
    let mut min_mass = f64::INFINITY;
    for t in 2..a7.frames - 2 {
        let row = a7.row(t);
        let best = (0..12).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
        fifth_ok &= best == 7;
        min_mass = min_mass.min(row[7]);
    }
    check(
        worst < 1e-5 && bands_ok && fifth_ok,
        format!("12 fixtures x A4/A7/A8/A9/D4 max |diff| {worst:.2e}; band table {bands_ok}; 3:2 argmax 7 {fifth_ok}, min mass {min_mass:.3}"),
    )
}

fn c3_frames() -> Outcome {
    let a = AudioSegment::new(sine(440.0, 24_000, 96_000), 24_000);
    let d = a4_descriptor(&a, StftParams { nfft: 2048, hop: 512 }).map_err(err)?;
    let dims = d.values.len() / d.frames.max(1);
    check(d.frames == 188 && dims == 8, format!("{} frames, A4 {}x{dims}", d.frames, d.frames))
}

fn c4_cka() -> Outcome {
    let mut worst_prop = 0.0_f64;
    let mut worst_oracle = 0.0_f64;
    for seed in 0..20 {
        let x = gaussian(30, 6, 10 + seed);
        let y = gaussian(30, 4, 50 + seed);
        let base = cka(&x, &y).map_err(err)?;
        let q = orthogonal(6, 90 + seed);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 3.7 * v).collect()).collect();
        let props = [
            (cka(&x, &x).map_err(err)? - 1.0).abs(),
            (cka(&rows_times(&x, &q), &y).map_err(err)? - base).abs(),
            (cka(&scaled, &y).map_err(err)? - base).abs(),
            (cka(&y, &x).map_err(err)? - base).abs(),
        ];
        worst_prop = props.iter().copied().fold(worst_prop, f64::max);
        worst_oracle = worst_oracle.max((base - cka_oracle(&x, &y)).abs());
    }
    check(
        worst_prop <= 1e-10 && worst_oracle <= 1e-12,
        format!("20 pairs: identity/orthogonal/scale/symmetry max dev {worst_prop:.1e}, oracle max dev {worst_oracle:.1e}"),
    )
}

fn c5_retrieval() -> Outcome {
    let mut mismatches = 0;
    let mut s_bad = 0;
    let n = 300;
    for seed in 0..n {
        let rng = &mut rng_from_seed(7000 + seed);
        let n_items = 8 + below(rng, 57);
        let size = 4 + below(rng, n_items - 3);
        let (pool, a, m) = random_case(seed, n_items, size, 1 + below(rng, 6));
        let got = evaluate(&pool, &a, &m).map_err(err)?;
        mismatches += usize::from(got != oracle_metrics(&pool, &a, &m));
        s_bad += usize::from(got.s != got.r10_am.min(got.r10_ma));
    }
    check(mismatches == 0 && s_bad == 0, format!("{n} random pools (<= 64): {mismatches} metric mismatches, {s_bad} S != min(R@10)"))
}

fn c6_cost() -> Outcome {
    let r = attention_cost_ratio(2400, 188).map_err(err)?;
    let full_tokens = ArmConfig::full("A4r").map_err(err)?.audio_tokens();
    let corpus = small_corpus()?;
    let item = &corpus.items[0];
    let mut counts = Vec::new();
    let mut ok = (162.9..=163.0).contains(&r) && full_tokens == 188;
    for arm in ["A4r", "d4-a4r", "D4r"] {
        let cfg = ArmConfig::toy(arm).map_err(err)?;
        let s = Sample::prepare(&item.audio, &item.midi, &cfg.descriptor_kinds(), &cfg).map_err(err)?;
        let model = Model::<f64>::init(cfg.clone(), 1).map_err(err)?;
        let mut ctx = Ctx::new(&model.params, false);
        let a = audio_encode(&mut ctx, &cfg, &s).map_err(err)?;
        let m = midi_encode(&mut ctx, &cfg, &s, None).map_err(err)?;
        let (want_a, want_m) = (cfg.audio_tokens(), s.midi.len());
        let reverse_audio = cfg.descriptor_kinds().contains(&DescriptorKind::A4) && arm != "D4r";
        if reverse_audio {
            ok &= a.tokens() == cfg.descriptor_frames() && want_a == cfg.descriptor_frames();
        }
        ok &= m.tokens() == want_m;
        counts.push(format!("{arm} {}/{}", a.tokens(), m.tokens()));
    }
    check(ok, format!("ratio {r:.3}; full A4r tokens {full_tokens}; toy audio/MIDI tokens {}", counts.join(", ")))
}

fn c7_effect() -> Outcome {
    let e = effect_size(84.0, 2.7, 5, 75.2, 2.3, 5).map_err(err)?;
    check(
        (e.cohen_d - 3.51).abs() <= 0.01 && (e.welch_t - 5.55).abs() <= 0.01,
        format!("d = {:.3}, t = {:.3}, p = {:.2e}", e.cohen_d, e.welch_t, e.p),
    )
}

fn small_corpus() -> Result<Corpus, String> {
    let cfg = TrainConfig::toy("D0").map_err(err)?;
    generate_corpus(&cfg.corpus, cfg.corpus_seed).map_err(err)
}

fn held_out_s(tc: &TrainConfig, model: &Model<f32>, corpus: &Corpus) -> Result<f64, String> {
    let ev = Evaluator::new(tc, model, corpus, tc.pool).map_err(err)?;
    Ok(ev.score(&ev.clean_samples().map_err(err)?).map_err(err)?.s)
}

struct Trained {
    config: TrainConfig,
    outcome: TrainOutcome<f32>,
}

fn c8_directional(corpus: &Corpus, trained: &mut Vec<Trained>) -> Outcome {
    let t = Instant::now();
    let mut means = Vec::new();
    let mut lines = Vec::new();
    for arm in ["D0", "d4a4"] {
        let mut s = Vec::new();
        for seed in [42, 43, 44] {
            let tc = TrainConfig::toy(arm).map_err(err)?.with_seed(seed);
            if tc.epochs > 20 {
                return Err(format!("toy config trains {} epochs", tc.epochs));
            }
            let outcome = train_on::<f32>(&tc, corpus, None).map_err(err)?;
            s.push(held_out_s(&tc, &outcome.best, corpus)?);
            trained.push(Trained { config: tc, outcome });
        }
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        lines.push(format!("{arm} S {:?} mean {:.1}%", s.iter().map(|v| (1000.0 * v).round() / 10.0).collect::<Vec<_>>(), 100.0 * mean));
        means.push(mean);
    }
    let secs = t.elapsed().as_secs_f64();
    check(means[1] > means[0] && secs < 1800.0, format!("{}; {secs:.0} s", lines.join("; ")))
}

fn c9_ablation(corpus: &Corpus, trained: &[Trained]) -> Outcome {
    let run = trained
        .iter()
        .find(|r| r.config.arm.arm == "d4a4" && r.config.seed == 42)
        .ok_or("no trained d4a4 seed 42 run")?;
    let ev = Evaluator::new(&run.config, &run.outcome.best, corpus, run.config.pool).map_err(err)?;
    let samples = ev.clean_samples().map_err(err)?;
    let zero = |side| ablate(&ev, &samples, AblationSpec { side, mode: Perturbation::Zero, seed: 42 });
    let a4 = zero(AblationSide::Audio).map_err(err)?;
    let d4 = zero(AblationSide::Midi).map_err(err)?;
    check(
        a4.delta_pp <= -20.0 && d4.delta_pp.abs() <= 5.0,
        format!("S {:.1}%; zero-A4 {:+.1} pp; zero-D4 {:+.1} pp", 100.0 * a4.s_normal, a4.delta_pp, d4.delta_pp),
    )
}

fn c10_d4_invariance() -> Outcome {
    let mut checked = 0;
    let mut broken = Vec::new();
    for seed in 0..50 {
        let rng = &mut rng_from_seed(300 + seed);
        let n = 1 + below(rng, 32);
        let ev: Vec<NoteEvent> = (0..n)
            .map(|i| NoteEvent { pitch: 6 + below(rng, 116) as u8, velocity: 80, duration_s: 0.1, onset_s: i as f64 * 0.01 })
            .collect();
        let seg = MidiSegment::new(ev, 32).map_err(err)?;
        let base = d4_descriptor(&seg.pitches());
        for k in -6..=6 {
            let moved = transpose(&seg, k).map_err(err)?;
            checked += 1;
            if d4_descriptor(&moved.pitches()).values != base.values {
                broken.push((seed, k));
            }
        }
    }
    check(broken.is_empty(), format!("{checked} segment/shift pairs, {} not identical {broken:?}", broken.len()))
}

fn files_equal(a: &Path, b: &Path) -> Result<Vec<String>, String> {
    let mut differ = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(err)?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
    names.sort();
    for n in names {
        if std::fs::read(a.join(&n)).map_err(err)? != std::fs::read(b.join(&n)).map_err(err)? {
            differ.push(n.to_string_lossy().into_owned());
        }
    }
    Ok(differ)
}

fn c11_determinism(corpus: &Corpus) -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut differ = Vec::new();
    let mut files = 0;
    let c2 = generate_corpus(&corpus.config, corpus.seed).map_err(err)?;
    corpus.write(dir.path().join("c1")).map_err(err)?;
    c2.write(dir.path().join("c2")).map_err(err)?;
    files += std::fs::read_dir(dir.path().join("c1")).map_err(err)?.count();
    differ.extend(files_equal(&dir.path().join("c1"), &dir.path().join("c2"))?);

    let mut tc = TrainConfig::toy("d4a4").map_err(err)?;
    tc.epochs = 3;
    let mut reports = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        std::fs::create_dir_all(&out).map_err(err)?;
        let o = train_on::<f32>(&tc, corpus, Some(&out)).map_err(err)?;
        let ev = Evaluator::new(&tc, &o.best, corpus, tc.pool).map_err(err)?;
        let e = ev.embed(&ev.clean_samples().map_err(err)?, false).map_err(err)?;
        let r = xmodal_core::retrieval::scoreboard(&tc.arm.arm, &tc.hash(), tc.seed, &ev.pool, &e.audio, &e.midi)
            .map_err(err)?;
        reports.push(serde_json::to_string(&r).map_err(err)?);
    }
    files += std::fs::read_dir(dir.path().join("r1")).map_err(err)?.count();
    differ.extend(files_equal(&dir.path().join("r1"), &dir.path().join("r2"))?);
    if reports[0] != reports[1] {
        differ.push("retrieval report".into());
    }
    check(differ.is_empty(), format!("{} files + report compared across two runs, differing: {differ:?}", files))
}

fn c12_arms(corpus: &Corpus) -> Outcome {
    let kinds = [DescriptorKind::A4, DescriptorKind::A7, DescriptorKind::A8, DescriptorKind::A9, DescriptorKind::D4];
    let w = VicregWeights::default();
    let mut failed = Vec::new();
    for arm in ARMS {
        let step = || -> xmodal_core::Result<bool> {
            let cfg = ArmConfig::toy(arm)?;
            let data: Vec<Sample> =
                corpus.items.iter().take(4).map(|it| Sample::prepare(&it.audio, &it.midi, &kinds, &cfg)).collect::<Result<_, _>>()?;
            let batch: Vec<&Sample> = data.iter().collect();
            let model = Model::<f64>::init(cfg.clone(), 1)?;
            let mut ctx = Ctx::new(&model.params, true);
            let f = model.forward(&mut ctx, &batch)?;
            let mut loss = match (f.z_desc, &cfg.tower) {
                (Some(zd), Some(t)) => {
                    let tw = TowerWeights { alpha: t.alpha, beta: t.beta, direct: t.direct };
                    third_tower_graph(&mut ctx.g, f.z_audio, f.z_midi, zd, tw, &w)?.0
                }
                _ => vicreg_graph(&mut ctx.g, f.z_audio, f.z_midi, &w)?.total,
            };
            if let Some(aux) = f.aux {
                loss = ctx.g.add(loss, aux)?;
            }
            let grads = ctx.g.backward(loss)?;
            let finite = ctx.g.value(loss).item().is_finite()
                && ctx.param_vars().iter().flatten().all(|v| !grads.get(*v).has_non_finite());
            Ok(finite)
        };
        match step() {
            Ok(true) => {}
            Ok(false) => failed.push(format!("{arm}: non-finite")),
            Err(e) => failed.push(format!("{arm}: {e}")),
        }
    }
    check(failed.is_empty(), format!("{} arms forward+backward, failures {failed:?}", ARMS.len()))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
        results.push((n, name, o));
    };
    report(1, "gradient correctness", c1_gradients());
    report(2, "descriptor oracles", c2_descriptors());
    report(3, "frame-count pin", c3_frames());
    report(4, "CKA properties", c4_cka());
    report(5, "retrieval-metric oracle", c5_retrieval());
    report(6, "attention cost and reverse tokens", c6_cost());
    report(7, "effect size", c7_effect());
    let mut trained = Vec::new();
    match small_corpus() {
        Ok(corpus) => {
            report(8, "directional D0 vs d4a4", c8_directional(&corpus, &mut trained));
            report(9, "causal ablation", c9_ablation(&corpus, &trained));
            report(10, "D4 transposition invariance", c10_d4_invariance());
            report(11, "determinism", c11_determinism(&corpus));
            report(12, "every arm trains a step", c12_arms(&corpus));
        }
        Err(e) => {
            for (n, name) in [(8, "directional D0 vs d4a4"), (9, "causal ablation"), (11, "determinism"), (12, "every arm trains a step")] {
                report(n, name, Err(format!("corpus: {e}")));
            }
            report(10, "D4 transposition invariance", c10_d4_invariance());
        }
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
