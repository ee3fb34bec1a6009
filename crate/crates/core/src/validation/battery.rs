//! Test-id dispatch producing one report per (checkpoint, test).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::*;
use crate::error::{Error, Result};
use crate::midi::Corpus;
use crate::model::Perturbation;
use crate::scalar::Scalar;
use crate::train::train_on;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestId {
    T01,
    T02,
    T03,
    T04,
    T06,
    T08,
    T09,
    T10,
}

impl TestId {
    pub const ALL: [TestId; 8] =
        [TestId::T01, TestId::T02, TestId::T03, TestId::T04, TestId::T06, TestId::T08, TestId::T09, TestId::T10];

    pub fn code(self) -> &'static str {
        match self {
            TestId::T01 => "t01",
            TestId::T02 => "t02",
            TestId::T03 => "t03",
            TestId::T04 => "t04",
            TestId::T06 => "t06",
            TestId::T08 => "t08",
            TestId::T09 => "t09",
            TestId::T10 => "t10",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            TestId::T01 => "causal_ablation",
            TestId::T02 => "param_matched_controls",
            TestId::T03 => "linear_probe",
            TestId::T04 => "transposition",
            TestId::T06 => "cka_rsa",
            TestId::T08 => "band_sensitivity",
            TestId::T09 => "invariance",
            TestId::T10 => "cosine_alignment",
        }
    }
}

impl std::str::FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        TestId::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown test {s:?}; expected one of t01 t02 t03 t04 t06 t08 t09 t10")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub seed: u64,
    pub ks: Vec<i32>,
    pub eps: f64,
    pub probe_lambda: f64,
    /// Where t10 writes its embedding export; skipped when `None`.
    #[serde(skip)]
    pub export: Option<PathBuf>,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self { seed: 42, ks: vec![-6, -3, -1, 0, 1, 3, 6], eps: 0.1, probe_lambda: 1e-2, export: None }
    }
}

pub const NOT_APPLICABLE: &str = "not-applicable";

/// Run one test. Inapplicable tests come back as a report whose metrics
/// carry `status: "not-applicable"` and the reason.
pub fn run_test<T: Scalar>(
    ev: &Evaluator<'_, T>,
    corpus: &Corpus,
    test: TestId,
    bc: &BatteryConfig,
) -> Result<ValidationReport> {
    let inputs = json!({ "n_items": ev.items.len(), "pool": ev.pool.config, "battery": bc });
    let metrics = match dispatch(ev, corpus, test, bc) {
        Ok(m) => m,
        Err(Error::NotApplicable(reason)) => json!({ "status": NOT_APPLICABLE, "reason": reason }),
        Err(e) => return Err(e),
    };
    ValidationReport::new(ev.train, &format!("{}_{}", test.code(), test.title()), inputs, metrics)
}

fn dispatch<T: Scalar>(
    ev: &Evaluator<'_, T>,
    corpus: &Corpus,
    test: TestId,
    bc: &BatteryConfig,
) -> Result<serde_json::Value> {
    let samples = ev.clean_samples()?;
    Ok(match test {
        TestId::T01 => {
            let mut results = Vec::new();
            for side in [AblationSide::Audio, AblationSide::Midi] {
                if side.kinds(&ev.model.config).is_err() {
                    continue;
                }
                for mode in Perturbation::ALL {
                    results.push(ablate(ev, &samples, AblationSpec { side, mode, seed: bc.seed })?);
                }
            }
            if results.is_empty() {
                return Err(Error::NotApplicable(format!("arm {} has no descriptors to ablate", ev.model.config.arm)));
            }
            json!({ "status": "ok", "ablations": results })
        }
        TestId::T02 => {
            let s_real = ev.score(&samples)?.s;
            let mut controls = Vec::new();
            for cfg in param_matched_controls(ev.train)? {
                let out = train_on::<T>(&cfg, corpus, None)?;
                let cev = Evaluator { train: &cfg, model: &out.best, items: ev.items.clone(), pool: ev.pool.clone() };
                let s = cev.score(&cev.clean_samples()?)?.s;
                controls.push(json!({
                    "control": cfg.control.map(|c| c.name()),
                    "param_count": out.best.param_count(),
                    "s": s,
                    "delta_pp": 100.0 * (s - s_real),
                }));
            }
            json!({ "status": "ok", "s_real": s_real, "param_count": ev.model.param_count(), "controls": controls })
        }
        TestId::T03 => {
            let e = ev.embed(&samples, false)?;
            let stft = ev.model.config.stft;
            let mut probes = Vec::new();
            for target in ProbeTarget::ALL {
                let y = probe_targets(&ev.items, target, stft)?;
                for (source, x) in [("audio_embedding", &e.audio), ("midi_embedding", &e.midi)] {
                    let r = linear_probe(x, &y, bc.probe_lambda, bc.seed)?;
                    probes.push(json!({ "source": source, "target": target.name(), "result": r }));
                }
            }
            json!({ "status": "ok", "probes": probes })
        }
        TestId::T04 => {
            let r = transposition_sweep(ev, &bc.ks)?;
            let at = |k: i32| r.ks.iter().position(|&x| x == k).map(|i| r.s[i]);
            let avg = |k: i32| Some((at(-k)? + at(k)?) / 2.0);
            let monotone = match (avg(6), avg(3), at(0)) {
                (Some(s6), Some(s3), Some(s0)) => Some(s6 <= s3 && s3 <= s0),
                _ => None,
            };
            json!({ "status": "ok", "sweep": r, "monotone_degradation": monotone })
        }
        TestId::T06 => {
            let e = ev.embed(&samples, true)?;
            json!({ "status": "ok", "cka": cka_matrix(&e)? })
        }
        TestId::T08 => {
            let r = band_sensitivity(ev, &samples, bc.eps)?;
            let half = band_sensitivity(ev, &samples, bc.eps / 2.0)?;
            let continuous = half.deltas.iter().zip(&r.deltas).all(|(a, b)| a <= b);
            json!({ "status": "ok", "bands": r, "half_eps_deltas": half.deltas, "continuous_in_eps": continuous })
        }
        TestId::T09 => json!({ "status": "ok", "invariance": invariance_suite(ev, bc.seed)? }),
        TestId::T10 => {
            let e = ev.embed(&samples, false)?;
            let stats = cosine_alignment(&e.audio, &e.midi)?;
            let export = match &bc.export {
                Some(path) => {
                    let f = std::fs::File::create(path).map_err(crate::error::io_err(path))?;
                    let ids: Vec<usize> = ev.items.iter().map(|it| it.piece_id).collect();
                    let mut w = std::io::BufWriter::new(f);
                    let rows = export_embeddings(&mut w, &ids, &e.audio, &e.midi, ids.len())?;
                    std::io::Write::flush(&mut w).map_err(crate::error::io_err(path))?;
                    json!({ "path": path.file_name().map(|n| n.to_string_lossy()), "rows": rows })
                }
                None => serde_json::Value::Null,
            };
            json!({ "status": "ok", "alignment": stats, "export": export })
        }
    })
}
