//! Comparison tables over retrieval reports.

use std::path::{Path, PathBuf};

use serde::Serialize;
use xmodal_core::retrieval::{RetrievalReport, REPORT_SCHEMA_VERSION};
use xmodal_core::train::Summary;
use xmodal_core::validation::{effect_size, EffectSize};

use crate::{Failure, Format};

/// Per-arm mean of every metric, in input order of first appearance.
#[derive(Clone, Debug, Serialize)]
pub struct ArmRow {
    pub arm: String,
    pub n: usize,
    pub s: f64,
    pub r1_am: f64,
    pub r10_am: f64,
    pub mrr_am: f64,
    pub r10_ma: f64,
    pub mrr_ma: f64,
    pub hardneg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRow {
    pub arm: String,
    /// S in percent.
    pub summary: Summary,
    pub delta_pp: Option<f64>,
    pub effect: Option<EffectSize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub rows: Vec<ArmRow>,
    pub multi_seed: Vec<SeedRow>,
    pub baseline: Option<String>,
}

fn read_report(path: &Path) -> Result<RetrievalReport, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == REPORT_SCHEMA_VERSION as u64 => {}
        v => {
            return Err(Failure::config(format!(
                "{}: report schema version {v:?} (supported: {REPORT_SCHEMA_VERSION})",
                path.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| Failure::config(format!("{}: not a retrieval report: {e}", path.display())))
}

pub fn compare(reports: &[RetrievalReport], baseline: Option<&str>) -> Result<Comparison, Failure> {
    let mut arms: Vec<(String, Vec<&RetrievalReport>)> = Vec::new();
    for r in reports {
        match arms.iter_mut().find(|(a, _)| *a == r.arm) {
            Some((_, v)) => v.push(r),
            None => arms.push((r.arm.clone(), vec![r])),
        }
    }
    if let Some(b) = baseline {
        if !arms.iter().any(|(a, _)| a == b) {
            return Err(Failure::config(format!("baseline arm {b} not among the inputs")));
        }
    }
    let rows = arms
        .iter()
        .map(|(arm, rs)| {
            let mean = |f: fn(&RetrievalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            ArmRow {
                arm: arm.clone(),
                n: rs.len(),
                s: mean(|r| r.metrics.s),
                r1_am: mean(|r| r.metrics.r1_am),
                r10_am: mean(|r| r.metrics.r10_am),
                mrr_am: mean(|r| r.metrics.mrr_am),
                r10_ma: mean(|r| r.metrics.r10_ma),
                mrr_ma: mean(|r| r.metrics.mrr_ma),
                hardneg: mean(|r| r.metrics.hardneg),
            }
        })
        .collect();

    let summaries: Vec<(String, Summary)> = arms
        .iter()
        .filter(|(_, rs)| rs.len() >= 2)
        .map(|(arm, rs)| Ok((arm.clone(), Summary::of(&rs.iter().map(|r| 100.0 * r.metrics.s).collect::<Vec<_>>())?)))
        .collect::<Result<_, xmodal_core::Error>>()?;
    let base = baseline.and_then(|b| summaries.iter().find(|(a, _)| a == b).map(|(_, s)| *s));
    let multi_seed = summaries
        .iter()
        .map(|(arm, s)| {
            let vs = base.filter(|_| Some(arm.as_str()) != baseline);
            let effect = match vs {
                Some(b) if s.sd > 0.0 && b.sd > 0.0 => Some(effect_size(s.mean, s.sd, s.n, b.mean, b.sd, b.n)?),
                _ => None,
            };
            Ok(SeedRow { arm: arm.clone(), summary: *s, delta_pp: vs.map(|b| s.mean - b.mean), effect })
        })
        .collect::<Result<_, xmodal_core::Error>>()?;
    Ok(Comparison { rows, multi_seed, baseline: baseline.map(str::to_string) })
}

pub fn markdown(c: &Comparison) -> String {
    let mut out = String::from(
        "| Arm | S (%) | R@1 a->m | R@10 a->m | MRR a->m | R@10 m->a | MRR m->a | Hard neg (%) |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in &c.rows {
        out.push_str(&format!(
            "| {} | {:.1} | {:.1} | {:.1} | {:.3} | {:.1} | {:.3} | {:.1} |\n",
            r.arm,
            100.0 * r.s,
            100.0 * r.r1_am,
            100.0 * r.r10_am,
            r.mrr_am,
            100.0 * r.r10_ma,
            r.mrr_ma,
            100.0 * r.hardneg
        ));
    }
    if !c.multi_seed.is_empty() {
        let vs = c.baseline.as_deref().unwrap_or("baseline");
        out.push_str(&format!(
            "\n| Arm | n | Mean S (%) | SD (pp) | Range | Δ vs {vs} (pp) | Cohen d | Welch t | p |\n|---|---|---|---|---|---|---|---|---|\n"
        ));
        for r in &c.multi_seed {
            let s = &r.summary;
            let dash = || "--".to_string();
            out.push_str(&format!(
                "| {} | {} | {:.1} | {:.1} | {:.1}--{:.1} | {} | {} | {} | {} |\n",
                r.arm,
                s.n,
                s.mean,
                s.sd,
                s.min,
                s.max,
                r.delta_pp.map_or_else(dash, |d| format!("{d:+.1}")),
                r.effect.map_or_else(dash, |e| format!("{:.2}", e.cohen_d)),
                r.effect.map_or_else(dash, |e| format!("{:.2}", e.welch_t)),
                r.effect.map_or_else(dash, |e| format!("{:.4}", e.p)),
            ));
        }
    }
    out
}

pub fn report(inputs: &[PathBuf], format: Format, baseline: Option<&str>) -> Result<(), Failure> {
    let reports = inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let c = compare(&reports, baseline)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&c).map_err(xmodal_core::Error::from)?),
        Format::MarkdownTable => print!("{}", markdown(&c)),
    }
    Ok(())
}
