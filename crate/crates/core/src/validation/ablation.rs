//! Inference-time descriptor ablation and parameter-matched control arms.

use serde::{Deserialize, Serialize};

use super::Evaluator;
use crate::error::{Error, Result};
use crate::model::{perturb_descriptors, Perturbation, Sample};
use crate::rng::sub_seed;
use crate::scalar::Scalar;
use crate::signal::DescriptorKind;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSide {
    /// Every audio-side descriptor the arm reads.
    Audio,
    /// The D4 interval descriptor.
    Midi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub side: AblationSide,
    pub mode: Perturbation,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub spec: AblationSpec,
    pub kinds: Vec<DescriptorKind>,
    pub s_normal: f64,
    pub s_ablated: f64,
    /// `s_ablated - s_normal`, in percentage points.
    pub delta_pp: f64,
}

impl AblationSide {
    /// Descriptor kinds of `arm` on this side.
    pub fn kinds(self, arm: &crate::model::ArmConfig) -> Result<Vec<DescriptorKind>> {
        let kinds: Vec<DescriptorKind> = arm
            .descriptor_kinds()
            .into_iter()
            .filter(|k| match self {
                AblationSide::Audio => k.is_audio(),
                AblationSide::Midi => *k == DescriptorKind::D4,
            })
            .collect();
        if kinds.is_empty() {
            return Err(Error::NotApplicable(format!("arm {} has no {self:?} descriptor path", arm.arm)));
        }
        Ok(kinds)
    }
}

/// Score `samples` before and after replacing the targeted descriptors.
/// Noise statistics and shuffle permutations come from `samples` itself.
pub fn ablate<T: Scalar>(ev: &Evaluator<'_, T>, samples: &[Sample], spec: AblationSpec) -> Result<AblationResult> {
    let kinds = spec.side.kinds(&ev.model.config)?;
    let s_normal = ev.score(samples)?.s;
    let mut ablated = samples.to_vec();
    for &k in &kinds {
        perturb_descriptors(&mut ablated, k, spec.mode, sub_seed(spec.seed, "ablate"))?;
    }
    let s_ablated = ev.score(&ablated)?.s;
    Ok(AblationResult { spec, kinds, s_normal, s_ablated, delta_pp: 100.0 * (s_ablated - s_normal) })
}

/// Zero, random and shuffled controls of `cfg`: same architecture, descriptor
/// content replaced during training and evaluation.
pub fn param_matched_controls(cfg: &TrainConfig) -> Result<Vec<TrainConfig>> {
    if cfg.arm.descriptor_kinds().is_empty() {
        return Err(Error::NotApplicable(format!("arm {} has no descriptor path to control", cfg.arm.arm)));
    }
    Ok(Perturbation::ALL
        .iter()
        .map(|&p| TrainConfig { control: Some(p), ..cfg.clone() })
        .collect())
}
