//! Ready-made synthetic corpora used by the CLI, the bench and the test suites.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::EpochTensor;
use crate::synth::{
    gen_clean, gen_two_class, inject, plan_artifacts, shuffle_labels, ArtifactKind, ArtifactLabel, ClassGainMap,
    SynthConfig,
};

/// Epochs with planted artifacts and their ground truth.
#[derive(Debug, Clone)]
pub struct Planted {
    pub epochs: EpochTensor,
    pub labels: Vec<ArtifactLabel>,
}

impl Planted {
    pub fn is_artifact(&self) -> Vec<bool> {
        self.labels.iter().map(ArtifactLabel::is_artifact).collect()
    }
}

/// Clean background with `fraction` of epochs contaminated, cycling through
/// blink, EMG, step and drift at scales drawn from `scale_range`.
pub fn planted(cfg: &SynthConfig, fraction: f64, scale_range: (f64, f64)) -> Result<Planted> {
    let clean = gen_clean(cfg)?;
    let labels = plan_artifacts(&clean.epoch_ids, cfg.n_channels, fraction, &ArtifactKind::PLANTED, scale_range, cfg.seed);
    let epochs = inject(&clean, &labels, cfg.seed)?;
    Ok(Planted { epochs, labels })
}

/// Parameters of one synthetic motor-imagery subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectSpec {
    pub subject_id: String,
    pub sessions: usize,
    pub epochs_per_class: usize,
    pub n_channels: usize,
    /// Class-1 to class-0 oscillation gain on the first quarter of the channels.
    pub gain_ratio: f64,
    /// Fraction of epochs carrying a gross artifact.
    pub contamination: f64,
    pub artifact_scale: (f64, f64),
    /// Contaminated epochs get random labels, so they carry no class information.
    pub shuffle_contaminated: bool,
    pub seed: u64,
}

impl Default for SubjectSpec {
    fn default() -> Self {
        Self {
            subject_id: "S0".into(),
            sessions: 2,
            epochs_per_class: 100,
            n_channels: 8,
            gain_ratio: 3.0,
            contamination: 0.0,
            artifact_scale: (20.0, 50.0),
            shuffle_contaminated: true,
            seed: 0,
        }
    }
}

/// Class-dependent channels: the first quarter of the montage, at least one.
pub fn class_channels(n_channels: usize) -> Vec<usize> {
    (0..n_channels.div_ceil(4).max(1)).collect()
}

/// One subject's sessions, each with `epochs_per_class` epochs of both
/// classes. Epoch ids are unique within the subject and start at `id_offset`.
pub fn subject(spec: &SubjectSpec, id_offset: u64) -> Result<(EpochTensor, Vec<ArtifactLabel>)> {
    let map = ClassGainMap::ratio(class_channels(spec.n_channels), spec.gain_ratio);
    let per_session = 2 * spec.epochs_per_class;
    let mut parts = Vec::with_capacity(spec.sessions);
    let mut truth = Vec::new();
    for k in 0..spec.sessions {
        let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        let cfg = SynthConfig {
            n_channels: spec.n_channels,
            n_epochs: per_session,
            seed,
            subject_id: spec.subject_id.clone(),
            session_id: k.to_string(),
            ..SynthConfig::default()
        };
        let base = id_offset + (k * per_session) as u64;
        let e = gen_two_class(&cfg, &map)?.with_epoch_ids((base..base + per_session as u64).collect())?;
        let labels = plan_artifacts(&e.epoch_ids, spec.n_channels, spec.contamination, &ArtifactKind::PLANTED, spec.artifact_scale, seed);
        let mut e = inject(&e, &labels, seed)?;
        if spec.shuffle_contaminated {
            let bad: Vec<u64> = labels.iter().filter(|l| l.is_artifact()).map(|l| l.epoch_id).collect();
            e = shuffle_labels(&e, &bad, seed);
        }
        parts.push(e);
        truth.extend(labels);
    }
    Ok((EpochTensor::concat(&parts)?, truth))
}

/// Several subjects stacked into one tensor with globally unique epoch ids.
pub fn study(specs: &[SubjectSpec]) -> Result<(EpochTensor, Vec<ArtifactLabel>)> {
    let mut parts = Vec::with_capacity(specs.len());
    let mut truth = Vec::new();
    let mut offset = 0u64;
    for s in specs {
        let (e, t) = subject(s, offset)?;
        offset += e.n_epochs() as u64;
        parts.push(e);
        truth.extend(t);
    }
    Ok((EpochTensor::concat(&parts)?, truth))
}

/// `n` subjects whose contamination rises linearly from 0 to `max_rate`.
pub fn heterogeneous_study(n: usize, max_rate: f64, base: &SubjectSpec) -> Vec<SubjectSpec> {
    (0..n)
        .map(|i| SubjectSpec {
            subject_id: format!("S{i:02}"),
            contamination: if n > 1 { max_rate * i as f64 / (n - 1) as f64 } else { 0.0 },
            seed: base.seed.wrapping_mul(7919).wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}
