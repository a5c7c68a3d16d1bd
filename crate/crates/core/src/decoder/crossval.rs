//! Leave-one-session-out and leave-one-subject-out evaluation with a
//! rejector fitted inside each training fold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::filter::bandpass_epochs;
use super::{DecoderConfig, TangentClassifier};
use crate::baseline::iforest::{IForestConfig, IForestRejector};
use crate::baseline::p2p::p2p_reject;
use crate::error::{FaarError, Result};
use crate::faar::{FaarConfig, FaarRejector};
use crate::metrics::{balanced_accuracy, ece, f1_precision, FoldMetrics, ECE_BINS};
use crate::model::{EpochTensor, RejectionDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    CrossSession,
    CrossSubject,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::CrossSession => "cross-session",
            Scheme::CrossSubject => "cross-subject",
        })
    }
}

/// Which version of the epochs the rejector sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectInput {
    /// The band-passed epochs the decoder also uses.
    #[default]
    Filtered,
    Raw,
}

/// Decisions produced elsewhere, keyed by epoch id; unlisted epochs are kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalDecisions {
    pub rejected: HashMap<u64, bool>,
}

impl ExternalDecisions {
    pub fn from_decisions(d: &[RejectionDecision]) -> Self {
        Self { rejected: d.iter().map(|x| (x.epoch_id, x.rejected)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejector {
    None,
    Faar(FaarConfig),
    P2p { threshold_uv: f64 },
    IForest(IForestConfig),
    External(ExternalDecisions),
}

impl Rejector {
    pub fn name(&self) -> &'static str {
        match self {
            Rejector::None => "none",
            Rejector::Faar(_) => "faar",
            Rejector::P2p { .. } => "p2p",
            Rejector::IForest(_) => "iforest",
            Rejector::External(_) => "external",
        }
    }

    /// Rejection masks for `train` and `test`, with statistics from `train` only.
    pub fn masks(&self, train: &EpochTensor, test: &EpochTensor) -> Result<(Vec<bool>, Vec<bool>)> {
        let flags = |d: Vec<RejectionDecision>| d.into_iter().map(|x| x.rejected).collect::<Vec<_>>();
        Ok(match self {
            Rejector::None => (vec![false; train.n_epochs()], vec![false; test.n_epochs()]),
            Rejector::Faar(cfg) => {
                let r = FaarRejector::fit(train, cfg)?;
                (flags(r.decide(train)?), flags(r.decide(test)?))
            }
            Rejector::P2p { threshold_uv } => (flags(p2p_reject(train, *threshold_uv)?), flags(p2p_reject(test, *threshold_uv)?)),
            Rejector::IForest(cfg) => {
                let r = IForestRejector::fit(train, cfg)?;
                (flags(r.decide(train)?), flags(r.decide(test)?))
            }
            Rejector::External(ext) => {
                let look = |e: &EpochTensor| e.epoch_ids.iter().map(|id| ext.rejected.get(id).copied().unwrap_or(false)).collect();
                (look(train), look(test))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossvalConfig {
    pub decoder: DecoderConfig,
    pub reject_on: RejectInput,
}

#[derive(Debug, Clone)]
struct Fold {
    subject: String,
    held_out: String,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn folds(e: &EpochTensor, scheme: Scheme) -> Result<Vec<Fold>> {
    let mut out = Vec::new();
    match scheme {
        Scheme::CrossSession => {
            let mut by_subject: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            for (s, k) in e.subject_ids.iter().zip(&e.session_ids) {
                by_subject.entry(s).or_default().insert(k);
            }
            for (subject, sessions) in by_subject.iter().filter(|(_, k)| k.len() >= 2) {
                for held in sessions {
                    let (mut train, mut test) = (Vec::new(), Vec::new());
                    for i in 0..e.n_epochs() {
                        if e.subject_ids[i] != *subject {
                            continue;
                        }
                        if e.session_ids[i] == *held { test.push(i) } else { train.push(i) }
                    }
                    out.push(Fold { subject: subject.to_string(), held_out: held.to_string(), train, test });
                }
            }
            if out.is_empty() {
                return Err(FaarError::InsufficientFolds("no subject has two or more sessions".into()));
            }
        }
        Scheme::CrossSubject => {
            let subjects: BTreeSet<&str> = e.subject_ids.iter().map(String::as_str).collect();
            if subjects.len() < 2 {
                return Err(FaarError::InsufficientFolds(format!("{} subject(s); need at least 2", subjects.len())));
            }
            for held in subjects {
                let (test, train): (Vec<usize>, Vec<usize>) = (0..e.n_epochs()).partition(|&i| e.subject_ids[i] == held);
                out.push(Fold { subject: held.to_string(), held_out: held.to_string(), train, test });
            }
        }
    }
    Ok(out)
}

/// One [`FoldMetrics`] per fold, in subject/held-out order.
pub fn crossval(e: &EpochTensor, rejector: &Rejector, scheme: Scheme, cfg: &CrossvalConfig) -> Result<Vec<FoldMetrics>> {
    let Some(labels) = e.labels.as_ref() else {
        return Err(FaarError::EmptyInput("cross-validation needs labelled epochs".into()));
    };
    let plan = folds(e, scheme)?;
    let filtered = bandpass_epochs(e, cfg.decoder.band.0, cfg.decoder.band.1)?;
    let reject_src = match cfg.reject_on {
        RejectInput::Filtered => &filtered,
        RejectInput::Raw => e,
    };
    plan.iter()
        .enumerate()
        .map(|(fold_id, fold)| {
            let (rej_train, rej_test) = rejector.masks(&reject_src.select(&fold.train), &reject_src.select(&fold.test))?;
            let keep = |idx: &[usize], mask: &[bool]| -> Vec<usize> {
                idx.iter().zip(mask).filter(|(_, r)| !**r).map(|(i, _)| *i).collect()
            };
            let kept_train = keep(&fold.train, &rej_train);
            let kept_test = keep(&fold.test, &rej_test);
            let n_rejected_train = fold.train.len() - kept_train.len();
            let n_rejected_test = fold.test.len() - kept_test.len();
            let total = fold.train.len() + fold.test.len();
            let mut m = FoldMetrics {
                fold_id,
                subject_id: fold.subject.clone(),
                held_out: fold.held_out.clone(),
                balanced_accuracy: None,
                f1: None,
                precision: None,
                ece: None,
                rejection_rate: (n_rejected_train + n_rejected_test) as f64 / total.max(1) as f64,
                n_train: fold.train.len(),
                n_test: fold.test.len(),
                n_rejected_train,
                n_rejected_test,
                all_rejected: kept_train.is_empty() || kept_test.is_empty(),
            };
            let train_labels: Vec<u32> = kept_train.iter().map(|&i| labels[i]).collect();
            let classes: BTreeSet<u32> = train_labels.iter().copied().collect();
            if m.all_rejected || classes.len() < 2 {
                return Ok(m);
            }
            let train = filtered.select(&kept_train);
            let test = filtered.select(&kept_test);
            let clf = TangentClassifier::fit(train.data.view(), &train_labels, &cfg.decoder)?;
            let proba = clf.predict_proba(test.data.view())?;
            let [negative, positive] = clf.classes();
            let pred: Vec<u32> = proba.iter().map(|p| if *p >= 0.5 { positive } else { negative }).collect();
            let truth: Vec<u32> = kept_test.iter().map(|&i| labels[i]).collect();
            let (f1, precision) = f1_precision(&truth, &pred, positive)?;
            m.balanced_accuracy = Some(balanced_accuracy(&truth, &pred)?);
            m.f1 = Some(f1);
            m.precision = Some(precision);
            m.ece = Some(ece(&truth, &proba, positive, ECE_BINS)?);
            Ok(m)
        })
        .collect()
}
