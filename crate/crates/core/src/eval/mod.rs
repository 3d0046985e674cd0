//! Recall@K over predicted phrases, object accuracy, and the frequency
//! baseline.
//!
//! Evaluation runs in the unconstrained setting: every ordered object pair
//! may emit a phrase for every non-background predicate class, scored as
//! p(subject label) · p(predicate) · p(object label). In predicate
//! classification (PredCls) the object labels are given, so their
//! probabilities are 1; in scene-graph classification (SGCls) they come
//! from the model's object head and a matched phrase must also carry the
//! correct endpoint labels.

use crate::autodiff::{Real, Tape};
use crate::data::{ordered_pairs, pair_index, Corpus, EncodedScene, Relation};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::util::parallel_map_indexed;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// (object logits, predicate logits) for one scene.
type SceneLogits = (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Predcls,
    Sgcls,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalMode::Predcls => write!(f, "predcls"),
            EvalMode::Sgcls => write!(f, "sgcls"),
        }
    }
}

/// One scored (subject, predicate, object) candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhrasePrediction {
    pub subj: usize,
    pub obj: usize,
    /// Non-background predicate class (>= 1).
    pub pred: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub r_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_accuracy: Option<f64>,
    /// Scenes without annotated relations, excluded from recall averaging.
    pub scenes_skipped: usize,
    pub scenes_evaluated: usize,
}

pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Argmax with ties broken by the lowest class index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Enumerate and rank phrases from classifier logits. `pred_logits` rows
/// follow the canonical ordered-pair indexing and include the background
/// class at index 0, which is never emitted as a phrase. Sorting is by
/// descending score with ties broken by (subj, obj, pred) ascending, then
/// the list is truncated to `k`.
pub fn predict_phrases(
    obj_logits: &[Vec<f64>],
    pred_logits: &[Vec<f64>],
    mode: EvalMode,
    k: usize,
) -> Result<Vec<PhrasePrediction>> {
    if k < 1 {
        return Err(Error::Input("recall K must be >= 1".into()));
    }
    let n = obj_logits.len();
    if pred_logits.len() != n * (n.saturating_sub(1)) {
        return Err(Error::Dimension {
            op: "predict_phrases",
            lhs: vec![pred_logits.len()],
            rhs: vec![n * (n.saturating_sub(1))],
        });
    }
    let obj_probs: Vec<Vec<f64>> = obj_logits.iter().map(|l| softmax_probs(l)).collect();
    let pred_probs: Vec<Vec<f64>> = pred_logits.iter().map(|l| softmax_probs(l)).collect();
    Ok(rank_phrases(&obj_probs, &pred_probs, mode, k))
}

/// Shared ranking core over probability tables (used by both the model
/// path and the frequency baseline).
pub fn rank_phrases(
    obj_probs: &[Vec<f64>],
    pred_probs: &[Vec<f64>],
    mode: EvalMode,
    k: usize,
) -> Vec<PhrasePrediction> {
    let n = obj_probs.len();
    let mut phrases = Vec::new();
    for (i, j) in ordered_pairs(n) {
        let row = &pred_probs[pair_index(i, j, n)];
        let (p_subj, p_obj) = match mode {
            EvalMode::Predcls => (1.0, 1.0),
            EvalMode::Sgcls => (
                obj_probs[i][argmax(&obj_probs[i])],
                obj_probs[j][argmax(&obj_probs[j])],
            ),
        };
        for (pred, &p_pred) in row.iter().enumerate().skip(1) {
            phrases.push(PhrasePrediction {
                subj: i,
                obj: j,
                pred,
                score: p_subj * p_pred * p_obj,
            });
        }
    }
    phrases.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| (a.subj, a.obj, a.pred).cmp(&(b.subj, b.obj, b.pred)))
    });
    phrases.truncate(k);
    phrases
}

/// Fraction of ground-truth triples found in the top-K predictions. Each
/// ground-truth triple consumes at most one prediction. A match is exact
/// (subj index, predicate, obj index) equality; when `labels` is given
/// (SGCls), the predicted endpoint labels must also equal the true ones.
/// Returns `None` for scenes without annotations (skipped, not counted).
pub fn recall_at_k(
    predictions: &[PhrasePrediction],
    ground_truth: &[Relation],
    k: usize,
    labels: Option<(&[usize], &[usize])>,
) -> Option<f64> {
    if ground_truth.is_empty() {
        return None;
    }
    let mut remaining: Vec<Relation> = ground_truth.to_vec();
    let mut hits = 0usize;
    for p in predictions.iter().take(k) {
        if let Some((predicted, truth)) = labels {
            if predicted[p.subj] != truth[p.subj] || predicted[p.obj] != truth[p.obj] {
                continue;
            }
        }
        if let Some(pos) = remaining
            .iter()
            .position(|r| r.subj == p.subj && r.obj == p.obj && r.pred == p.pred)
        {
            remaining.swap_remove(pos);
            hits += 1;
        }
    }
    Some(hits as f64 / ground_truth.len() as f64)
}

/// Fraction of objects whose argmax logit equals the true label.
pub fn object_accuracy(obj_logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = obj_logits
        .iter()
        .zip(labels)
        .filter(|(l, &y)| argmax(l) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Empirical P(predicate | subject class, object class) with add-one
/// smoothing over the non-background classes.
pub struct FreqBaseline {
    counts: HashMap<(usize, usize), Vec<u64>>,
    n_pred: usize,
}

pub fn freq_baseline(train: &Corpus) -> Result<FreqBaseline> {
    if train.scenes.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    let n_pred = train.header.spec.n_pred_classes;
    let mut counts: HashMap<(usize, usize), Vec<u64>> = HashMap::new();
    for scene in &train.scenes {
        for r in &scene.relations {
            let key = (scene.objects[r.subj].label, scene.objects[r.obj].label);
            counts.entry(key).or_insert_with(|| vec![0; n_pred])[r.pred - 1] += 1;
        }
    }
    Ok(FreqBaseline { counts, n_pred })
}

impl FreqBaseline {
    /// Smoothed predicate distribution for one class pair; uniform when
    /// the pair was never observed. Index c holds predicate class c+1.
    pub fn predicate_dist(&self, subj_class: usize, obj_class: usize) -> Vec<f64> {
        match self.counts.get(&(subj_class, obj_class)) {
            Some(row) => {
                let total: u64 = row.iter().sum();
                let denom = (total + self.n_pred as u64) as f64;
                row.iter().map(|&c| (c + 1) as f64 / denom).collect()
            }
            None => vec![1.0 / self.n_pred as f64; self.n_pred],
        }
    }

    /// Per-pair probability rows shaped like predicate softmax output
    /// (background slot 0 fixed at probability zero).
    pub fn pred_probs_for(&self, labels: &[usize]) -> Vec<Vec<f64>> {
        let n = labels.len();
        ordered_pairs(n)
            .map(|(i, j)| {
                let mut row = vec![0.0; self.n_pred + 1];
                row[1..].copy_from_slice(&self.predicate_dist(labels[i], labels[j]));
                row
            })
            .collect()
    }
}

/// Model evaluation over a set of encoded scenes: macro-averaged recall at
/// each K plus object accuracy. Scenes with no annotated relations are
/// skipped for recall but still count toward object accuracy.
pub fn evaluate_model<F: Real>(
    scenes: &[EncodedScene],
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    mode: EvalMode,
    ks: &[usize],
    workers: usize,
) -> Result<EvalReport> {
    let per_scene = parallel_map_indexed(scenes.len(), workers, |idx| -> Result<SceneLogits> {
        let scene = &scenes[idx];
        let mut tape = Tape::<F>::new();
        let vars = params.register(&mut tape);
        let pass = forward(&mut tape, scene, &vars, cfg)?;
        Ok((pass.obj_logits_f64(&tape), pass.pred_logits_f64(&tape)))
    });

    let mut logits = Vec::with_capacity(scenes.len());
    for r in per_scene {
        logits.push(r?);
    }
    aggregate_report(scenes, &logits, mode, ks, |obj| {
        obj.iter().map(|l| argmax(l)).collect()
    })
}

/// Frequency-baseline evaluation: predicate scores from co-occurrence
/// statistics, object scores from the isolated detector's soft labels.
pub fn evaluate_freq(
    scenes: &[EncodedScene],
    baseline: &FreqBaseline,
    mode: EvalMode,
    ks: &[usize],
) -> Result<EvalReport> {
    let max_k = *ks
        .iter()
        .max()
        .ok_or_else(|| Error::Input("no K given".into()))?;
    let mut r_sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut counted = 0usize;
    let mut skipped = 0usize;
    let mut correct_objs = 0usize;
    let mut total_objs = 0usize;

    for scene in scenes {
        let detector_labels: Vec<usize> = scene.soft_labels.iter().map(|sl| argmax(sl)).collect();
        let lookup_labels = match mode {
            EvalMode::Predcls => &scene.labels,
            EvalMode::Sgcls => &detector_labels,
        };
        let pred_probs = baseline.pred_probs_for(lookup_labels);
        let phrases = rank_phrases(&scene.soft_labels, &pred_probs, mode, max_k);

        correct_objs += detector_labels
            .iter()
            .zip(&scene.labels)
            .filter(|(a, b)| a == b)
            .count();
        total_objs += scene.labels.len();

        let labels = match mode {
            EvalMode::Predcls => None,
            EvalMode::Sgcls => Some((detector_labels.as_slice(), scene.labels.as_slice())),
        };
        match recall_at_k(&phrases, &scene.relations, max_k, labels) {
            Some(_) => {
                counted += 1;
                for (&k, sum) in r_sums.iter_mut() {
                    *sum += recall_at_k(&phrases, &scene.relations, k, labels).unwrap();
                }
            }
            None => skipped += 1,
        }
    }

    Ok(EvalReport {
        mode,
        r_at: r_sums
            .into_iter()
            .map(|(k, s)| (k, if counted > 0 { s / counted as f64 } else { 0.0 }))
            .collect(),
        object_accuracy: Some(correct_objs as f64 / total_objs.max(1) as f64),
        scenes_skipped: skipped,
        scenes_evaluated: counted,
    })
}

fn aggregate_report(
    scenes: &[EncodedScene],
    logits: &[SceneLogits],
    mode: EvalMode,
    ks: &[usize],
    label_fn: impl Fn(&[Vec<f64>]) -> Vec<usize>,
) -> Result<EvalReport> {
    let max_k = *ks
        .iter()
        .max()
        .ok_or_else(|| Error::Input("no K given".into()))?;
    let mut r_sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut counted = 0usize;
    let mut skipped = 0usize;
    let mut acc_sum = 0.0;

    for (scene, (obj_logits, pred_logits)) in scenes.iter().zip(logits) {
        acc_sum += object_accuracy(obj_logits, &scene.labels);
        let phrases = predict_phrases(obj_logits, pred_logits, mode, max_k)?;
        let predicted = label_fn(obj_logits);
        let labels = match mode {
            EvalMode::Predcls => None,
            EvalMode::Sgcls => Some((predicted.as_slice(), scene.labels.as_slice())),
        };
        match recall_at_k(&phrases, &scene.relations, max_k, labels) {
            Some(_) => {
                counted += 1;
                for (&k, sum) in r_sums.iter_mut() {
                    *sum += recall_at_k(&phrases, &scene.relations, k, labels).unwrap();
                }
            }
            None => skipped += 1,
        }
    }

    Ok(EvalReport {
        mode,
        r_at: r_sums
            .into_iter()
            .map(|(k, s)| (k, if counted > 0 { s / counted as f64 } else { 0.0 }))
            .collect(),
        object_accuracy: Some(acc_sum / scenes.len().max(1) as f64),
        scenes_skipped: skipped,
        scenes_evaluated: counted,
    })
}

impl EvalReport {
    /// Fixed-width results table (one row per mode is printed by the CLI).
    pub fn table_row(&self) -> String {
        let r = |k: usize| {
            self.r_at
                .get(&k)
                .map(|v| format!("{:>7.2}", v * 100.0))
                .unwrap_or_else(|| format!("{:>7}", "-"))
        };
        let acc = self
            .object_accuracy
            .map(|a| format!("{:>8.2}", a * 100.0))
            .unwrap_or_else(|| format!("{:>8}", "-"));
        format!("{:<8} {} {} {}", self.mode.to_string(), r(50), r(100), acc)
    }
}

#[cfg(test)]
mod tests;
