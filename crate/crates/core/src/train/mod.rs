//! Joint training: cross-entropy loss over objects plus sampled relations,
//! Adam with bias correction, epoch/batch management and checkpoint
//! selection by validation score.
//!
//! Negative relations are sampled per scene so that every image trains on
//! `predicates_per_image` relation slots: all annotated positives, the rest
//! uniformly drawn unannotated ordered pairs labeled background. All
//! randomness comes from substreams keyed on (seed, epoch, scene), so the
//! trajectory is bitwise reproducible at any worker count.

use crate::autodiff::{fl, Real, Tape, Var};
use crate::data::{pair_index, Corpus, EncodedScene};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalMode};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::util::{parallel_map_indexed, stream_seed};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Relation slots per image (positives plus sampled negatives).
    pub predicates_per_image: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Optional global-norm gradient clipping (off by default).
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 15,
            predicates_per_image: 16,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip: None,
            workers: 1,
        }
    }
}

/// A relation slot for the loss: class 0 is background.
pub type SampledRelation = (usize, usize, usize);

/// All annotated pairs (never dropped, even above `k`), padded to `k`
/// slots with uniformly sampled unannotated ordered pairs labeled
/// background. Runs short without error when the scene has too few
/// unannotated pairs.
pub fn sample_relations(
    scene: &EncodedScene,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SampledRelation> {
    let n = scene.n_objects();
    let mut slots: Vec<SampledRelation> = scene
        .relations
        .iter()
        .map(|r| (r.subj, r.obj, r.pred))
        .collect();
    if slots.len() >= k {
        return slots;
    }
    let annotated: std::collections::HashSet<(usize, usize)> =
        scene.relations.iter().map(|r| (r.subj, r.obj)).collect();
    let mut pool: Vec<(usize, usize)> = crate::data::ordered_pairs(n)
        .filter(|p| !annotated.contains(p))
        .collect();
    pool.shuffle(rng);
    for (i, j) in pool.into_iter().take(k - slots.len()) {
        slots.push((i, j, 0));
    }
    slots
}

/// [`sample_relations`] with a one-shot stream seeded from `seed`.
pub fn sample_relations_seeded(scene: &EncodedScene, k: usize, seed: u64) -> Vec<SampledRelation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_relations(scene, k, &mut rng)
}

/// Mean object cross-entropy plus mean relation cross-entropy, summed
/// unweighted.
pub fn compute_loss<F: Real>(
    tape: &mut Tape<F>,
    obj_logits: &[Var],
    pred_logits: &[Var],
    scene: &EncodedScene,
    sampled: &[SampledRelation],
) -> Result<Var> {
    let n = scene.n_objects();
    let mut obj_terms = Vec::with_capacity(n);
    for (i, &logits) in obj_logits.iter().enumerate() {
        obj_terms.push(tape.cross_entropy(logits, scene.labels[i])?);
    }
    let obj_loss = tape.mean_of_scalars(&obj_terms)?;

    let mut rel_terms = Vec::with_capacity(sampled.len());
    for &(subj, obj, pred) in sampled {
        let logits = pred_logits[pair_index(subj, obj, n)];
        rel_terms.push(tape.cross_entropy(logits, pred)?);
    }
    let rel_loss = tape.mean_of_scalars(&rel_terms)?;

    tape.add(obj_loss, rel_loss)
}

/// Loss and per-parameter gradients for one scene (gradients in
/// [`ModelParams::visit`] order).
pub fn scene_loss_and_grads<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    scene: &EncodedScene,
    sampled: &[SampledRelation],
) -> Result<(f64, Vec<Vec<F>>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, scene, &vars, cfg)?;
    let loss = compute_loss(
        &mut tape,
        &pass.obj_logits,
        &pass.pred_logits,
        scene,
        sampled,
    )?;
    let grads = tape.backward(loss)?;
    let per_param: Vec<Vec<F>> = vars
        .iter()
        .map(|(_, var)| grads.get(var).data().to_vec())
        .collect();
    Ok((tape.scalar_value(loss).to_f64().unwrap(), per_param))
}

/// Loss only (used by finite-difference checks).
pub fn scene_loss<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    scene: &EncodedScene,
    sampled: &[SampledRelation],
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, scene, &vars, cfg)?;
    let loss = compute_loss(
        &mut tape,
        &pass.obj_logits,
        &pass.pred_logits,
        scene,
        sampled,
    )?;
    Ok(tape.scalar_value(loss).to_f64().unwrap())
}

/// First/second Adam moments per parameter tensor, plus the step counter.
pub struct AdamState<F: Real> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(vec![F::zero(); t.numel()]));
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update on a flat parameter slice. Exposed for direct testing
/// of the update formula.
pub fn adam_apply<F: Real>(
    data: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    cfg: &TrainConfig,
) {
    let b1: F = fl(cfg.adam_beta1);
    let b2: F = fl(cfg.adam_beta2);
    let lr: F = fl(cfg.learning_rate);
    let eps: F = fl(cfg.adam_eps);
    let one = F::one();
    let bias1 = one - fl::<F>(cfg.adam_beta1.powi(t as i32));
    let bias2 = one - fl::<F>(cfg.adam_beta2.powi(t as i32));
    for i in 0..data.len() {
        m[i] = b1 * m[i] + (one - b1) * grad[i];
        v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Standard Adam with bias correction over every parameter tensor.
/// Fails fast on a NaN gradient, naming the parameter.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut bad: Option<String> = None;
    let mut idx = 0usize;
    params.visit(&mut |name, _| {
        if bad.is_none() && grads[idx].iter().any(|g| !g.is_finite()) {
            bad = Some(name.to_string());
        }
        idx += 1;
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite {
            context: format!("gradient of {name}"),
            value: f64::NAN,
        });
    }

    state.t += 1;
    let t = state.t;
    let mut idx = 0usize;
    let m = &mut state.m;
    let v = &mut state.v;
    params.visit_mut(&mut |_, tensor| {
        adam_apply(
            tensor.data_mut(),
            &grads[idx],
            &mut m[idx],
            &mut v[idx],
            t,
            cfg,
        );
        idx += 1;
    });
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_obj_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_r50: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_r100: Option<f64>,
}

pub struct TrainOutcome<F: Real> {
    /// Parameters selected by validation score (falls back to the final
    /// epoch when no validation corpus was given).
    pub params: ModelParams<F>,
    pub final_params: ModelParams<F>,
    pub metrics: Vec<EpochMetrics>,
    pub optimizer_steps: u64,
    pub best_epoch: Option<usize>,
}

/// Full training run. Gradients are averaged over each batch (one
/// optimizer step per batch); per-scene work may fan out across
/// `cfg.workers` threads, with an ordered reduction keeping the result
/// independent of scheduling.
pub fn train<F: Real>(
    train_corpus: &Corpus,
    val_corpus: Option<&Corpus>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    initial: Option<ModelParams<F>>,
) -> Result<TrainOutcome<F>> {
    model_cfg.validate()?;
    if train_corpus.scenes.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let scenes = train_corpus.encode_all()?;
    let val_scenes = match val_corpus {
        Some(c) => Some(c.encode_all()?),
        None => None,
    };

    let mut params = initial.unwrap_or_else(|| ModelParams::<F>::init(model_cfg, cfg.seed));
    let mut adam = AdamState::new(&params);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<F>)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &["shuffle", &epoch.to_string()]));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = parallel_map_indexed(batch.len(), cfg.workers, |slot| {
                let scene = &scenes[batch[slot]];
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                    cfg.seed,
                    &["negatives", &epoch.to_string(), &scene.id],
                ));
                let sampled = sample_relations(scene, cfg.predicates_per_image, &mut rng);
                scene_loss_and_grads(&params, model_cfg, scene, &sampled)
            });

            let mut mean_grads: Option<Vec<Vec<F>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match &mut mean_grads {
                    None => mean_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x = *x + *y;
                            }
                        }
                    }
                }
            }
            let scale: F = fl(1.0 / batch.len() as f64);
            let mut grads = mean_grads.expect("non-empty batch");
            for g in &mut grads {
                for x in g.iter_mut() {
                    *x = *x * scale;
                }
            }
            batch_loss /= batch.len() as f64;

            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    msg: format!("batch loss is {batch_loss}"),
                });
            }

            if let Some(clip) = cfg.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            adam_step(&mut params, &grads, &mut adam, cfg)?;
            params.check_finite().map_err(|e| Error::Diverged {
                epoch,
                batch: batch_no,
                msg: e.to_string(),
            })?;

            epoch_loss += batch_loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;

        let mut entry = EpochMetrics {
            epoch,
            train_loss,
            val_obj_acc: None,
            val_r50: None,
            val_r100: None,
        };
        if let Some(val) = &val_scenes {
            let report = evaluate_model(
                val,
                &params,
                model_cfg,
                EvalMode::Sgcls,
                &[50, 100],
                cfg.workers,
            )?;
            let acc = report.object_accuracy.unwrap_or(0.0);
            let r50 = report.r_at.get(&50).copied().unwrap_or(0.0);
            let r100 = report.r_at.get(&100).copied().unwrap_or(0.0);
            entry.val_obj_acc = Some(acc);
            entry.val_r50 = Some(r50);
            entry.val_r100 = Some(r100);
            let score = acc + 0.5 * (r50 + r100);
            if best.as_ref().map(|(s, _, _)| score > *s).unwrap_or(true) {
                best = Some((score, epoch, params.clone()));
            }
        }
        metrics.push(entry);
    }

    let (best_epoch, selected) = match best {
        Some((_, epoch, p)) => (Some(epoch), p),
        None => (None, params.clone()),
    };
    Ok(TrainOutcome {
        params: selected,
        final_params: params,
        metrics,
        optimizer_steps: adam.t,
        best_epoch,
    })
}

fn clip_global_norm<F: Real>(grads: &mut [Vec<F>], max_norm: f64) {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for x in g {
            let v = x.to_f64().unwrap();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale: F = fl(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x = *x * scale;
            }
        }
    }
}
