//! Synthetic corpus generation. Scenes follow a homogeneity assumption:
//! each scene has a latent context that biases which object classes appear,
//! with `context_strength` controlling how strongly. Predicates come from a
//! deterministic per-class-pair table, so relation statistics are learnable
//! and the frequency baseline has a known optimum.

use super::synth::FeatureSynth;
use super::{Corpus, GenSpec, Relation, SceneInstance, SceneObject};
use crate::error::Result;
use crate::util::stream_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generate a full corpus and split it 70/10/20 into train/val/test.
/// Scene ids are globally unique across the splits and all synthesis is
/// keyed on (seed, scene id), so the same spec reproduces byte-identical
/// corpora.
pub fn generate_corpus(spec: &GenSpec) -> Result<(Corpus, Corpus, Corpus)> {
    spec.validate()?;
    let synth = FeatureSynth::new(spec, spec.seed);
    let supports = context_supports(spec.n_obj_classes, spec.n_contexts);

    let scenes: Vec<SceneInstance> = (0..spec.scenes)
        .map(|idx| generate_scene(spec, &synth, &supports, idx))
        .collect();

    let n = scenes.len();
    let n_train = (n as f64 * 0.7).floor() as usize;
    let n_val = (n as f64 * 0.1).floor() as usize;
    let mut iter = scenes.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train).collect();
    let val: Vec<_> = iter.by_ref().take(n_val).collect();
    let test: Vec<_> = iter.collect();

    Ok((
        Corpus::new(spec.clone(), train),
        Corpus::new(spec.clone(), val),
        Corpus::new(spec.clone(), test),
    ))
}

/// Disjoint class subsets, one per context, as even as possible.
pub fn context_supports(n_classes: usize, n_contexts: usize) -> Vec<Vec<usize>> {
    let base = n_classes / n_contexts;
    let extra = n_classes % n_contexts;
    let mut supports = Vec::with_capacity(n_contexts);
    let mut next = 0;
    for c in 0..n_contexts {
        let len = base + usize::from(c < extra);
        supports.push((next..next + len).collect());
        next += len;
    }
    supports
}

/// The deterministic predicate for a (subject class, object class) pair.
pub fn predicate_table(seed: u64, subj_class: usize, obj_class: usize, n_pred: usize) -> usize {
    let h = stream_seed(
        seed,
        &[
            "pred-table",
            &subj_class.to_string(),
            &obj_class.to_string(),
        ],
    );
    1 + (h % n_pred as u64) as usize
}

fn generate_scene(
    spec: &GenSpec,
    synth: &FeatureSynth,
    supports: &[Vec<usize>],
    idx: usize,
) -> SceneInstance {
    let id = format!("s{idx:06}");
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &["scene", &id]));

    let context_id = rng.gen_range(0..spec.n_contexts);
    let n_objects = rng.gen_range(spec.objects_per_scene.0..=spec.objects_per_scene.1);

    let mut objects = Vec::with_capacity(n_objects);
    for obj_idx in 0..n_objects {
        let label = if rng.gen::<f64>() < spec.context_strength {
            *supports[context_id]
                .as_slice()
                .choose(&mut rng)
                .expect("non-empty support")
        } else {
            rng.gen_range(0..spec.n_obj_classes)
        };
        objects.push(SceneObject {
            label,
            bbox: random_bbox(&mut rng),
            feature: Some(synth.feature(&id, obj_idx, label)),
            soft_label: Some(synth.soft_label(&id, obj_idx, label)),
        });
    }

    let max_pairs = n_objects * (n_objects - 1);
    let want = rng.gen_range(spec.relations_per_scene.0..=spec.relations_per_scene.1);
    let n_relations = want.min(max_pairs);
    let mut pairs: Vec<(usize, usize)> = super::ordered_pairs(n_objects).collect();
    pairs.shuffle(&mut rng);
    let relations = pairs
        .into_iter()
        .take(n_relations)
        .map(|(subj, obj)| Relation {
            subj,
            obj,
            pred: predicate_table(
                spec.seed,
                objects[subj].label,
                objects[obj].label,
                spec.n_pred_classes,
            ),
        })
        .collect();

    SceneInstance {
        id,
        context_id: Some(context_id),
        objects,
        relations,
    }
}

fn random_bbox(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x1 = rng.gen_range(0.0..0.9);
    let y1 = rng.gen_range(0.0..0.9);
    let x2 = rng.gen_range(x1 + 0.05..1.0f64.min(x1 + 0.95));
    let y2 = rng.gen_range(y1 + 0.05..1.0f64.min(y1 + 0.95));
    [x1, y1, x2, y2]
}
