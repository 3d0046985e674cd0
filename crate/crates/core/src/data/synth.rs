//! Deterministic synthesis of object features, detector soft labels and
//! union-box edge features. Every value is a pure function of the corpus
//! header seed plus (scene id, object index), so a corpus loaded from disk
//! reproduces exactly what the generator produced in memory.

use super::{CorpusHeader, GenSpec};
use crate::error::{Error, Result};
use crate::util::{standard_normal, stream_seed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Spread of the Gaussian noise added to class-codebook features. Large
/// relative to codebook separation, so appearance alone is a weak cue and
/// label inference rewards contextual pooling.
const FEATURE_NOISE: f64 = 2.0;

/// Synthesizer for one corpus: class feature codebook and the fixed random
/// projection used for union-box edge features.
pub struct FeatureSynth {
    seed: u64,
    tau: f64,
    n_obj_classes: usize,
    feat_dim: usize,
    /// n_obj_classes × feat_dim.
    codebook: Vec<Vec<f64>>,
    /// feat_dim × (feat_dim + 4), applied to [mean feature; union box].
    projection: Vec<Vec<f64>>,
}

impl FeatureSynth {
    pub fn from_header(header: &CorpusHeader) -> Self {
        FeatureSynth::new(&header.spec, header.seed)
    }

    pub fn new(spec: &GenSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["codebook"]));
        let codebook = (0..spec.n_obj_classes)
            .map(|_| {
                (0..spec.feat_dim)
                    .map(|_| standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["union-projection"]));
        let scale = 1.0 / ((spec.feat_dim + 4) as f64).sqrt();
        let projection = (0..spec.feat_dim)
            .map(|_| {
                (0..spec.feat_dim + 4)
                    .map(|_| standard_normal(&mut rng) * scale)
                    .collect()
            })
            .collect();
        FeatureSynth {
            seed,
            tau: spec.detector_noise,
            n_obj_classes: spec.n_obj_classes,
            feat_dim: spec.feat_dim,
            codebook,
            projection,
        }
    }

    /// Visual feature of one object: its class codebook entry plus
    /// Gaussian noise from the object's own substream.
    pub fn feature(&self, scene_id: &str, obj_idx: usize, label: usize) -> Vec<f64> {
        let seed = stream_seed(self.seed, &["feature", scene_id, &obj_idx.to_string()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.codebook[label % self.n_obj_classes]
            .iter()
            .map(|&c| c + FEATURE_NOISE * standard_normal(&mut rng))
            .collect()
    }

    /// Simulated isolated-detector output for one object.
    pub fn soft_label(&self, scene_id: &str, obj_idx: usize, label: usize) -> Vec<f64> {
        let seed = stream_seed(self.seed, &["detector", scene_id, &obj_idx.to_string()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..self.n_obj_classes)
            .map(|_| standard_normal(&mut rng))
            .collect();
        soft_label_from_noise(label, self.n_obj_classes, self.tau, &noise)
    }

    /// Edge feature for the ordered pair (i, j): the mean of the two object
    /// features concatenated with the union box, pushed through the fixed
    /// projection. Symmetric in (i, j) by construction.
    pub fn union_box_feature(
        &self,
        features: &[Vec<f64>],
        bboxes: &[[f64; 4]],
        i: usize,
        j: usize,
    ) -> Result<Vec<f64>> {
        if i == j {
            return Err(Error::Index {
                op: "union_box_feature",
                index: i,
                len: features.len(),
            });
        }
        let ub = union_box(&bboxes[i], &bboxes[j]);
        let mut input = Vec::with_capacity(self.feat_dim + 4);
        for (a, b) in features[i].iter().zip(&features[j]) {
            input.push(0.5 * (a + b));
        }
        input.extend_from_slice(&ub);
        Ok(self
            .projection
            .iter()
            .map(|row| row.iter().zip(&input).map(|(&w, &x)| w * x).sum())
            .collect())
    }
}

/// Smallest box covering both inputs.
pub fn union_box(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0].min(b[0]),
        a[1].min(b[1]),
        a[2].max(b[2]),
        a[3].max(b[3]),
    ]
}

/// softmax(one-hot(label)/τ + noise). Exposed with the noise explicit so
/// the τ→0 limit can be exercised without randomness. `noise` must have
/// one entry per class.
pub fn soft_label_from_noise(label: usize, n_classes: usize, tau: f64, noise: &[f64]) -> Vec<f64> {
    debug_assert_eq!(noise.len(), n_classes);
    let mut logits: Vec<f64> = noise.to_vec();
    logits[label] += 1.0 / tau;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Simulated "object detector in isolation": the soft label for one object
/// of an existing scene, drawn from its deterministic substream.
pub fn detector_soft_labels(
    synth: &FeatureSynth,
    scene_id: &str,
    obj_idx: usize,
    label: usize,
    spec: &GenSpec,
) -> Result<Vec<f64>> {
    if spec.detector_noise <= 0.0 {
        return Err(Error::Spec(format!(
            "detector_noise {} must be positive",
            spec.detector_noise
        )));
    }
    Ok(synth.soft_label(scene_id, obj_idx, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GenSpec {
        GenSpec {
            n_contexts: 2,
            n_obj_classes: 10,
            n_pred_classes: 4,
            scenes: 4,
            objects_per_scene: (2, 4),
            relations_per_scene: (1, 2),
            context_strength: 0.5,
            detector_noise: 1.0,
            feat_dim: 8,
            seed: 42,
        }
    }

    #[test]
    fn tiny_tau_and_zero_noise_give_one_hot() {
        let sl = soft_label_from_noise(3, 5, 1e-9, &[0.0; 5]);
        for (i, &p) in sl.iter().enumerate() {
            if i == 3 {
                assert!((p - 1.0).abs() < 1e-12);
            } else {
                assert!(p < 1e-12);
            }
        }
    }

    #[test]
    fn soft_labels_sum_to_one_over_many_draws() {
        let s = spec();
        let synth = FeatureSynth::new(&s, s.seed);
        for k in 0..10_000 {
            let sl = synth.soft_label("s000000", k % 7, k % s.n_obj_classes);
            let sum: f64 = sl.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(sl.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn union_box_feature_symmetric_and_reproducible() {
        let s = spec();
        let synth = FeatureSynth::new(&s, s.seed);
        let b1 = [0.1, 0.2, 0.4, 0.5];
        let b2 = [0.3, 0.1, 0.9, 0.3];
        assert_eq!(union_box(&b1, &b2), union_box(&b2, &b1));
        assert_eq!(union_box(&b1, &b2), [0.1, 0.1, 0.9, 0.5]);

        // Identical objects at identical boxes: f_ij == f_ji.
        let f = synth.feature("s000000", 0, 2);
        let features = vec![f.clone(), f];
        let boxes = vec![b1, b1];
        let fij = synth.union_box_feature(&features, &boxes, 0, 1).unwrap();
        let fji = synth.union_box_feature(&features, &boxes, 1, 0).unwrap();
        assert_eq!(fij, fji);

        // Fixed seed and inputs reproduce bitwise.
        let synth2 = FeatureSynth::new(&s, s.seed);
        let fij2 = synth2.union_box_feature(&features, &boxes, 0, 1).unwrap();
        assert_eq!(fij, fij2);

        assert!(synth.union_box_feature(&features, &boxes, 1, 1).is_err());
    }

    /// Regression band for the simulated detector at τ = 1 on 20 classes,
    /// measured once over a 40k-object corpus and frozen.
    #[test]
    fn tau_one_detector_accuracy_stays_in_its_band() {
        let spec = GenSpec {
            n_contexts: 4,
            n_obj_classes: 20,
            n_pred_classes: 6,
            scenes: 10_000,
            objects_per_scene: (3, 5),
            relations_per_scene: (1, 3),
            context_strength: 0.5,
            detector_noise: 1.0,
            feat_dim: 4,
            seed: 99,
        };
        let (train, val, test) = crate::data::generate_corpus(&spec).unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        for scene in train.scenes.iter().chain(&val.scenes).chain(&test.scenes) {
            for obj in &scene.objects {
                let sl = obj.soft_label.as_ref().unwrap();
                let best = sl
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if best == obj.label {
                    correct += 1;
                }
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(
            (acc - 0.2275).abs() < 0.02,
            "tau=1 accuracy {acc} left the frozen band"
        );
    }

    #[test]
    fn feature_streams_are_per_object() {
        let s = spec();
        let synth = FeatureSynth::new(&s, s.seed);
        let a = synth.feature("s000001", 0, 3);
        let b = synth.feature("s000001", 1, 3);
        let a_again = synth.feature("s000001", 0, 3);
        assert_ne!(a, b);
        assert_eq!(a, a_again);
    }
}
