//! Scene corpora: the JSONL corpus format, synthetic generation, and the
//! deterministic synthesis of detector soft labels and visual features.
//!
//! Object features and soft labels are not stored in corpus files by
//! default; they are re-synthesized on load from the header seed, and
//! union-box edge features are always computed on demand. A converter for
//! real datasets only has to produce the same JSONL shape (optionally with
//! explicit `feature`/`soft_label` fields, which take precedence).

mod generate;
mod jsonl;
mod synth;

pub use generate::generate_corpus;
pub use jsonl::{read_corpus, write_corpus};
pub use synth::{detector_soft_labels, soft_label_from_noise, FeatureSynth};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CORPUS_FORMAT: &str = "ilac-corpus/1";

/// One annotated object: class label, box in normalized image coordinates,
/// and (optionally materialized) visual feature / detector soft label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneObject {
    pub label: usize,
    pub bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub soft_label: Option<Vec<f64>>,
}

/// An annotated relation triple. Predicate class 0 is reserved for the
/// background "no relation" class and never appears in annotations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
pub struct Relation {
    pub subj: usize,
    pub obj: usize,
    pub pred: usize,
}

/// One annotated image.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneInstance {
    pub id: String,
    #[serde(default)]
    pub context_id: Option<usize>,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

impl SceneInstance {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    /// Check the structural invariants: boxes ordered and in [0,1], soft
    /// labels normalized, relations between distinct objects with a
    /// non-background predicate.
    pub fn validate(&self) -> Result<()> {
        for (i, obj) in self.objects.iter().enumerate() {
            let [x1, y1, x2, y2] = obj.bbox;
            if !(x1 < x2 && y1 < y2) || [x1, y1, x2, y2].iter().any(|&v| !(0.0..=1.0).contains(&v))
            {
                return Err(Error::Input(format!(
                    "scene {}: object {i} has invalid bbox {:?}",
                    self.id, obj.bbox
                )));
            }
            if let Some(sl) = &obj.soft_label {
                let sum: f64 = sl.iter().sum();
                if sl.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!(
                        "scene {}: object {i} soft label is not a distribution (sum {sum})",
                        self.id
                    )));
                }
            }
        }
        for r in &self.relations {
            if r.subj == r.obj {
                return Err(Error::Input(format!(
                    "scene {}: relation with subj == obj ({})",
                    self.id, r.subj
                )));
            }
            if r.subj >= self.objects.len() || r.obj >= self.objects.len() {
                return Err(Error::Input(format!(
                    "scene {}: relation references object out of range",
                    self.id
                )));
            }
            if r.pred == 0 {
                return Err(Error::Input(format!(
                    "scene {}: background predicate (0) in annotation",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic corpus generator.
///
/// `context_strength` (γ) interpolates object labels between uniform over
/// all classes (0) and the latent context's own class subset (1);
/// `detector_noise` (τ) scales the simulated detector's confidence, larger
/// meaning weaker.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenSpec {
    pub n_contexts: usize,
    pub n_obj_classes: usize,
    pub n_pred_classes: usize,
    pub scenes: usize,
    pub objects_per_scene: (usize, usize),
    pub relations_per_scene: (usize, usize),
    pub context_strength: f64,
    pub detector_noise: f64,
    pub feat_dim: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_contexts < 1
            || self.n_obj_classes < 1
            || self.n_pred_classes < 1
            || self.scenes < 1
            || self.feat_dim < 1
        {
            return Err(Error::Spec("all counts must be at least 1".into()));
        }
        if self.n_obj_classes < self.n_contexts {
            return Err(Error::Spec(format!(
                "need at least as many object classes ({}) as contexts ({})",
                self.n_obj_classes, self.n_contexts
            )));
        }
        if self.objects_per_scene.0 < 2 || self.objects_per_scene.0 > self.objects_per_scene.1 {
            return Err(Error::Spec(format!(
                "objects_per_scene range {:?} must be ordered and start at 2",
                self.objects_per_scene
            )));
        }
        if self.relations_per_scene.0 > self.relations_per_scene.1 {
            return Err(Error::Spec(format!(
                "relations_per_scene range {:?} must be ordered",
                self.relations_per_scene
            )));
        }
        if !(0.0..=1.0).contains(&self.context_strength) {
            return Err(Error::Spec(format!(
                "context_strength {} outside [0, 1]",
                self.context_strength
            )));
        }
        if self.detector_noise <= 0.0 {
            return Err(Error::Spec(format!(
                "detector_noise {} must be positive",
                self.detector_noise
            )));
        }
        Ok(())
    }
}

/// First line of every corpus file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusHeader {
    pub format: String,
    pub spec: GenSpec,
    pub seed: u64,
}

/// A loaded corpus: header plus scenes, with everything needed to
/// re-synthesize absent features deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub scenes: Vec<SceneInstance>,
}

impl Corpus {
    pub fn new(spec: GenSpec, scenes: Vec<SceneInstance>) -> Self {
        let seed = spec.seed;
        Corpus {
            header: CorpusHeader {
                format: CORPUS_FORMAT.to_string(),
                spec,
                seed,
            },
            scenes,
        }
    }

    pub fn synth(&self) -> FeatureSynth {
        FeatureSynth::from_header(&self.header)
    }

    /// Resolve one scene into the dense inputs the model consumes. Explicit
    /// feature/soft-label fields win; absent ones are synthesized from the
    /// header seed. Union-box edge features are computed for every ordered
    /// pair, indexed by [`pair_index`].
    pub fn encode_scene(&self, scene: &SceneInstance) -> Result<EncodedScene> {
        let synth = self.synth();
        self.encode_scene_with(&synth, scene)
    }

    /// Same as [`Corpus::encode_scene`] with a reusable synthesizer.
    pub fn encode_scene_with(
        &self,
        synth: &FeatureSynth,
        scene: &SceneInstance,
    ) -> Result<EncodedScene> {
        scene.validate()?;
        let n = scene.n_objects();
        if n < 2 {
            return Err(Error::SceneTooSmall {
                id: scene.id.clone(),
                n_objects: n,
            });
        }
        let mut labels = Vec::with_capacity(n);
        let mut soft_labels = Vec::with_capacity(n);
        let mut bboxes = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        for (idx, obj) in scene.objects.iter().enumerate() {
            labels.push(obj.label);
            bboxes.push(obj.bbox);
            let feature = match &obj.feature {
                Some(f) => f.clone(),
                None => synth.feature(&scene.id, idx, obj.label),
            };
            if feature.len() != self.header.spec.feat_dim {
                return Err(Error::Dimension {
                    op: "encode_scene",
                    lhs: vec![feature.len()],
                    rhs: vec![self.header.spec.feat_dim],
                });
            }
            features.push(feature);
            let soft = match &obj.soft_label {
                Some(s) => s.clone(),
                None => synth.soft_label(&scene.id, idx, obj.label),
            };
            if soft.len() != self.header.spec.n_obj_classes {
                return Err(Error::Dimension {
                    op: "encode_scene",
                    lhs: vec![soft.len()],
                    rhs: vec![self.header.spec.n_obj_classes],
                });
            }
            soft_labels.push(soft);
        }

        let mut union_features = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                union_features.push(synth.union_box_feature(&features, &bboxes, i, j)?);
            }
        }

        Ok(EncodedScene {
            id: scene.id.clone(),
            labels,
            soft_labels,
            bboxes,
            features,
            union_features,
            relations: scene.relations.clone(),
        })
    }

    pub fn encode_all(&self) -> Result<Vec<EncodedScene>> {
        let synth = self.synth();
        self.scenes
            .iter()
            .map(|s| self.encode_scene_with(&synth, s))
            .collect()
    }
}

/// Dense per-scene model inputs: everything resolved, nothing optional.
#[derive(Debug, Clone)]
pub struct EncodedScene {
    pub id: String,
    pub labels: Vec<usize>,
    pub soft_labels: Vec<Vec<f64>>,
    pub bboxes: Vec<[f64; 4]>,
    pub features: Vec<Vec<f64>>,
    /// Ordered-pair edge features, indexed by [`pair_index`].
    pub union_features: Vec<Vec<f64>>,
    pub relations: Vec<Relation>,
}

impl EncodedScene {
    pub fn n_objects(&self) -> usize {
        self.labels.len()
    }

    pub fn n_pairs(&self) -> usize {
        let n = self.n_objects();
        n * (n - 1)
    }
}

/// Row of the ordered pair (i, j), i ≠ j, in the canonical enumeration
/// (all pairs sorted by (i, j)).
pub fn pair_index(i: usize, j: usize, n_objects: usize) -> usize {
    debug_assert!(i != j && i < n_objects && j < n_objects);
    i * (n_objects - 1) + if j > i { j - 1 } else { j }
}

/// All ordered pairs (i, j), i ≠ j, in canonical order.
pub fn ordered_pairs(n_objects: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_objects).flat_map(move |i| (0..n_objects).filter(move |&j| j != i).map(move |j| (i, j)))
}
