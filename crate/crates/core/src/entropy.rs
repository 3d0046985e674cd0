//! Empirical entropy study over a corpus: how much knowing one co-occurring
//! object tells you about an object's class (or a relation's predicate).
//! All entropies are in nats.
//!
//! The conditional entropy is computed from one empirical joint built by
//! enumerating, per scene, every (target, conditioning object) pair — the
//! exact expectation of conditioning on a single randomly chosen object,
//! with no sampling variance. The reported marginal is the target marginal
//! of that same joint, so conditioning can never appear to raise entropy.

use crate::data::Corpus;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Objects,
    Predicates,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Category::Objects => write!(f, "Objects"),
            Category::Predicates => write!(f, "Predicates"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyReport {
    pub category: Category,
    pub h_max: f64,
    pub h_marginal: f64,
    pub h_conditional: f64,
    /// Scenes with fewer than two objects, excluded from the joint.
    pub skipped_scenes: usize,
}

/// H = −Σ p·ln p over the nonzero counts. The nonzero counts are summed in
/// sorted order, so relabeling classes cannot change the result even in the
/// last bit.
pub fn empirical_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain {
            op: "empirical_entropy",
            msg: "all counts are zero".into(),
        });
    }
    let mut nonzero: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    nonzero.sort_unstable();
    let total = total as f64;
    Ok(nonzero
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum())
}

struct Joint {
    /// counts[target][conditioner_class]
    counts: Vec<Vec<u64>>,
    skipped_scenes: usize,
}

fn build_joint(corpus: &Corpus, category: Category) -> Result<Joint> {
    if corpus.scenes.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    let n_obj = corpus.header.spec.n_obj_classes;
    let n_targets = match category {
        Category::Objects => n_obj,
        Category::Predicates => corpus.header.spec.n_pred_classes,
    };
    let mut counts = vec![vec![0u64; n_obj]; n_targets];
    let mut skipped = 0usize;

    for scene in &corpus.scenes {
        if scene.n_objects() < 2 {
            skipped += 1;
            continue;
        }
        match category {
            Category::Objects => {
                // Every ordered (target instance, other instance) pair; the
                // conditioner must be a different object instance.
                for (t, target) in scene.objects.iter().enumerate() {
                    for (c, cond) in scene.objects.iter().enumerate() {
                        if t == c {
                            continue;
                        }
                        counts[target.label][cond.label] += 1;
                    }
                }
            }
            Category::Predicates => {
                // Every (relation, scene object) pair; all scene objects
                // may condition, including the relation's own endpoints.
                for r in &scene.relations {
                    for cond in &scene.objects {
                        counts[r.pred - 1][cond.label] += 1;
                    }
                }
            }
        }
    }
    Ok(Joint {
        counts,
        skipped_scenes: skipped,
    })
}

/// H(X | C) = Σ_c p(c)·H(X | C=c) from the empirical joint described at
/// the module level. Scenes with fewer than two objects are skipped (the
/// count is surfaced in [`EntropyReport::skipped_scenes`]).
pub fn conditional_entropy(corpus: &Corpus, category: Category) -> Result<f64> {
    let joint = build_joint(corpus, category)?;
    conditional_from_joint(&joint.counts)
}

fn conditional_from_joint(counts: &[Vec<u64>]) -> Result<f64> {
    let n_cond = counts.first().map(|r| r.len()).unwrap_or(0);
    let total: u64 = counts.iter().map(|row| row.iter().sum::<u64>()).sum();
    if total == 0 {
        return Err(Error::Domain {
            op: "conditional_entropy",
            msg: "no (target, conditioner) pairs in corpus".into(),
        });
    }
    let mut h = 0.0;
    for c in 0..n_cond {
        let column: Vec<u64> = counts.iter().map(|row| row[c]).collect();
        let n_c: u64 = column.iter().sum();
        if n_c == 0 {
            continue;
        }
        let p_c = n_c as f64 / total as f64;
        h += p_c * empirical_entropy(&column)?;
    }
    Ok(h)
}

fn marginal_from_joint(counts: &[Vec<u64>]) -> Result<f64> {
    let sums: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    empirical_entropy(&sums)
}

/// The full study for one category: maximum, marginal and conditional
/// entropy from one joint.
pub fn category_report(corpus: &Corpus, category: Category) -> Result<EntropyReport> {
    let joint = build_joint(corpus, category)?;
    let n_classes = match category {
        Category::Objects => corpus.header.spec.n_obj_classes,
        Category::Predicates => corpus.header.spec.n_pred_classes,
    };
    Ok(EntropyReport {
        category,
        h_max: (n_classes as f64).ln(),
        h_marginal: marginal_from_joint(&joint.counts)?,
        h_conditional: conditional_from_joint(&joint.counts)?,
        skipped_scenes: joint.skipped_scenes,
    })
}

/// Reports for both categories plus a printable table.
pub fn entropy_report(corpus: &Corpus) -> Result<(EntropyReport, EntropyReport)> {
    Ok((
        category_report(corpus, Category::Objects)?,
        category_report(corpus, Category::Predicates)?,
    ))
}

pub fn format_table(objects: &EntropyReport, predicates: &EntropyReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>8} {:>8} {:>10}\n",
        "Category", "H_max", "H(x)", "H(x|c_i)"
    ));
    for r in [objects, predicates] {
        out.push_str(&format!(
            "{:<12} {:>8.2} {:>8.2} {:>10.2}\n",
            r.category.to_string(),
            r.h_max,
            r.h_marginal,
            r.h_conditional
        ));
    }
    out
}
