//! Seeded joint batches of labeled and unlabeled examples with contrastive
//! index structure and augmented copies.
//!
//! The sampler only ever sees label-stripped views of unlabeled examples:
//! [`UnlabeledRef`] has no class field, and pools are built through
//! [`Example::training_label`].

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DatasetSpec, Example, Hyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Labeled examples per batch; defaults to the unlabeled batch size.
    pub labeled_batch: Option<usize>,
    pub augment_strength: f64,
    pub dropout_rate: f64,
    /// Draw category-contrast positives from a different view when one exists.
    pub cross_view_positives: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            labeled_batch: None,
            augment_strength: 0.1,
            dropout_rate: 0.1,
            cross_view_positives: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.augment_strength >= 0.0 && self.augment_strength.is_finite()) {
            return Err(Error::invalid("augment_strength must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        if self.labeled_batch == Some(0) {
            return Err(Error::invalid("labeled_batch must be positive"));
        }
        Ok(())
    }
}

/// A labeled training example as the sampler sees it.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRef<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub view: usize,
}

/// An unlabeled training example with its hidden class removed.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledRef<'a> {
    pub features: &'a [f64],
    pub view: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub features: Vec<f64>,
    pub target: usize,
    pub view: usize,
}

impl LabeledItem {
    pub fn one_hot(&self, labeled: usize) -> Vec<f64> {
        let mut v = vec![0.0; labeled];
        v[self.target] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledItem {
    pub features: Vec<f64>,
    pub view: usize,
}

/// A category-contrast negative: an index into the batch's labeled or
/// unlabeled list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeRef {
    Labeled(usize),
    Unlabeled(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTriple {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<NegativeRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceQuery {
    /// Index into `unlabeled`; its positive is `unlabeled_augmented[query]`.
    pub query: usize,
    /// Indices into `labeled`.
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointBatch {
    pub labeled: Vec<LabeledItem>,
    pub unlabeled: Vec<UnlabeledItem>,
    pub unlabeled_augmented: Vec<Vec<f64>>,
    pub contrast_category: Vec<CategoryTriple>,
    pub contrast_instance: Vec<InstanceQuery>,
}

/// Additive Gaussian jitter with per-coordinate scale `strength * std`,
/// followed by zeroing each coordinate with probability `dropout_rate`.
/// Strength 0 returns the input unchanged.
pub fn augment(
    features: &[f64],
    std: &[f64],
    strength: f64,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    if strength == 0.0 {
        return features.to_vec();
    }
    features
        .iter()
        .zip(std)
        .map(|(&x, &s)| {
            let noise: f64 = StandardNormal.sample(rng);
            let keep = dropout_rate == 0.0 || rng.random::<f64>() >= dropout_rate;
            if keep {
                x + strength * s * noise
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-coordinate population standard deviation.
pub fn feature_std(rows: &[&[f64]]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(*r) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; first.len()];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(*r).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Batch builder over a fixed training set.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    labeled: Vec<LabeledRef<'a>>,
    unlabeled: Vec<UnlabeledRef<'a>>,
    by_class: Vec<Vec<usize>>,
    anchor_classes: Vec<usize>,
    std: Vec<f64>,
    unlabeled_batch: usize,
    labeled_batch: usize,
    n_negatives: usize,
    config: SamplerConfig,
}

impl<'a> Sampler<'a> {
    pub fn new(
        spec: &DatasetSpec,
        train: &'a [Example],
        hyper: &Hyperparams,
        config: &SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        hyper.validate(spec)?;
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for ex in train {
            match ex.training_label() {
                Some(label) => labeled.push(LabeledRef {
                    features: &ex.features,
                    label,
                    view: ex.view,
                }),
                None => unlabeled.push(UnlabeledRef {
                    features: &ex.features,
                    view: ex.view,
                }),
            }
        }
        if labeled.is_empty() || unlabeled.is_empty() {
            return Err(Error::invalid(format!(
                "joint batches need both labeled and unlabeled training data (got {} and {})",
                labeled.len(),
                unlabeled.len()
            )));
        }
        let mut by_class = vec![Vec::new(); spec.labeled_classes];
        for (i, ex) in labeled.iter().enumerate() {
            if ex.label >= spec.labeled_classes {
                return Err(Error::invalid(format!(
                    "labeled example with class {} >= L",
                    ex.label
                )));
            }
            by_class[ex.label].push(i);
        }
        let mut anchor_classes = Vec::new();
        for (c, members) in by_class.iter().enumerate() {
            match members.len() {
                0 => {}
                1 => log::warn!("labeled class {c} has a single example; excluded from category-contrast queries"),
                _ => anchor_classes.push(c),
            }
        }
        let rows: Vec<&[f64]> = labeled
            .iter()
            .map(|e| e.features)
            .chain(unlabeled.iter().map(|e| e.features))
            .collect();
        let unlabeled_batch = hyper.unlabeled_batch(spec);
        Ok(Self {
            std: feature_std(&rows),
            labeled,
            unlabeled,
            by_class,
            anchor_classes,
            unlabeled_batch,
            labeled_batch: config.labeled_batch.unwrap_or(unlabeled_batch),
            n_negatives: hyper.n_negatives,
            config: config.clone(),
        })
    }

    pub fn feature_std(&self) -> &[f64] {
        &self.std
    }

    pub fn anchor_classes(&self) -> &[usize] {
        &self.anchor_classes
    }

    fn pick_positive(&self, members: &[usize], anchor: usize, rng: &mut impl Rng) -> usize {
        let others: Vec<usize> = members.iter().copied().filter(|&i| i != anchor).collect();
        if self.config.cross_view_positives {
            let view = self.labeled[anchor].view;
            let cross: Vec<usize> = others
                .iter()
                .copied()
                .filter(|&i| self.labeled[i].view != view)
                .collect();
            if !cross.is_empty() {
                return cross[rng.random_range(0..cross.len())];
            }
        }
        others[rng.random_range(0..others.len())]
    }

    pub fn make_joint_batch(&self, rng: &mut impl Rng) -> JointBatch {
        let mut labeled = Vec::with_capacity(self.labeled_batch);
        let mut contrast_category = Vec::new();
        let push = |labeled: &mut Vec<LabeledItem>, i: usize| {
            let ex = self.labeled[i];
            labeled.push(LabeledItem {
                features: ex.features.to_vec(),
                target: ex.label,
                view: ex.view,
            });
            labeled.len() - 1
        };
        if !self.anchor_classes.is_empty() {
            for _ in 0..self.labeled_batch / 2 {
                let class = self.anchor_classes[rng.random_range(0..self.anchor_classes.len())];
                let members = &self.by_class[class];
                let anchor = members[rng.random_range(0..members.len())];
                let positive = self.pick_positive(members, anchor, rng);
                let q = push(&mut labeled, anchor);
                let p = push(&mut labeled, positive);
                contrast_category.push(CategoryTriple {
                    query: q,
                    positive: p,
                    negatives: Vec::new(),
                });
            }
        }
        while labeled.len() < self.labeled_batch {
            push(&mut labeled, rng.random_range(0..self.labeled.len()));
        }

        let picks: Vec<usize> = if self.unlabeled.len() >= self.unlabeled_batch {
            index::sample(rng, self.unlabeled.len(), self.unlabeled_batch).into_vec()
        } else {
            (0..self.unlabeled_batch)
                .map(|_| rng.random_range(0..self.unlabeled.len()))
                .collect()
        };
        let unlabeled: Vec<UnlabeledItem> = picks
            .iter()
            .map(|&i| UnlabeledItem {
                features: self.unlabeled[i].features.to_vec(),
                view: self.unlabeled[i].view,
            })
            .collect();
        let unlabeled_augmented = unlabeled
            .iter()
            .map(|u| {
                augment(
                    &u.features,
                    &self.std,
                    self.config.augment_strength,
                    self.config.dropout_rate,
                    rng,
                )
            })
            .collect();

        for triple in &mut contrast_category {
            let class = labeled[triple.query].target;
            let eligible: Vec<NegativeRef> = labeled
                .iter()
                .enumerate()
                .filter(|(_, l)| l.target != class)
                .map(|(i, _)| NegativeRef::Labeled(i))
                .chain((0..unlabeled.len()).map(NegativeRef::Unlabeled))
                .collect();
            triple.negatives = choose(&eligible, self.n_negatives, rng);
        }
        let all_labeled: Vec<usize> = (0..labeled.len()).collect();
        let contrast_instance = (0..unlabeled.len())
            .map(|query| InstanceQuery {
                query,
                negatives: choose(&all_labeled, self.n_negatives, rng),
            })
            .collect();

        JointBatch {
            labeled,
            unlabeled,
            unlabeled_augmented,
            contrast_category,
            contrast_instance,
        }
    }
}

/// Up to `n` distinct entries of `pool`, uniformly at random.
fn choose<T: Copy>(pool: &[T], n: usize, rng: &mut impl Rng) -> Vec<T> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// One-shot convenience wrapper around [`Sampler`].
pub fn make_joint_batch(
    spec: &DatasetSpec,
    train: &[Example],
    hyper: &Hyperparams,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<JointBatch> {
    Ok(Sampler::new(spec, train, hyper, config)?.make_joint_batch(rng))
}
