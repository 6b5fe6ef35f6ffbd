//! Domain types shared across the crate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a value's compact JSON form.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes to JSON");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Class and view layout of a dataset.
///
/// Labeled class ids occupy `[0, L)` and unlabeled (novel) class ids occupy
/// `[L, L + U)`, so the two sets are disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub labeled_classes: usize,
    pub unlabeled_classes: usize,
    pub views: usize,
    pub feature_dim: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
}

fn default_seq_len() -> usize {
    1
}

impl DatasetSpec {
    pub fn new(labeled: usize, unlabeled: usize, views: usize, feature_dim: usize) -> Self {
        Self {
            labeled_classes: labeled,
            unlabeled_classes: unlabeled,
            views,
            feature_dim,
            seq_len: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labeled_classes == 0 {
            return Err(Error::invalid("at least one labeled class is required"));
        }
        if self.unlabeled_classes == 0 {
            return Err(Error::invalid("at least one unlabeled class is required"));
        }
        if self.views == 0 {
            return Err(Error::invalid("at least one view is required"));
        }
        if self.feature_dim == 0 || self.seq_len == 0 {
            return Err(Error::invalid("feature_dim and seq_len must be positive"));
        }
        Ok(())
    }

    /// `L + U`, the width of the classification head.
    pub fn num_classes(&self) -> usize {
        self.labeled_classes + self.unlabeled_classes
    }

    /// Length of a flattened feature vector.
    pub fn input_dim(&self) -> usize {
        self.feature_dim * self.seq_len
    }

    pub fn is_labeled_class(&self, class: usize) -> bool {
        class < self.labeled_classes
    }

    pub fn is_unlabeled_class(&self, class: usize) -> bool {
        (self.labeled_classes..self.num_classes()).contains(&class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Labeled,
    Unlabeled,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Labeled => "labeled",
            Status::Unlabeled => "unlabeled",
        }
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Status::Labeled),
            "unlabeled" => Ok(Status::Unlabeled),
            other => Err(Error::invalid(format!("unknown status `{other}`"))),
        }
    }
}

/// One data instance. Features are stored flattened, row-major over
/// `seq_len x feature_dim`.
///
/// For unlabeled examples the class id is the hidden ground truth in
/// `[L, L + U)`; it is reachable only through [`Example::ground_truth`], which
/// is reserved for data generation and evaluation. Training code reads
/// [`Example::training_label`], which hides it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub status: Status,
    pub view: usize,
    label: usize,
}

impl Example {
    pub fn labeled(features: Vec<f64>, label: usize, view: usize) -> Self {
        Self {
            features,
            status: Status::Labeled,
            view,
            label,
        }
    }

    pub fn unlabeled(features: Vec<f64>, hidden_label: usize, view: usize) -> Self {
        Self {
            features,
            status: Status::Unlabeled,
            view,
            label: hidden_label,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.status == Status::Labeled
    }

    /// The class id visible to training losses: `Some` only for labeled examples.
    pub fn training_label(&self) -> Option<usize> {
        match self.status {
            Status::Labeled => Some(self.label),
            Status::Unlabeled => None,
        }
    }

    /// The true class id, including the hidden id of unlabeled examples.
    pub fn ground_truth(&self) -> usize {
        self.label
    }

    /// Checks the example against a dataset layout.
    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        if self.features.len() != spec.input_dim() {
            return Err(Error::shape(
                "example features",
                spec.input_dim(),
                self.features.len(),
            ));
        }
        if self.view >= spec.views {
            return Err(Error::invalid(format!(
                "view {} out of range [0, {})",
                self.view, spec.views
            )));
        }
        let ok = match self.status {
            Status::Labeled => spec.is_labeled_class(self.label),
            Status::Unlabeled => spec.is_unlabeled_class(self.label),
        };
        if !ok {
            return Err(Error::invalid(format!(
                "{} example has class id {} outside its range",
                self.status.as_str(),
                self.label
            )));
        }
        Ok(())
    }
}

/// How the unlabeled slice of a prediction is sharpened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpenMode {
    /// `softmax(log(p) / sr)`: temperature applied to log-probabilities.
    #[default]
    LogDomain,
    /// `softmax(p / sr)`: temperature applied to the probabilities themselves.
    Probability,
}

/// Result of a forward pass for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Embedding `h(f(x))`.
    pub z: Vec<f64>,
    /// Raw head outputs over `L + U` classes.
    pub logits: Vec<f64>,
    /// Softmax of `logits`.
    pub y_hat: Vec<f64>,
    /// Sharpened distribution over the `U` unlabeled heads.
    pub y_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Contrastive temperature.
    pub tau: f64,
    /// Sharpening temperature.
    pub sr: f64,
    pub lambda_h: f64,
    /// Unlabeled examples per joint batch; defaults to `10 * U`.
    pub batch_size_unlabeled: Option<usize>,
    /// Negatives per contrastive query.
    pub n_negatives: usize,
    pub sharpen_mode: SharpenMode,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            sr: 0.1,
            lambda_h: 1.0,
            batch_size_unlabeled: None,
            n_negatives: 8,
            sharpen_mode: SharpenMode::LogDomain,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn unlabeled_batch(&self, spec: &DatasetSpec) -> usize {
        self.batch_size_unlabeled
            .unwrap_or(10 * spec.unlabeled_classes)
    }

    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.sr > 0.0 && self.sr.is_finite()) {
            return Err(Error::invalid(format!(
                "sr must be positive, got {}",
                self.sr
            )));
        }
        if !(self.lambda_h >= 0.0) {
            return Err(Error::invalid("lambda_h must be nonnegative"));
        }
        if self.unlabeled_batch(spec) < spec.unlabeled_classes {
            return Err(Error::invalid(format!(
                "batch_size_unlabeled {} is smaller than U = {}",
                self.unlabeled_batch(spec),
                spec.unlabeled_classes
            )));
        }
        if self.n_negatives == 0 {
            return Err(Error::invalid("n_negatives must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ranges_are_disjoint() {
        let spec = DatasetSpec::new(6, 4, 1, 16);
        for c in 0..spec.num_classes() {
            assert_ne!(spec.is_labeled_class(c), spec.is_unlabeled_class(c));
        }
        assert!(!spec.is_unlabeled_class(10));
    }

    #[test]
    fn unlabeled_label_is_hidden_from_training() {
        let ex = Example::unlabeled(vec![0.0; 2], 7, 0);
        assert_eq!(ex.training_label(), None);
        assert_eq!(ex.ground_truth(), 7);
        assert_eq!(
            Example::labeled(vec![0.0; 2], 1, 0).training_label(),
            Some(1)
        );
    }

    #[test]
    fn example_validation() {
        let spec = DatasetSpec::new(2, 2, 2, 3);
        assert!(Example::labeled(vec![0.0; 3], 1, 1).validate(&spec).is_ok());
        assert!(Example::labeled(vec![0.0; 3], 2, 1)
            .validate(&spec)
            .is_err());
        assert!(Example::unlabeled(vec![0.0; 3], 1, 1)
            .validate(&spec)
            .is_err());
        assert!(Example::unlabeled(vec![0.0; 2], 3, 1)
            .validate(&spec)
            .is_err());
        assert!(Example::unlabeled(vec![0.0; 3], 3, 2)
            .validate(&spec)
            .is_err());
    }

    #[test]
    fn default_batch_is_ten_times_u() {
        let spec = DatasetSpec::new(6, 4, 1, 16);
        assert_eq!(Hyperparams::default().unlabeled_batch(&spec), 40);
        let bad = Hyperparams {
            batch_size_unlabeled: Some(3),
            ..Default::default()
        };
        assert!(bad.validate(&spec).is_err());
    }
}
