//! Seeded synthetic multi-view datasets with known latent classes.
//!
//! Each class `c` has a canonical centroid `mu_c`; a sample seen from view `v`
//! is `T_v(mu_c + eps)` with `eps ~ N(0, sigma^2 I)` and `T_v(x) = Q_v x + b_v`
//! for an orthogonal `Q_v`. View 0 is the identity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DatasetSpec, Example, Status};

/// Which views populate the training split of each status. `None` keeps all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewAssignment {
    pub labeled_views: Option<Vec<usize>>,
    pub unlabeled_views: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub spec: DatasetSpec,
    pub n_per_class: usize,
    /// Centroid scale in units of the within-class standard deviation. Class
    /// centroids sit on scaled orthonormal axes, so pairwise distances are
    /// `sqrt(2) * separation * sigma`.
    pub class_separation: f64,
    #[serde(default = "one")]
    pub noise_std: f64,
    /// Rotation angle (radians) between consecutive views.
    #[serde(default = "default_view_angle")]
    pub view_angle: f64,
    /// Norm of each non-reference view's translation, in units of sigma.
    #[serde(default = "default_view_shift")]
    pub view_shift: f64,
    #[serde(default)]
    pub view_assignment: ViewAssignment,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn one() -> f64 {
    1.0
}
fn default_view_angle() -> f64 {
    std::f64::consts::FRAC_PI_4
}
fn default_view_shift() -> f64 {
    2.0
}
fn default_holdout() -> f64 {
    0.2
}

impl GeneratorConfig {
    pub fn new(spec: DatasetSpec, n_per_class: usize, class_separation: f64) -> Self {
        Self {
            spec,
            n_per_class,
            class_separation,
            noise_std: 1.0,
            view_angle: default_view_angle(),
            view_shift: default_view_shift(),
            view_assignment: ViewAssignment::default(),
            holdout_fraction: default_holdout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be positive"));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class_separation must be nonnegative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout_fraction must lie in [0, 1)"));
        }
        if self.n_per_class < self.spec.views {
            return Err(Error::invalid(format!(
                "n_per_class {} cannot populate all {} views",
                self.n_per_class, self.spec.views
            )));
        }
        if self.class_separation > 0.0 && self.spec.feature_dim < self.spec.num_classes() {
            return Err(Error::Infeasible(format!(
                "placing {} separated centroids requires feature_dim >= {}, got {}",
                self.spec.num_classes(),
                self.spec.num_classes(),
                self.spec.feature_dim
            )));
        }
        let k = self.spec.views;
        for views in [
            &self.view_assignment.labeled_views,
            &self.view_assignment.unlabeled_views,
        ]
        .into_iter()
        .flatten()
        {
            if views.is_empty() || views.iter().any(|&v| v >= k) {
                return Err(Error::invalid(format!(
                    "view assignment {views:?} must be a non-empty subset of [0, {k})"
                )));
            }
        }
        Ok(())
    }
}

/// An affine view map `x -> Q x + b` with orthogonal `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTransform {
    pub rotation: DMatrix<f64>,
    pub shift: Vec<f64>,
}

impl ViewTransform {
    fn identity(d: usize) -> Self {
        Self {
            rotation: DMatrix::identity(d, d),
            shift: vec![0.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.rotation * nalgebra::DVector::from_column_slice(x);
        v.iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = y.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        let v = self.rotation.transpose() * nalgebra::DVector::from_column_slice(&centered);
        v.iter().copied().collect()
    }
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    m.qr().q()
}

/// Class centroids and view transforms drawn from a seed.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub views: Vec<ViewTransform>,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.spec.feature_dim;
        let scale = config.class_separation * config.noise_std;
        let basis = random_orthogonal(d, &mut rng);
        let centroids = (0..config.spec.num_classes())
            .map(|c| {
                if scale == 0.0 {
                    vec![0.0; d]
                } else {
                    basis.column(c).iter().map(|x| x * scale).collect()
                }
            })
            .collect();
        let mut views = vec![ViewTransform::identity(d)];
        if config.spec.views > 1 {
            let frame = random_orthogonal(d, &mut rng);
            for v in 1..config.spec.views {
                let angle = config.view_angle * v as f64;
                let (s, c) = angle.sin_cos();
                let mut planar = DMatrix::identity(d, d);
                for p in (0..d.saturating_sub(1)).step_by(2) {
                    planar[(p, p)] = c;
                    planar[(p, p + 1)] = -s;
                    planar[(p + 1, p)] = s;
                    planar[(p + 1, p + 1)] = c;
                }
                let rotation = &frame * planar * frame.transpose();
                let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = crate::numeric::norm(&dir).max(1e-12);
                let shift = dir
                    .iter()
                    .map(|x| x / n * config.view_shift * config.noise_std)
                    .collect();
                views.push(ViewTransform { rotation, shift });
            }
        }
        Ok(Self {
            config,
            seed,
            centroids,
            views,
            rng,
        })
    }

    /// One flattened sample of `class` seen from `view`.
    pub fn sample(&mut self, class: usize, view: usize) -> Vec<f64> {
        let spec = self.config.spec;
        let mut out = Vec::with_capacity(spec.input_dim());
        for _ in 0..spec.seq_len {
            let mut latent = self.centroids[class].clone();
            for x in &mut latent {
                let eps: f64 = StandardNormal.sample(&mut self.rng);
                *x += self.config.noise_std * eps;
            }
            out.extend(self.views[view].apply(&latent));
        }
        out
    }

    /// Nearest-centroid accuracy using the true per-view centroids.
    pub fn oracle_accuracy(&self, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 1.0;
        }
        let d = self.config.spec.feature_dim;
        let projected: Vec<Vec<Vec<f64>>> = self
            .views
            .iter()
            .map(|t| self.centroids.iter().map(|m| t.apply(m)).collect())
            .collect();
        let correct = examples
            .iter()
            .filter(|ex| {
                let cents = &projected[ex.view];
                let dist = |c: &Vec<f64>| -> f64 {
                    ex.features
                        .chunks_exact(d)
                        .map(|frame| {
                            frame
                                .iter()
                                .zip(c)
                                .map(|(a, b)| (a - b).powi(2))
                                .sum::<f64>()
                        })
                        .sum()
                };
                let best = (0..cents.len())
                    .min_by(|&a, &b| dist(&cents[a]).total_cmp(&dist(&cents[b])))
                    .unwrap_or(0);
                best == ex.ground_truth()
            })
            .count();
        correct as f64 / examples.len() as f64
    }

    pub fn generate(mut self) -> Result<Dataset> {
        let spec = self.config.spec;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for class in 0..spec.num_classes() {
            for view in 0..spec.views {
                let n_cell = self.config.n_per_class / spec.views
                    + usize::from(view < self.config.n_per_class % spec.views);
                let n_test = (n_cell as f64 * self.config.holdout_fraction).round() as usize;
                for i in 0..n_cell {
                    let features = self.sample(class, view);
                    let ex = if spec.is_labeled_class(class) {
                        Example::labeled(features, class, view)
                    } else {
                        Example::unlabeled(features, class, view)
                    };
                    if i < n_test {
                        test.push(ex);
                    } else {
                        train.push(ex);
                    }
                }
            }
        }
        let oracle = self.oracle_accuracy(&test);
        let mut dataset = Dataset {
            spec,
            train,
            test,
            provenance: Provenance {
                generator: Some(self.config.clone()),
                seed: self.seed,
                oracle_accuracy: Some(oracle),
                hidden: BTreeMap::new(),
                run_config_hash: None,
            },
        };
        let assignment = self.config.view_assignment.clone();
        for (status, views) in [
            (Status::Labeled, assignment.labeled_views),
            (Status::Unlabeled, assignment.unlabeled_views),
        ] {
            if let Some(keep) = views {
                let hidden: Vec<usize> = (0..spec.views).filter(|v| !keep.contains(v)).collect();
                dataset = obfuscate_views(&dataset, status, &hidden)?;
            }
        }
        Ok(dataset)
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Option<GeneratorConfig>,
    pub seed: u64,
    /// Nearest-centroid accuracy on the test split at generation time.
    pub oracle_accuracy: Option<f64>,
    /// Views removed from the training split, keyed by status.
    #[serde(default)]
    pub hidden: BTreeMap<String, Vec<usize>>,
    /// Content hash of the run config that produced the dataset, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub provenance: Provenance,
}

pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    Generator::new(config.clone(), seed)?.generate()
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for ex in self.train.iter().chain(&self.test) {
            ex.validate(&self.spec)?;
        }
        Ok(())
    }

    pub fn labeled_train(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().filter(|e| e.is_labeled())
    }

    pub fn unlabeled_train(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().filter(|e| !e.is_labeled())
    }
}

/// Removes training examples of one status whose view is hidden. The test
/// split is untouched.
pub fn obfuscate_views(
    dataset: &Dataset,
    split: Status,
    hidden_views: &[usize],
) -> Result<Dataset> {
    if let Some(&v) = hidden_views.iter().find(|&&v| v >= dataset.spec.views) {
        return Err(Error::invalid(format!(
            "hidden view {v} out of range [0, {})",
            dataset.spec.views
        )));
    }
    let keep = |ex: &Example| ex.status != split || !hidden_views.contains(&ex.view);
    let train: Vec<Example> = dataset.train.iter().filter(|e| keep(e)).cloned().collect();
    for class in 0..dataset.spec.num_classes() {
        let before = dataset.train.iter().any(|e| e.ground_truth() == class);
        let after = train.iter().any(|e| e.ground_truth() == class);
        if before && !after {
            return Err(Error::invalid(format!(
                "hiding views {hidden_views:?} of the {} split removes every training example of class {class}",
                split.as_str()
            )));
        }
    }
    let mut provenance = dataset.provenance.clone();
    if !hidden_views.is_empty() {
        let entry = provenance
            .hidden
            .entry(split.as_str().to_string())
            .or_default();
        entry.extend_from_slice(hidden_views);
        entry.sort_unstable();
        entry.dedup();
    }
    Ok(Dataset {
        spec: dataset.spec,
        train,
        test: dataset.test.clone(),
        provenance,
    })
}

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Serialize, Deserialize)]
struct ProvenanceFile {
    spec: DatasetSpec,
    provenance: Provenance,
}

/// CSV header: `status,label,view,f0..f{d-1}`.
pub fn csv_header(prefix: &str, width: usize) -> String {
    let mut s = String::from("status,label,view");
    for i in 0..width {
        let _ = write!(s, ",{prefix}{i}");
    }
    s
}

/// Writes one CSV row with 17 significant digits per value.
pub(crate) fn write_row(
    out: &mut String,
    status: Status,
    label: usize,
    view: usize,
    values: &[f64],
) {
    let _ = write!(out, "{},{},{}", status.as_str(), label, view);
    for v in values {
        let _ = write!(out, ",{v:.16e}");
    }
    out.push('\n');
}

pub(crate) struct CsvRow {
    pub status: Status,
    pub label: usize,
    pub view: usize,
    pub values: Vec<f64>,
}

/// Parses a CSV written by [`write_row`] under [`csv_header`].
pub(crate) fn parse_csv(path: &Path, prefix: &str) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[..3] != ["status", "label", "view"] {
        return Err(err(1, "header must start with status,label,view".into()));
    }
    let width = columns.len() - 3;
    if header != csv_header(prefix, width) {
        return Err(err(
            1,
            format!("header must be {}", csv_header(prefix, width)),
        ));
    }
    if !text.ends_with('\n') {
        return Err(err(
            text.split('\n').count(),
            "truncated file: last line is not terminated".into(),
        ));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width + 3 {
            return Err(err(
                n,
                format!("expected {} columns, found {}", width + 3, cells.len()),
            ));
        }
        let status: Status = cells[0].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let int = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|e| err(n, format!("bad {what} `{s}`: {e}")))
        };
        let values = cells[3..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|e| err(n, format!("bad value `{c}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CsvRow {
            status,
            label: int(cells[1], "label")?,
            view: int(cells[2], "view")?,
            values,
        });
    }
    Ok(rows)
}

fn write_examples(path: &Path, examples: &[Example], width: usize) -> Result<()> {
    let mut s = csv_header("f", width);
    s.push('\n');
    for ex in examples {
        write_row(&mut s, ex.status, ex.ground_truth(), ex.view, &ex.features);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes `train.csv`, `test.csv` and `provenance.json` into `dir`.
pub fn save(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = dataset.spec.input_dim();
    write_examples(&dir.join(TRAIN_FILE), &dataset.train, width)?;
    write_examples(&dir.join(TEST_FILE), &dataset.test, width)?;
    let meta = ProvenanceFile {
        spec: dataset.spec,
        provenance: dataset.provenance.clone(),
    };
    let path = dir.join(PROVENANCE_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("provenance serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(PROVENANCE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ProvenanceFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let read = |name: &str| -> Result<Vec<Example>> {
        let path = dir.join(name);
        let rows = parse_csv(&path, "f")?;
        rows.into_iter()
            .enumerate()
            .map(|(i, r)| {
                let ex = match r.status {
                    Status::Labeled => Example::labeled(r.values, r.label, r.view),
                    Status::Unlabeled => Example::unlabeled(r.values, r.label, r.view),
                };
                ex.validate(&meta.spec).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 2,
                    message: e.to_string(),
                })?;
                Ok(ex)
            })
            .collect()
    };
    Ok(Dataset {
        spec: meta.spec,
        train: read(TRAIN_FILE)?,
        test: read(TEST_FILE)?,
        provenance: meta.provenance,
    })
}

/// Random datasets for round-trip tests: arbitrary values, not class-structured.
#[doc(hidden)]
pub fn random_dataset(rng: &mut impl Rng, spec: DatasetSpec, n: usize) -> Dataset {
    let make = |rng: &mut dyn rand::RngCore| {
        let class = rng.random_range(0..spec.num_classes());
        let view = rng.random_range(0..spec.views);
        let features: Vec<f64> = (0..spec.input_dim())
            .map(|_| {
                let m: f64 = rng.random_range(-1.0..1.0);
                m * 10f64.powi(rng.random_range(-20..20))
            })
            .collect();
        if spec.is_labeled_class(class) {
            Example::labeled(features, class, view)
        } else {
            Example::unlabeled(features, class, view)
        }
    };
    let train = (0..n).map(|_| make(rng)).collect();
    let test = (0..n / 2).map(|_| make(rng)).collect();
    Dataset {
        spec,
        train,
        test,
        provenance: Provenance {
            generator: None,
            seed: 0,
            oracle_accuracy: None,
            hidden: BTreeMap::new(),
            run_config_hash: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(l: usize, u: usize, k: usize, d: usize, sep: f64) -> GeneratorConfig {
        GeneratorConfig::new(DatasetSpec::new(l, u, k, d), 60, sep)
    }

    #[test]
    fn deterministic_per_seed() {
        let c = config(3, 2, 2, 8, 4.0);
        assert_eq!(generate(&c, 5).unwrap(), generate(&c, 5).unwrap());
        assert_ne!(
            generate(&c, 5).unwrap().train,
            generate(&c, 6).unwrap().train
        );
    }

    #[test]
    fn unlabeled_classes_are_balanced_and_ranges_disjoint() {
        let d = generate(&config(3, 4, 3, 10, 4.0), 1).unwrap();
        d.validate().unwrap();
        let mut counts = BTreeMap::new();
        for ex in d.unlabeled_train() {
            *counts.entry(ex.ground_truth()).or_insert(0) += 1;
            assert!(ex.ground_truth() >= 3);
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == counts[&3]));
        for ex in d.labeled_train() {
            assert!(ex.ground_truth() < 3);
        }
    }

    #[test]
    fn infeasible_dimension_names_minimum() {
        let err = generate(&config(6, 4, 1, 8, 6.0), 0).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        assert!(err.to_string().contains("feature_dim >= 10"), "{err}");
        // Without separation the dimension does not matter.
        assert!(generate(&config(6, 4, 1, 8, 0.0), 0).is_ok());
    }

    #[test]
    fn centroids_are_separated() {
        let g = Generator::new(config(6, 4, 1, 16, 6.0), 3).unwrap();
        for a in 0..10 {
            for b in 0..a {
                let d: f64 = g.centroids[a]
                    .iter()
                    .zip(&g.centroids[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 6.0);
            }
        }
    }

    #[test]
    fn separable_oracle_is_near_perfect() {
        let mut c = config(6, 4, 1, 16, 6.0);
        c.n_per_class = 500;
        let d = generate(&c, 2).unwrap();
        assert!(d.provenance.oracle_accuracy.unwrap() >= 0.999);
    }

    #[test]
    fn single_view_has_identity_transform() {
        let g = Generator::new(config(2, 2, 1, 4, 3.0), 0).unwrap();
        assert_eq!(g.views.len(), 1);
        assert_eq!(g.views[0], ViewTransform::identity(4));
    }

    #[test]
    fn views_are_invertible_transforms_of_one_class() {
        let mut g = Generator::new(config(2, 2, 3, 6, 3.0), 9).unwrap();
        for class in 0..4 {
            let mut means = vec![vec![0.0; 6]; 3];
            let n = 20_000;
            for (v, mean) in means.iter_mut().enumerate() {
                for _ in 0..n {
                    let x = g.sample(class, v);
                    for (m, y) in mean.iter_mut().zip(g.views[v].invert(&x)) {
                        *m += y / n as f64;
                    }
                }
            }
            for u in 0..3 {
                for v in 0..u {
                    let d: f64 = means[u]
                        .iter()
                        .zip(&means[v])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(
                        d <= 0.1 * g.config.noise_std,
                        "class {class} views {u},{v}: {d}"
                    );
                }
            }
        }
    }

    #[test]
    fn obfuscation() {
        let d = generate(&config(3, 3, 3, 8, 4.0), 4).unwrap();
        assert_eq!(
            obfuscate_views(&d, Status::Unlabeled, &[]).unwrap().train,
            d.train
        );
        let hidden = obfuscate_views(&d, Status::Unlabeled, &[2]).unwrap();
        assert!(hidden.unlabeled_train().all(|e| e.view != 2));
        assert_eq!(hidden.test, d.test);
        assert_eq!(hidden.labeled_train().count(), d.labeled_train().count());
        let l1 = obfuscate_views(&d, Status::Labeled, &[0, 2]).unwrap();
        assert_eq!(l1.labeled_train().count(), d.labeled_train().count() / 3);
        assert!(obfuscate_views(&d, Status::Labeled, &[0, 1, 2]).is_err());
        assert!(obfuscate_views(&d, Status::Labeled, &[3]).is_err());
    }

    #[test]
    fn view_assignment_applies_at_generation() {
        let mut c = config(3, 3, 3, 8, 4.0);
        c.view_assignment.unlabeled_views = Some(vec![1]);
        let d = generate(&c, 4).unwrap();
        assert!(d.unlabeled_train().all(|e| e.view == 1));
        assert!(d.test.iter().any(|e| !e.is_labeled() && e.view == 0));
        assert_eq!(d.provenance.hidden["unlabeled"], vec![0, 2]);
    }

    #[test]
    fn save_load_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(2, 2, 2, 4, 3.0);
        c.spec.seq_len = 3;
        let d = generate(&c, 1).unwrap();
        save(&d, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), d);
        let header = std::fs::read_to_string(dir.path().join(TRAIN_FILE)).unwrap();
        assert!(header.starts_with("status,label,view,f0,f1,"));
        assert!(header.lines().next().unwrap().ends_with(",f11"));

        let text = std::fs::read_to_string(dir.path().join(TEST_FILE)).unwrap();
        let cut = &text[..text.len() - 20];
        std::fs::write(dir.path().join(TEST_FILE), cut).unwrap();
        let err = load(dir.path()).unwrap_err();
        let lines = cut.split('\n').count();
        assert!(
            err.to_string().contains(&format!("test.csv:{lines}:")),
            "{err}"
        );
    }
}
