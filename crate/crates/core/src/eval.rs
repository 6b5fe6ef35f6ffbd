//! Labeled accuracy, Hungarian-matched clustering accuracy, silhouette
//! coefficient and embedding export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{argmax, l2_normalize};
use crate::synthdata::{csv_header, parse_csv, write_row};
use crate::types::{DatasetSpec, Example, Hyperparams, Status};

/// Minimum-cost perfect matching on a square matrix. Returns `perm` with
/// `perm[row] = column` and the total cost.
pub fn hungarian_assignment(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::shape(
            "assignment cost matrix",
            format!("{n}x{n}"),
            format!("row of length {}", row.len()),
        ));
    }
    if cost.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with row/column potentials; 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    let identity: f64 = (0..n).map(|i| cost[i][i]).sum();
    let scale = cost.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    debug_assert!(total <= identity + 1e-9 * scale * n as f64);
    Ok((perm, total))
}

/// Clustering accuracy over unlabeled ids in `[L, L + U)`. The returned
/// permutation maps predicted head `L + i` to ground-truth id `perm[i]`.
pub fn acc(
    predictions: &[usize],
    truths: &[usize],
    spec: &DatasetSpec,
) -> Result<(f64, Vec<usize>)> {
    if predictions.len() != truths.len() {
        return Err(Error::shape("acc inputs", predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("acc of an empty prediction list"));
    }
    let (l, u) = (spec.labeled_classes, spec.unlabeled_classes);
    let mut counts = vec![vec![0.0; u]; u];
    for (&p, &t) in predictions.iter().zip(truths) {
        for id in [p, t] {
            if !spec.is_unlabeled_class(id) {
                return Err(Error::invalid(format!(
                    "id {id} outside the unlabeled range [{l}, {})",
                    l + u
                )));
            }
        }
        counts[p - l][t - l] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|r| r.iter().map(|c| -c).collect())
        .collect();
    let (perm, total) = hungarian_assignment(&cost)?;
    Ok((
        -total / predictions.len() as f64,
        perm.into_iter().map(|j| j + l).collect(),
    ))
}

/// Top-1 accuracy of labeled-head predictions.
pub fn acr(predictions: &[usize], truths: &[usize], labeled: usize) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::shape("acr inputs", predictions.len(), truths.len()));
    }
    if truths.is_empty() {
        return Err(Error::invalid("acr of an empty list"));
    }
    if let Some(t) = truths.iter().find(|&&t| t >= labeled) {
        return Err(Error::invalid(format!(
            "acr truth {t} is not a labeled class"
        )));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Mean silhouette coefficient with Euclidean distance between L2-normalized
/// embeddings. The cohesion term `a` averages over the whole own class, the
/// point itself included. A point alone in its class scores 0.
pub fn silhouette(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::shape(
            "silhouette inputs",
            embeddings.len(),
            labels.len(),
        ));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two classes"));
    }
    let index = |c: usize| classes.binary_search(&c).expect("label present");
    let units: Vec<Vec<f64>> = embeddings.iter().map(|e| l2_normalize(e)).collect();
    let ids: Vec<usize> = labels.iter().map(|&c| index(c)).collect();
    let mut sizes = vec![0usize; classes.len()];
    for &k in &ids {
        sizes[k] += 1;
    }
    let mut singletons = 0;
    let mut total = 0.0;
    let mut sums = vec![0.0; classes.len()];
    for i in 0..units.len() {
        let own = ids[i];
        if sizes[own] < 2 {
            singletons += 1;
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..units.len() {
            if i != j {
                let d: f64 = units[i]
                    .iter()
                    .zip(&units[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                sums[ids[j]] += d;
            }
        }
        let a = sums[own] / sizes[own] as f64;
        let b = (0..classes.len())
            .filter(|&k| k != own)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    if singletons > 0 {
        log::warn!("{singletons} silhouette point(s) alone in their class scored 0");
    }
    Ok(total / units.len() as f64)
}

/// `(L + U) x (L + U)` counts indexed `[truth][prediction]`.
pub fn confusion(predictions: &[usize], truths: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        m[t][p] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acr: f64,
    pub acc: f64,
    /// Ground-truth unlabeled id for each unlabeled head, in head order.
    pub permutation: Vec<usize>,
    /// Over all evaluated embeddings, with ground-truth classes.
    pub silhouette: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

/// Per-example predictions used by the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Argmax over the labeled heads.
    pub labeled_head: Vec<usize>,
    /// `L +` argmax over the unlabeled heads.
    pub unlabeled_head: Vec<usize>,
    /// Argmax over all heads.
    pub full: Vec<usize>,
    pub embeddings: Vec<Vec<f64>>,
}

pub fn predict(
    params: &ModelParams,
    examples: &[Example],
    hyper: &Hyperparams,
) -> Result<Predictions> {
    let l = params.spec().labeled_classes;
    let mut out = Predictions {
        labeled_head: Vec::with_capacity(examples.len()),
        unlabeled_head: Vec::with_capacity(examples.len()),
        full: Vec::with_capacity(examples.len()),
        embeddings: Vec::with_capacity(examples.len()),
    };
    for ex in examples {
        let f = params.forward(&ex.features, hyper)?;
        out.labeled_head.push(argmax(&f.y_hat[..l]));
        out.unlabeled_head.push(l + argmax(&f.y_hat[l..]));
        out.full.push(argmax(&f.y_hat));
        out.embeddings.push(f.z);
    }
    Ok(out)
}

/// Evaluates labeled examples with ACR, unlabeled ones with ACC, and all of
/// them with the silhouette coefficient and confusion matrix.
pub fn evaluate(
    params: &ModelParams,
    examples: &[Example],
    hyper: &Hyperparams,
) -> Result<EvalReport> {
    let spec = *params.spec();
    for ex in examples {
        ex.validate(&spec)?;
    }
    let pred = predict(params, examples, hyper)?;
    let truths: Vec<usize> = examples.iter().map(Example::ground_truth).collect();
    let (mut lp, mut lt, mut up, mut ut) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, ex) in examples.iter().enumerate() {
        if ex.is_labeled() {
            lp.push(pred.labeled_head[i]);
            lt.push(truths[i]);
        } else {
            up.push(pred.unlabeled_head[i]);
            ut.push(truths[i]);
        }
    }
    let acr = acr(&lp, &lt, spec.labeled_classes)?;
    let (acc, permutation) = acc(&up, &ut, &spec)?;
    Ok(EvalReport {
        acr,
        acc,
        permutation,
        silhouette: silhouette(&pred.embeddings, &truths)?,
        confusion: confusion(&pred.full, &truths, spec.num_classes()),
        n_labeled: lt.len(),
        n_unlabeled: ut.len(),
    })
}

/// Writes `status,label,view,z0..z{d-1}` rows, one per example.
pub fn export_embeddings(
    params: &ModelParams,
    examples: &[Example],
    hyper: &Hyperparams,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut s = csv_header("z", params.arch.embed_dim);
    s.push('\n');
    for ex in examples {
        let z = params.forward(&ex.features, hyper)?.z;
        write_row(&mut s, ex.status, ex.ground_truth(), ex.view, &z);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub status: Status,
    pub label: usize,
    pub view: usize,
    pub z: Vec<f64>,
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>> {
    Ok(parse_csv(path.as_ref(), "z")?
        .into_iter()
        .map(|r| EmbeddingRow {
            status: r.status,
            label: r.label,
            view: r.view,
            z: r.values,
        })
        .collect())
}
