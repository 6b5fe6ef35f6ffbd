//! Scalar training losses, the adaptive weight schedule, and their weighted
//! combination.
//!
//! Every loss comes in a `*_with_grad` form returning the value together with
//! its gradient with respect to the loss inputs (probabilities or
//! embeddings). The model module chains these into parameter gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    clamped_ln, clamped_ln_grad, dot, l2_normalize, l2_normalize_vjp, norm, NORM_EPS,
};
use crate::types::Status;

/// Gradient of a batch loss: one vector per batch element.
pub type BatchGrad = Vec<Vec<f64>>;

fn mean_scale(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

/// Cross-entropy on the labeled slice: mean of `-log y_hat[target]`.
pub fn ce_loss_with_grad(
    y_hat: &[Vec<f64>],
    targets: &[usize],
    labeled: usize,
) -> Result<(f64, BatchGrad)> {
    if y_hat.len() != targets.len() {
        return Err(Error::shape("ce batch", y_hat.len(), targets.len()));
    }
    let s = mean_scale(y_hat.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(y_hat.len());
    for (p, &t) in y_hat.iter().zip(targets) {
        if t >= labeled {
            return Err(Error::invalid(format!(
                "cross-entropy target {t} is not a labeled class (L = {labeled})"
            )));
        }
        loss -= clamped_ln(p[t]);
        let mut g = vec![0.0; p.len()];
        g[t] = -s * clamped_ln_grad(p[t]);
        grads.push(g);
    }
    Ok((loss * s, grads))
}

pub fn ce_loss(y_hat: &[Vec<f64>], targets: &[usize], labeled: usize) -> Result<f64> {
    Ok(ce_loss_with_grad(y_hat, targets, labeled)?.0)
}

/// Negative learning over complementary labels: every labeled class is a
/// complementary label of an unlabeled instance, so the loss is the mean of
/// `-sum_{j<L} log(1 - y_hat[j])`.
pub fn nl_loss_with_grad(y_hat: &[Vec<f64>], labeled: usize) -> (f64, BatchGrad) {
    let s = mean_scale(y_hat.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(y_hat.len());
    for p in y_hat {
        let mut g = vec![0.0; p.len()];
        for j in 0..labeled {
            let q = 1.0 - p[j];
            loss -= clamped_ln(q);
            g[j] = s * clamped_ln_grad(q);
        }
        grads.push(g);
    }
    (loss * s, grads)
}

pub fn nl_loss(y_hat: &[Vec<f64>], labeled: usize) -> f64 {
    nl_loss_with_grad(y_hat, labeled).0
}

/// Mean Shannon entropy of the full prediction.
pub fn entropy_loss_with_grad(y_hat: &[Vec<f64>]) -> (f64, BatchGrad) {
    let s = mean_scale(y_hat.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(y_hat.len());
    for p in y_hat {
        let mut g = Vec::with_capacity(p.len());
        for &x in p {
            loss -= x * clamped_ln(x);
            // d(-x ln x)/dx = -(ln x + 1), with the clamp's derivative folded in.
            g.push(-s * (clamped_ln(x) + x * clamped_ln_grad(x)));
        }
        grads.push(g);
    }
    (loss * s, grads)
}

pub fn entropy_loss(y_hat: &[Vec<f64>]) -> f64 {
    entropy_loss_with_grad(y_hat).0
}

/// A contrastive negative, tagged with the split it was drawn from.
#[derive(Debug, Clone, Copy)]
pub struct Negative<'a> {
    pub z: &'a [f64],
    pub status: Status,
}

/// Gradients of one InfoNCE term.
#[derive(Debug, Clone)]
pub struct InfoNceGrad {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

struct Unit {
    u: Vec<f64>,
    n: f64,
}

impl Unit {
    fn of(v: &[f64]) -> Self {
        Self {
            u: l2_normalize(v),
            n: norm(v),
        }
    }

    /// `d cos(a, b) / da` given unit vectors, where `s = <u_a, u_b>`.
    fn dcos(&self, other: &Unit, s: f64) -> Vec<f64> {
        if self.n <= NORM_EPS {
            return vec![0.0; self.u.len()];
        }
        self.u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| (b - s * a) / self.n)
            .collect()
    }
}

/// InfoNCE with cosine similarities:
/// `-log(e^{s_qp/tau} / (e^{s_qp/tau} + sum_n e^{s_qn/tau}))`.
///
/// Zero vectors are treated as having cosine 0 with everything; the public
/// wrappers reject them up front.
pub fn info_nce_with_grad(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<(f64, InfoNceGrad)> {
    if negatives.is_empty() {
        return Err(Error::invalid(
            "contrastive loss needs at least one negative",
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let q = Unit::of(query);
    let p = Unit::of(positive);
    let negs: Vec<Unit> = negatives.iter().map(|n| Unit::of(n)).collect();
    let s_p = dot(&q.u, &p.u);
    let s_n: Vec<f64> = negs.iter().map(|n| dot(&q.u, &n.u)).collect();

    let logits: Vec<f64> = std::iter::once(s_p)
        .chain(s_n.iter().copied())
        .map(|s| s / tau)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[0];
    // dL/dlogit_k = softmax_k - [k == 0]; dL/ds_k = that / tau.
    let w: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(k, l)| ((l - lse).exp() - if k == 0 { 1.0 } else { 0.0 }) / tau)
        .collect();

    let mut g_query = vec![0.0; query.len()];
    let add = |acc: &mut Vec<f64>, v: Vec<f64>, c: f64| {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += c * b;
        }
    };
    add(&mut g_query, q.dcos(&p, s_p), w[0]);
    let g_positive: Vec<f64> = p.dcos(&q, s_p).into_iter().map(|x| x * w[0]).collect();
    let mut g_negatives = Vec::with_capacity(negs.len());
    for (k, n) in negs.iter().enumerate() {
        add(&mut g_query, q.dcos(n, s_n[k]), w[k + 1]);
        g_negatives.push(
            n.dcos(&q, s_n[k])
                .into_iter()
                .map(|x| x * w[k + 1])
                .collect(),
        );
    }
    Ok((
        loss,
        InfoNceGrad {
            query: g_query,
            positive: g_positive,
            negatives: g_negatives,
        },
    ))
}

fn require_nonzero(vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        if norm(v) <= NORM_EPS {
            return Err(Error::invalid("contrastive embeddings must be nonzero"));
        }
    }
    Ok(())
}

/// Category contrast: query and positive share a labeled class; negatives come
/// from other labeled classes or from the unlabeled split.
pub fn category_contrastive(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<f64> {
    require_nonzero(&[query, positive])?;
    require_nonzero(negatives)?;
    Ok(info_nce_with_grad(query, positive, negatives, tau)?.0)
}

/// Instance contrast for an unlabeled query against its augmented view.
/// Negatives must all be labeled.
pub fn instance_contrastive(
    query: &[f64],
    augmented: &[f64],
    negatives: &[Negative<'_>],
    tau: f64,
) -> Result<f64> {
    if let Some(bad) = negatives.iter().position(|n| n.status != Status::Labeled) {
        return Err(Error::invalid(format!(
            "instance-contrast negative {bad} is unlabeled; negatives must come from the labeled split"
        )));
    }
    let zs: Vec<&[f64]> = negatives.iter().map(|n| n.z).collect();
    require_nonzero(&[query, augmented])?;
    require_nonzero(&zs)?;
    Ok(info_nce_with_grad(query, augmented, &zs, tau)?.0)
}

/// Mean squared distance between L2-normalized embedding pairs.
pub fn consistency_mse_with_grad(
    z: &[Vec<f64>],
    z_prime: &[Vec<f64>],
) -> Result<(f64, BatchGrad, BatchGrad)> {
    if z.len() != z_prime.len() {
        return Err(Error::shape("consistency batch", z.len(), z_prime.len()));
    }
    let s = mean_scale(z.len());
    let mut loss = 0.0;
    let (mut ga, mut gb) = (Vec::with_capacity(z.len()), Vec::with_capacity(z.len()));
    for (a, b) in z.iter().zip(z_prime) {
        let (ua, ub) = (l2_normalize(a), l2_normalize(b));
        let diff: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x - y).collect();
        loss += dot(&diff, &diff);
        let d: Vec<f64> = diff.iter().map(|x| 2.0 * s * x).collect();
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        ga.push(l2_normalize_vjp(a, &ua, &d));
        gb.push(l2_normalize_vjp(b, &ub, &neg));
    }
    Ok((loss * s, ga, gb))
}

pub fn consistency_mse(z: &[Vec<f64>], z_prime: &[Vec<f64>]) -> Result<f64> {
    Ok(consistency_mse_with_grad(z, z_prime)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Variance of each unlabeled head across the batch.
    #[default]
    Batchwise,
    /// Variance across the `U` components of each instance.
    Componentwise,
}

/// Variance of a fair `k`-face die indicator, `(k - 1) / k^2`.
pub fn fair_die_variance(k: usize) -> f64 {
    let k = k as f64;
    (k - 1.0) / (k * k)
}

/// Squared deviation of the sharpened-prediction variance from the fair-die
/// variance. Variances are population variances (denominator `n`).
pub fn variance_loss_with_grad(
    y_tilde: &[Vec<f64>],
    unlabeled: usize,
    mode: VarianceMode,
) -> Result<(f64, BatchGrad)> {
    if unlabeled == 0 {
        return Err(Error::invalid("variance loss needs U >= 1"));
    }
    if let Some(bad) = y_tilde.iter().find(|p| p.len() != unlabeled) {
        return Err(Error::shape("sharpened prediction", unlabeled, bad.len()));
    }
    let target = fair_die_variance(unlabeled);
    let n = y_tilde.len();
    match mode {
        VarianceMode::Batchwise => {
            if n < unlabeled {
                return Err(Error::invalid(format!(
                    "batchwise variance needs at least U = {unlabeled} instances, got {n}"
                )));
            }
            let mut grads = vec![vec![0.0; unlabeled]; n];
            let mut loss = 0.0;
            for j in 0..unlabeled {
                let mean = y_tilde.iter().map(|p| p[j]).sum::<f64>() / n as f64;
                let var = y_tilde.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
                let dev = var - target;
                loss += dev * dev;
                // d var / d p_ij = 2 (p_ij - mean) / n; the mean's own
                // dependence cancels because deviations sum to zero.
                let c = 2.0 * dev / unlabeled as f64 * 2.0 / n as f64;
                for (g, p) in grads.iter_mut().zip(y_tilde) {
                    g[j] = c * (p[j] - mean);
                }
            }
            Ok((loss / unlabeled as f64, grads))
        }
        VarianceMode::Componentwise => {
            let s = mean_scale(n);
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(n);
            for p in y_tilde {
                let mean = p.iter().sum::<f64>() / unlabeled as f64;
                let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / unlabeled as f64;
                let dev = var - target;
                loss += dev * dev;
                let c = s * 2.0 * dev * 2.0 / unlabeled as f64;
                grads.push(p.iter().map(|x| c * (x - mean)).collect());
            }
            Ok((loss * s, grads))
        }
    }
}

pub fn variance_loss(y_tilde: &[Vec<f64>], unlabeled: usize, mode: VarianceMode) -> Result<f64> {
    Ok(variance_loss_with_grad(y_tilde, unlabeled, mode)?.0)
}

/// Cross-entropy of the discriminator against the true view.
pub fn discriminator_loss_with_grad(
    probs: &[Vec<f64>],
    views: &[usize],
) -> Result<(f64, BatchGrad)> {
    if probs.len() != views.len() {
        return Err(Error::shape(
            "discriminator batch",
            probs.len(),
            views.len(),
        ));
    }
    let s = mean_scale(probs.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, &v) in probs.iter().zip(views) {
        if v >= p.len() {
            return Err(Error::invalid(format!(
                "view id {v} out of range [0, {})",
                p.len()
            )));
        }
        loss -= clamped_ln(p[v]);
        let mut g = vec![0.0; p.len()];
        g[v] = -s * clamped_ln_grad(p[v]);
        grads.push(g);
    }
    Ok((loss * s, grads))
}

pub fn discriminator_loss(probs: &[Vec<f64>], views: &[usize]) -> Result<f64> {
    Ok(discriminator_loss_with_grad(probs, views)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// No view-invariance term.
    #[default]
    Off,
    /// Every instance is pushed toward view 0.
    Literal,
    /// Cross-entropy against the uniform view distribution.
    Uniform,
}

/// Encoder-side adversarial loss against a frozen discriminator.
pub fn adversarial_loss_with_grad(probs: &[Vec<f64>], mode: AdversarialMode) -> (f64, BatchGrad) {
    let s = mean_scale(probs.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for p in probs {
        let mut g = vec![0.0; p.len()];
        match mode {
            AdversarialMode::Off => {}
            AdversarialMode::Literal => {
                loss -= clamped_ln(p[0]);
                g[0] = -s * clamped_ln_grad(p[0]);
            }
            AdversarialMode::Uniform => {
                let k = p.len() as f64;
                for (gv, &pv) in g.iter_mut().zip(p) {
                    loss -= clamped_ln(pv) / k;
                    *gv = -s * clamped_ln_grad(pv) / k;
                }
            }
        }
        grads.push(g);
    }
    (loss * s, grads)
}

pub fn adversarial_loss(probs: &[Vec<f64>], mode: AdversarialMode) -> f64 {
    adversarial_loss_with_grad(probs, mode).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    Adaptive,
    Fixed,
}

/// Loss weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ce: f64,
    pub lambda_cl: f64,
    pub lambda_nl: f64,
    pub lambda_h: f64,
    pub lambda_var: f64,
    pub lambda_adv: f64,
    /// Sub-weights of category contrast, instance contrast and consistency
    /// inside the `lambda_cl` group.
    pub cl_parts: [f64; 3],
    pub n_ep: usize,
    pub schedule_mode: ScheduleMode,
}

impl LossWeights {
    pub fn zeros() -> Self {
        Self {
            lambda_ce: 0.0,
            lambda_cl: 0.0,
            lambda_nl: 0.0,
            lambda_h: 0.0,
            lambda_var: 0.0,
            lambda_adv: 0.0,
            cl_parts: [1.0; 3],
            n_ep: 0,
            schedule_mode: ScheduleMode::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_ce", self.lambda_ce),
            ("lambda_cl", self.lambda_cl),
            ("lambda_nl", self.lambda_nl),
            ("lambda_h", self.lambda_h),
            ("lambda_var", self.lambda_var),
            ("lambda_adv", self.lambda_adv),
            ("cl_parts[0]", self.cl_parts[0]),
            ("cl_parts[1]", self.cl_parts[1]),
            ("cl_parts[2]", self.cl_parts[2]),
        ];
        for (name, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a nonnegative finite weight, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Zeroes the weights of disabled terms.
    pub fn masked(mut self, toggles: &LossToggles) -> Self {
        if !toggles.ce {
            self.lambda_ce = 0.0;
        }
        if !toggles.cl {
            self.lambda_cl = 0.0;
        }
        if !toggles.nl {
            self.lambda_nl = 0.0;
        }
        if !toggles.entropy {
            self.lambda_h = 0.0;
        }
        if !toggles.var {
            self.lambda_var = 0.0;
        }
        self
    }
}

/// Per-term enable flags for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossToggles {
    pub ce: bool,
    pub cl: bool,
    pub nl: bool,
    pub entropy: bool,
    pub var: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl LossToggles {
    pub fn all() -> Self {
        Self {
            ce: true,
            cl: true,
            nl: true,
            entropy: true,
            var: true,
        }
    }

    pub fn supervised_only() -> Self {
        Self {
            ce: true,
            cl: false,
            nl: false,
            entropy: false,
            var: false,
        }
    }

    /// Keeps cross-entropy and contrastive terms and enables exactly the
    /// listed clustering terms (`nl`, `var`, `H`).
    pub fn with_clustering_terms(terms: &[&str]) -> Result<Self> {
        let mut t = Self {
            ce: true,
            cl: true,
            nl: false,
            entropy: false,
            var: false,
        };
        for term in terms {
            match term.trim() {
                "nl" => t.nl = true,
                "var" => t.var = true,
                "H" | "h" | "entropy" => t.entropy = true,
                other => return Err(Error::invalid(format!("unknown loss term `{other}`"))),
            }
        }
        Ok(t)
    }
}

/// Adaptive weights as a function of completed epochs:
/// `lambda_cl = lambda_nl = lambda_var = 0.2 + 0.5 n_ep`,
/// `lambda_ce = max(0, 1 - 0.01 n_ep) + 0.5`, `lambda_H = 1`.
pub fn schedule_weights(n_ep: usize) -> LossWeights {
    schedule_weights_capped(n_ep, None)
}

/// [`schedule_weights`] with the growing weights optionally capped.
pub fn schedule_weights_capped(n_ep: usize, lambda_max: Option<f64>) -> LossWeights {
    let e = n_ep as f64;
    let mut grow = 0.2 + 0.5 * e;
    if let Some(cap) = lambda_max {
        grow = grow.min(cap);
    }
    LossWeights {
        lambda_ce: (1.0 - 0.01 * e).max(0.0) + 0.5,
        lambda_cl: grow,
        lambda_nl: grow,
        lambda_h: 1.0,
        lambda_var: grow,
        lambda_adv: 0.0,
        cl_parts: [1.0; 3],
        n_ep,
        schedule_mode: ScheduleMode::Adaptive,
    }
}

/// Unweighted per-term values on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub nl: f64,
    pub entropy: f64,
    pub cl_category: f64,
    pub cl_instance: f64,
    pub mse: f64,
    pub var: f64,
    pub disc: f64,
    pub adv: f64,
}

/// Per-term values plus the weighted joint objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub nl: f64,
    pub entropy: f64,
    pub cl_category: f64,
    pub cl_instance: f64,
    pub mse: f64,
    pub var: f64,
    pub disc: f64,
    pub adv: f64,
    /// Weighted sum of the non-adversarial terms.
    pub joint: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 10] {
        [
            ("ce", self.ce),
            ("nl", self.nl),
            ("entropy", self.entropy),
            ("cl_category", self.cl_category),
            ("cl_instance", self.cl_instance),
            ("mse", self.mse),
            ("var", self.var),
            ("disc", self.disc),
            ("adv", self.adv),
            ("joint", self.joint),
        ]
    }

    /// Name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Combines per-term values into the joint objective. Adversarial terms are
/// carried through but not summed into `joint`; they belong to the
/// alternating updates.
pub fn joint_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let mut joint = 0.0;
    let mut add = |w: f64, v: f64| {
        if w != 0.0 {
            joint += w * v;
        }
    };
    add(weights.lambda_ce, terms.ce);
    if weights.lambda_cl != 0.0 {
        let [a, b, c] = weights.cl_parts;
        let mut cl = 0.0;
        for (w, v) in [
            (a, terms.cl_category),
            (b, terms.cl_instance),
            (c, terms.mse),
        ] {
            if w != 0.0 {
                cl += w * v;
            }
        }
        add(weights.lambda_cl, cl);
    }
    add(weights.lambda_nl, terms.nl);
    add(weights.lambda_h, terms.entropy);
    add(weights.lambda_var, terms.var);
    Ok(LossBreakdown {
        ce: terms.ce,
        nl: terms.nl,
        entropy: terms.entropy,
        cl_category: terms.cl_category,
        cl_instance: terms.cl_instance,
        mse: terms.mse,
        var: terms.var,
        disc: terms.disc,
        adv: terms.adv,
        joint,
    })
}
