//! Loss values and parameter gradients for one joint batch.
//!
//! The encoder objective is the weighted joint loss plus, when view
//! invariance is on, `lambda_adv` times the adversarial loss against a frozen
//! discriminator. Its gradient never touches discriminator parameters. The
//! discriminator objective is the view cross-entropy on fixed embeddings and
//! only produces discriminator gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss_with_grad, ce_loss_with_grad, consistency_mse_with_grad,
    discriminator_loss_with_grad, entropy_loss_with_grad, info_nce_with_grad, joint_loss,
    nl_loss_with_grad, variance_loss_with_grad, AdversarialMode, LossBreakdown, LossTerms,
    LossWeights, VarianceMode,
};
use crate::model::{GradientBundle, ModelParams, Trace};
use crate::numeric::{sharpen_vjp, softmax_vjp};
use crate::sampler::{JointBatch, NegativeRef};
use crate::types::Hyperparams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectiveModes {
    pub variance: VarianceMode,
    pub adversarial: AdversarialMode,
}

#[derive(Debug, Clone)]
pub struct EncoderObjective {
    pub breakdown: LossBreakdown,
    /// `joint + lambda_adv * adv` when the adversarial term is active.
    pub value: f64,
    pub grads: GradientBundle,
}

fn axpy(acc: &mut [f64], g: &[f64], c: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += c * b;
    }
}

fn check(term: &str, gs: &[Vec<f64>]) -> Result<()> {
    if gs.iter().all(|g| g.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{term} gradient")))
    }
}

fn forward_all<'a>(
    params: &ModelParams,
    xs: impl Iterator<Item = &'a [f64]>,
    hyper: &Hyperparams,
) -> Result<Vec<Trace>> {
    xs.map(|x| params.forward_traced(x, hyper)).collect()
}

struct Traces {
    labeled: Vec<Trace>,
    unlabeled: Vec<Trace>,
    augmented: Vec<Trace>,
}

impl Traces {
    fn new(params: &ModelParams, batch: &JointBatch, hyper: &Hyperparams) -> Result<Self> {
        Ok(Self {
            labeled: forward_all(
                params,
                batch.labeled.iter().map(|l| l.features.as_slice()),
                hyper,
            )?,
            unlabeled: forward_all(
                params,
                batch.unlabeled.iter().map(|u| u.features.as_slice()),
                hyper,
            )?,
            augmented: forward_all(
                params,
                batch.unlabeled_augmented.iter().map(Vec::as_slice),
                hyper,
            )?,
        })
    }
}

/// Whether the adversarial term contributes to the encoder update.
pub fn adversarial_active(
    params: &ModelParams,
    weights: &LossWeights,
    modes: &ObjectiveModes,
) -> bool {
    modes.adversarial != AdversarialMode::Off && weights.lambda_adv > 0.0 && params.spec().views > 1
}

/// Evaluates the encoder objective and its gradient.
pub fn encoder_objective(
    params: &ModelParams,
    batch: &JointBatch,
    weights: &LossWeights,
    hyper: &Hyperparams,
    modes: &ObjectiveModes,
) -> Result<EncoderObjective> {
    weights.validate()?;
    let spec = *params.spec();
    let (l, u) = (spec.labeled_classes, spec.unlabeled_classes);
    let c = spec.num_classes();
    let e = params.arch.embed_dim;
    let tr = Traces::new(params, batch, hyper)?;
    let (nl_, nu) = (tr.labeled.len(), tr.unlabeled.len());

    let mut dy_lab = vec![vec![0.0; c]; nl_];
    let mut dz_lab = vec![vec![0.0; e]; nl_];
    let mut dy_unl = vec![vec![0.0; c]; nu];
    let mut dt_unl = vec![vec![0.0; u]; nu];
    let mut dz_unl = vec![vec![0.0; e]; nu];
    let mut dz_aug = vec![vec![0.0; e]; nu];
    let mut terms = LossTerms::default();

    let y_lab: Vec<Vec<f64>> = tr.labeled.iter().map(|t| t.output.y_hat.clone()).collect();
    let y_unl: Vec<Vec<f64>> = tr
        .unlabeled
        .iter()
        .map(|t| t.output.y_hat.clone())
        .collect();
    let t_unl: Vec<Vec<f64>> = tr
        .unlabeled
        .iter()
        .map(|t| t.output.y_tilde.clone())
        .collect();
    let z_lab: Vec<&[f64]> = tr.labeled.iter().map(|t| t.z()).collect();
    let z_unl: Vec<&[f64]> = tr.unlabeled.iter().map(|t| t.z()).collect();
    let z_aug: Vec<&[f64]> = tr.augmented.iter().map(|t| t.z()).collect();

    let targets: Vec<usize> = batch.labeled.iter().map(|x| x.target).collect();
    let (v, g) = ce_loss_with_grad(&y_lab, &targets, l)?;
    terms.ce = v;
    if weights.lambda_ce != 0.0 {
        check("ce", &g)?;
        for (acc, gi) in dy_lab.iter_mut().zip(&g) {
            axpy(acc, gi, weights.lambda_ce);
        }
    }

    let (v, g) = nl_loss_with_grad(&y_unl, l);
    terms.nl = v;
    if weights.lambda_nl != 0.0 {
        check("nl", &g)?;
        for (acc, gi) in dy_unl.iter_mut().zip(&g) {
            axpy(acc, gi, weights.lambda_nl);
        }
    }

    let (v, g) = entropy_loss_with_grad(&y_unl);
    terms.entropy = v;
    if weights.lambda_h != 0.0 {
        check("entropy", &g)?;
        for (acc, gi) in dy_unl.iter_mut().zip(&g) {
            axpy(acc, gi, weights.lambda_h);
        }
    }

    let (v, g) = variance_loss_with_grad(&t_unl, u, modes.variance)?;
    terms.var = v;
    if weights.lambda_var != 0.0 {
        check("var", &g)?;
        for (acc, gi) in dt_unl.iter_mut().zip(&g) {
            axpy(acc, gi, weights.lambda_var);
        }
    }

    let [w_cat, w_inst, w_mse] = weights.cl_parts.map(|p| p * weights.lambda_cl);

    let n_cat = batch.contrast_category.len();
    if n_cat > 0 {
        let scale = 1.0 / n_cat as f64;
        let mut total = 0.0;
        for t in &batch.contrast_category {
            let negs: Vec<&[f64]> = t
                .negatives
                .iter()
                .map(|n| match *n {
                    NegativeRef::Labeled(i) => z_lab[i],
                    NegativeRef::Unlabeled(i) => z_unl[i],
                })
                .collect();
            let (v, g) = info_nce_with_grad(z_lab[t.query], z_lab[t.positive], &negs, hyper.tau)?;
            total += v;
            if w_cat != 0.0 {
                let c = w_cat * scale;
                axpy(&mut dz_lab[t.query], &g.query, c);
                axpy(&mut dz_lab[t.positive], &g.positive, c);
                for (n, gn) in t.negatives.iter().zip(&g.negatives) {
                    match *n {
                        NegativeRef::Labeled(i) => axpy(&mut dz_lab[i], gn, c),
                        NegativeRef::Unlabeled(i) => axpy(&mut dz_unl[i], gn, c),
                    }
                }
            }
        }
        terms.cl_category = total * scale;
    }

    let n_inst = batch.contrast_instance.len();
    if n_inst > 0 {
        let scale = 1.0 / n_inst as f64;
        let mut total = 0.0;
        for q in &batch.contrast_instance {
            let negs: Vec<&[f64]> = q.negatives.iter().map(|&i| z_lab[i]).collect();
            let (v, g) = info_nce_with_grad(z_unl[q.query], z_aug[q.query], &negs, hyper.tau)?;
            total += v;
            if w_inst != 0.0 {
                let c = w_inst * scale;
                axpy(&mut dz_unl[q.query], &g.query, c);
                axpy(&mut dz_aug[q.query], &g.positive, c);
                for (&i, gn) in q.negatives.iter().zip(&g.negatives) {
                    axpy(&mut dz_lab[i], gn, c);
                }
            }
        }
        terms.cl_instance = total * scale;
    }

    let zu: Vec<Vec<f64>> = z_unl.iter().map(|z| z.to_vec()).collect();
    let za: Vec<Vec<f64>> = z_aug.iter().map(|z| z.to_vec()).collect();
    let (v, ga, gb) = consistency_mse_with_grad(&zu, &za)?;
    terms.mse = v;
    if w_mse != 0.0 {
        check("mse", &ga)?;
        check("mse", &gb)?;
        for (acc, gi) in dz_unl.iter_mut().zip(&ga) {
            axpy(acc, gi, w_mse);
        }
        for (acc, gi) in dz_aug.iter_mut().zip(&gb) {
            axpy(acc, gi, w_mse);
        }
    }
    check("cl", &dz_lab)?;
    check("cl", &dz_unl)?;
    check("cl", &dz_aug)?;

    let adversarial = adversarial_active(params, weights, modes);
    if spec.views > 1 {
        let views: Vec<usize> = batch
            .labeled
            .iter()
            .map(|x| x.view)
            .chain(batch.unlabeled.iter().map(|x| x.view))
            .collect();
        let disc: Vec<_> = z_lab
            .iter()
            .chain(&z_unl)
            .map(|z| params.forward_discriminator_traced(z))
            .collect();
        let probs: Vec<Vec<f64>> = disc.iter().map(|d| d.probs.clone()).collect();
        terms.disc = discriminator_loss_with_grad(&probs, &views)?.0;
        let mode = if modes.adversarial == AdversarialMode::Off {
            AdversarialMode::Uniform
        } else {
            modes.adversarial
        };
        let (v, g) = adversarial_loss_with_grad(&probs, mode);
        terms.adv = v;
        if adversarial {
            check("adv", &g)?;
            for (i, (d, gi)) in disc.iter().zip(&g).enumerate() {
                let scaled: Vec<f64> = gi.iter().map(|x| x * weights.lambda_adv).collect();
                let dz = params.backprop_discriminator(d, &scaled, None, true);
                if i < nl_ {
                    axpy(&mut dz_lab[i], &dz, 1.0);
                } else {
                    axpy(&mut dz_unl[i - nl_], &dz, 1.0);
                }
            }
        }
    }

    let mut grads = GradientBundle::zeros_like(params);
    for ((t, dy), dz) in tr.labeled.iter().zip(&dy_lab).zip(&dz_lab) {
        let dl = softmax_vjp(&t.output.y_hat, dy);
        params.backprop(t, &dl, Some(dz), &mut grads);
    }
    for (((t, dy), dt), dz) in tr.unlabeled.iter().zip(&dy_unl).zip(&dt_unl).zip(&dz_unl) {
        let mut dy = dy.clone();
        if dt.iter().any(|&x| x != 0.0) {
            let ds = sharpen_vjp(
                &t.output.y_hat[l..],
                &t.output.y_tilde,
                dt,
                hyper.sr,
                hyper.sharpen_mode,
            );
            axpy(&mut dy[l..], &ds, 1.0);
        }
        let dl = softmax_vjp(&t.output.y_hat, &dy);
        params.backprop(t, &dl, Some(dz), &mut grads);
    }
    let zero_logits = vec![0.0; c];
    for (t, dz) in tr.augmented.iter().zip(&dz_aug) {
        if dz.iter().any(|&x| x != 0.0) {
            params.backprop(t, &zero_logits, Some(dz), &mut grads);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("joint gradient".into()));
    }

    let breakdown = joint_loss(&terms, weights)?;
    let value = if adversarial {
        breakdown.joint + weights.lambda_adv * breakdown.adv
    } else {
        breakdown.joint
    };
    Ok(EncoderObjective {
        breakdown,
        value,
        grads,
    })
}

/// Embeddings and view ids of the labeled then unlabeled batch members.
pub fn batch_embeddings(
    params: &ModelParams,
    batch: &JointBatch,
    hyper: &Hyperparams,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut zs = Vec::with_capacity(batch.labeled.len() + batch.unlabeled.len());
    let mut views = Vec::with_capacity(zs.capacity());
    for (x, v) in batch
        .labeled
        .iter()
        .map(|l| (&l.features, l.view))
        .chain(batch.unlabeled.iter().map(|u| (&u.features, u.view)))
    {
        zs.push(params.forward(x, hyper)?.z);
        views.push(v);
    }
    Ok((zs, views))
}

/// View cross-entropy of the discriminator on fixed embeddings and its
/// gradient with respect to discriminator parameters only.
pub fn discriminator_objective(
    params: &ModelParams,
    zs: &[Vec<f64>],
    views: &[usize],
) -> Result<(f64, GradientBundle)> {
    let traces: Vec<_> = zs
        .iter()
        .map(|z| params.forward_discriminator_traced(z))
        .collect();
    let probs: Vec<Vec<f64>> = traces.iter().map(|t| t.probs.clone()).collect();
    let (loss, g) = discriminator_loss_with_grad(&probs, views)?;
    check("disc", &g)?;
    let mut grads = GradientBundle::zeros_like(params);
    for (t, gi) in traces.iter().zip(&g) {
        params.backprop_discriminator(t, gi, Some(&mut grads), false);
    }
    Ok((loss, grads))
}

/// ReLU on/off pattern of every unit touched by the batch. Finite
/// differences are only meaningful between points with equal patterns.
pub fn relu_signature(
    params: &ModelParams,
    batch: &JointBatch,
    hyper: &Hyperparams,
) -> Result<Vec<bool>> {
    let tr = Traces::new(params, batch, hyper)?;
    let mut out = Vec::new();
    for t in tr.labeled.iter().chain(&tr.unlabeled).chain(&tr.augmented) {
        t.relu_pattern(&mut out);
    }
    if params.spec().views > 1 {
        for t in tr.labeled.iter().chain(&tr.unlabeled) {
            params
                .forward_discriminator_traced(t.z())
                .relu_pattern(&mut out);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{schedule_weights, LossToggles};
    use crate::model::{Architecture, ParamGroup};
    use crate::sampler::{Sampler, SamplerConfig};
    use crate::synthdata::{generate, GeneratorConfig};
    use crate::types::DatasetSpec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize) -> (ModelParams, JointBatch, Hyperparams) {
        let spec = DatasetSpec::new(3, 2, k, 6);
        let d = generate(&GeneratorConfig::new(spec, 20, 3.0), 1).unwrap();
        let hyper = Hyperparams {
            n_negatives: 3,
            ..Hyperparams::default()
        };
        let config = SamplerConfig {
            labeled_batch: Some(8),
            ..SamplerConfig::default()
        };
        let s = Sampler::new(&spec, &d.train, &hyper, &config).unwrap();
        let batch = s.make_joint_batch(&mut ChaCha8Rng::seed_from_u64(4));
        let params = ModelParams::init(&Architecture::new(spec, vec![8], 5), 2).unwrap();
        (params, batch, hyper)
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let (p, b, h) = setup(2);
        let out = encoder_objective(
            &p,
            &b,
            &LossWeights::zeros(),
            &h,
            &ObjectiveModes::default(),
        )
        .unwrap();
        assert_eq!(out.breakdown.joint, 0.0);
        assert!(out.grads.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn joint_gradient_is_sum_of_term_gradients() {
        let (p, b, h) = setup(3);
        let modes = ObjectiveModes {
            adversarial: AdversarialMode::Uniform,
            ..ObjectiveModes::default()
        };
        let mut full = schedule_weights(2);
        full.lambda_adv = 0.7;
        let total = encoder_objective(&p, &b, &full, &h, &modes).unwrap();
        let mut sum = GradientBundle::zeros_like(&p);
        let mut value = 0.0;
        let singles = [
            LossWeights {
                lambda_ce: full.lambda_ce,
                ..LossWeights::zeros()
            },
            LossWeights {
                lambda_nl: full.lambda_nl,
                ..LossWeights::zeros()
            },
            LossWeights {
                lambda_h: full.lambda_h,
                ..LossWeights::zeros()
            },
            LossWeights {
                lambda_var: full.lambda_var,
                ..LossWeights::zeros()
            },
            LossWeights {
                lambda_cl: full.lambda_cl,
                ..LossWeights::zeros()
            },
            LossWeights {
                lambda_adv: full.lambda_adv,
                ..LossWeights::zeros()
            },
        ];
        for w in singles {
            let o = encoder_objective(&p, &b, &w, &h, &modes).unwrap();
            sum.add_scaled(&o.grads, 1.0);
            value += o.value;
        }
        assert_abs_diff_eq!(total.value, value, epsilon = 1e-9);
        for (a, b) in total.grads.to_flat().iter().zip(sum.to_flat()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn parameter_groups_are_disjoint() {
        let (p, b, h) = setup(3);
        let modes = ObjectiveModes {
            adversarial: AdversarialMode::Uniform,
            ..ObjectiveModes::default()
        };
        let mut w = schedule_weights(0).masked(&LossToggles::all());
        w.lambda_adv = 1.0;
        let enc = encoder_objective(&p, &b, &w, &h, &modes).unwrap();
        assert_eq!(enc.grads.sq_norm(ParamGroup::Discriminator), 0.0);
        assert!(enc.grads.sq_norm(ParamGroup::Encoder) > 0.0);
        let (zs, views) = batch_embeddings(&p, &b, &h).unwrap();
        let (_, disc) = discriminator_objective(&p, &zs, &views).unwrap();
        assert_eq!(disc.sq_norm(ParamGroup::Encoder), 0.0);
        assert!(disc.sq_norm(ParamGroup::Discriminator) > 0.0);
    }
}
