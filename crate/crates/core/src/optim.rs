//! First-order optimizers restricted to one parameter group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientBundle, ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        match *self {
            OptimizerConfig::Adam {
                beta1, beta2, eps, ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::invalid("adam needs betas in [0, 1) and eps > 0"));
                }
            }
            OptimizerConfig::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid("sgd momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer state for one parameter group. Moment vectors span all
/// parameters; entries outside the group stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub group: ParamGroup,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, group: ParamGroup, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        let n = params.num_params();
        Ok(Self {
            config,
            group,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientBundle) {
        let g = grads.to_flat();
        let groups = params.groups_flat();
        self.t += 1;
        let mut flat = params.to_flat();
        match self.config {
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powf(self.t as f64);
                let c2 = 1.0 - beta2.powf(self.t as f64);
                for i in 0..flat.len() {
                    if groups[i] != self.group {
                        continue;
                    }
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    flat[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            OptimizerConfig::Sgd { lr, momentum } => {
                for i in 0..flat.len() {
                    if groups[i] != self.group {
                        continue;
                    }
                    self.m[i] = momentum * self.m[i] + g[i];
                    flat[i] -= lr * self.m[i];
                }
            }
        }
        params.set_flat(&flat);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::types::DatasetSpec;

    fn params() -> ModelParams {
        ModelParams::init(
            &Architecture::new(DatasetSpec::new(2, 2, 2, 3), vec![4], 3),
            0,
        )
        .unwrap()
    }

    #[test]
    fn only_the_group_moves() {
        let mut p = params();
        let before = p.to_flat();
        let mut g = GradientBundle::zeros_like(&p);
        g.0.set_flat(&vec![1.0; p.num_params()]);
        let mut opt =
            Optimizer::new(OptimizerConfig::default(), ParamGroup::Discriminator, &p).unwrap();
        opt.step(&mut p, &g);
        for ((a, b), grp) in before.iter().zip(p.to_flat()).zip(p.groups_flat()) {
            match grp {
                ParamGroup::Encoder => assert_eq!(*a, b),
                ParamGroup::Discriminator => assert!((a - b - 1e-3).abs() < 1e-9),
            }
        }
    }

    #[test]
    fn sgd_step_and_validation() {
        let mut p = params();
        let before = p.to_flat();
        let mut g = GradientBundle::zeros_like(&p);
        g.0.set_flat(&vec![2.0; p.num_params()]);
        let cfg = OptimizerConfig::Sgd {
            lr: 0.1,
            momentum: 0.5,
        };
        let mut opt = Optimizer::new(cfg, ParamGroup::Encoder, &p).unwrap();
        opt.step(&mut p, &g);
        opt.step(&mut p, &g);
        let (a, b) = (before[0], p.to_flat()[0]);
        assert!((a - b - (0.2 + 0.3)).abs() < 1e-12);
        assert!(Optimizer::new(
            OptimizerConfig::Sgd {
                lr: 0.0,
                momentum: 0.0
            },
            ParamGroup::Encoder,
            &p
        )
        .is_err());
    }
}
