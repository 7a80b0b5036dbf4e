//! Decoupled-weight-decay Adam over a [`ParamStore`], with global-norm
//! gradient clipping.

use candle_core::backprop::GradStore;
use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_eps() -> f64 {
    1e-6
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Whether a parameter is exempt from weight decay: gains, biases, the
/// temperature, token/positional tables.
pub fn exempt_from_decay(name: &str, rank: usize) -> bool {
    rank <= 1
        || name.ends_with("pos")
        || name.ends_with("token_embedding")
        || name.ends_with("log_sigma")
        || name.ends_with("mask_token")
}

/// Two AdamW groups (decayed and exempt) sharing one learning rate.
#[derive(Debug)]
pub struct GroupedAdamW {
    decayed: AdamW,
    exempt: AdamW,
    vars: Vec<Var>,
}

impl GroupedAdamW {
    pub fn new(vars: Vec<(String, Var)>, lr: f64, weight_decay: f64, cfg: &OptimizerConfig) -> Result<Self> {
        let mut decayed = Vec::new();
        let mut exempt = Vec::new();
        let mut all = Vec::new();
        for (name, var) in vars {
            all.push(var.clone());
            if exempt_from_decay(&name, var.rank()) {
                exempt.push(var);
            } else {
                decayed.push(var);
            }
        }
        let params = |wd: f64| ParamsAdamW {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: wd,
        };
        Ok(Self {
            decayed: AdamW::new(decayed, params(weight_decay))?,
            exempt: AdamW::new(exempt, params(0.0))?,
            vars: all,
        })
    }

    pub fn from_store(store: &ParamStore, prefix: &str, lr: f64, weight_decay: f64, cfg: &OptimizerConfig) -> Result<Self> {
        Self::new(store.vars_with_prefix(prefix), lr, weight_decay, cfg)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.decayed.set_learning_rate(lr);
        self.exempt.set_learning_rate(lr);
    }

    pub fn learning_rate(&self) -> f64 {
        self.decayed.learning_rate()
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.decayed.step(grads)?;
        self.exempt.step(grads)?;
        Ok(())
    }
}

/// Global L2 norm of the gradients of `vars` (missing gradients count as zero).
pub fn grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut sq = 0.0;
    for var in vars {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    Ok(sq.sqrt())
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(grads, vars)?;
    if !norm.is_finite() {
        return Err(Error::numerical(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for var in vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                let scaled = (g * scale)?;
                grads.insert(var.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}
