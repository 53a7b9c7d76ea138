use candle_core::{backprop::GradStore, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use super::config::OptimizerKind;
use crate::error::Result;

/// Heavy-ball momentum: `v = mu * v + g`, `w = w - lr * v`.
pub(crate) struct SgdMomentum {
    vars: Vec<(Var, Tensor)>,
    lr: f64,
    momentum: f64,
}

impl SgdMomentum {
    fn new(vars: Vec<Var>, lr: f64, momentum: f64) -> Result<Self> {
        let vars = vars
            .into_iter()
            .map(|v| {
                let zeros = v.as_tensor().zeros_like()?;
                Ok((v, zeros))
            })
            .collect::<Result<_>>()?;
        Ok(Self { vars, lr, momentum })
    }

    fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (var, velocity) in &mut self.vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                *velocity = ((&*velocity * self.momentum)? + g)?;
                var.set(&var.as_tensor().sub(&(&*velocity * self.lr)?)?)?;
            }
        }
        Ok(())
    }
}

pub(crate) enum HeadOptimizer {
    Adam(AdamW),
    Sgd(SgdMomentum),
    /// Zero learning rate: gradients are computed but nothing moves.
    Frozen,
}

impl HeadOptimizer {
    pub(crate) fn new(kind: OptimizerKind, vars: Vec<Var>, lr: f64) -> Result<Self> {
        if lr == 0.0 {
            return Ok(Self::Frozen);
        }
        Ok(match kind {
            OptimizerKind::Adam => Self::Adam(AdamW::new(
                vars,
                ParamsAdamW {
                    lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-7,
                    weight_decay: 0.0,
                },
            )?),
            OptimizerKind::SgdMomentum { momentum } => Self::Sgd(SgdMomentum::new(vars, lr, momentum)?),
        })
    }

    pub(crate) fn step(&mut self, grads: &GradStore) -> Result<()> {
        match self {
            Self::Adam(opt) => opt.step(grads)?,
            Self::Sgd(opt) => opt.step(grads)?,
            Self::Frozen => {}
        }
        Ok(())
    }
}
