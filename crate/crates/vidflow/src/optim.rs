//! Named parameters and the AdamW optimizer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A named model parameter. Frozen parameters (`trainable == false`) are
/// never modified by the optimizer, bit for bit.
#[derive(Clone)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

impl<E: Element> Param<E> {
    pub fn frozen(name: impl Into<String>, value: Tensor<E>) -> Self {
        Param {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    pub fn trainable(name: impl Into<String>, value: Tensor<E>) -> Self {
        Param {
            name: name.into(),
            value,
            trainable: true,
        }
    }
}

/// First/second moment slots for one parameter.
#[derive(Clone)]
struct Moments<E> {
    m1: Vec<E>,
    m2: Vec<E>,
}

/// AdamW with decoupled weight decay and bias-corrected moments.
///
/// Defaults follow the standard definition: beta1 0.9, beta2 0.999,
/// eps 1e-8. Learning rate and weight decay come from the caller.
pub struct AdamW<E> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: BTreeMap<String, Moments<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment slots as `(param name, m1, m2)` tuples, for training resume.
    pub fn export_slots(&self) -> Vec<(String, Tensor<E>, Tensor<E>)> {
        self.slots
            .iter()
            .map(|(name, m)| {
                (
                    name.clone(),
                    Tensor::from_vec(vec![m.m1.len()], m.m1.clone()).expect("slot shape"),
                    Tensor::from_vec(vec![m.m2.len()], m.m2.clone()).expect("slot shape"),
                )
            })
            .collect()
    }

    /// Restore moment slots and the step counter saved by [`Self::export_slots`].
    pub fn import_slots(&mut self, slots: Vec<(String, Tensor<E>, Tensor<E>)>, step: u64) {
        self.slots = slots
            .into_iter()
            .map(|(name, m1, m2)| {
                (
                    name,
                    Moments {
                        m1: m1.data().to_vec(),
                        m2: m2.data().to_vec(),
                    },
                )
            })
            .collect();
        self.step = step;
    }

    /// One optimizer step over `(param, grad)` pairs.
    ///
    /// Non-trainable params are skipped entirely (their bits never change);
    /// trainable params without a gradient are also left untouched.
    pub fn step(&mut self, items: &mut [(&mut Param<E>, Option<&Tensor<E>>)]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (E::from_f64(self.beta1), E::from_f64(self.beta2));
        let one_m_b1 = E::from_f64(1.0 - self.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.beta2);
        let eps = E::from_f64(self.eps);
        let lr = E::from_f64(self.lr);
        let decay = E::from_f64(self.lr * self.weight_decay);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);

        for (param, grad) in items.iter_mut() {
            if !param.trainable {
                continue;
            }
            let Some(grad) = grad else { continue };
            if grad.shape() != param.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: param.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let n = param.value.numel();
            let slot = self
                .slots
                .entry(param.name.clone())
                .or_insert_with(|| Moments {
                    m1: vec![E::zero(); n],
                    m2: vec![E::zero(); n],
                });
            if slot.m1.len() != n {
                return Err(Error::invalid(
                    "adamw_step",
                    format!(
                        "moment shape {} does not match param '{}' with {} elements",
                        slot.m1.len(),
                        param.name,
                        n
                    ),
                ));
            }
            let mut out = Vec::with_capacity(n);
            for (i, (&v, &g)) in param.value.data().iter().zip(grad.data()).enumerate() {
                let m = b1 * slot.m1[i] + one_m_b1 * g;
                let s = b2 * slot.m2[i] + one_m_b2 * g * g;
                slot.m1[i] = m;
                slot.m2[i] = s;
                let mhat = m * inv_bc1;
                let vhat = s * inv_bc2;
                // decoupled decay applied to the value, not folded into grad
                out.push(v - decay * v - lr * mhat / (vhat.sqrt() + eps));
            }
            param.value = Tensor::from_vec(param.value.shape().to_vec(), out)?;
        }
        Ok(())
    }
}
