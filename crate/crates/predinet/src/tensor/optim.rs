use super::{Result, Tensor, TensorError};

/// A named trainable tensor. Gradients are copied out of a [`super::Graph`]
/// after each backward pass and consumed by [`Optimizer::step`].
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn accumulate_grad(&mut self, grad: &Tensor) {
        match &mut self.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => self.grad = Some(grad.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        step: u64,
        // Keyed by parameter name; allocated on first step.
        moments: Vec<(String, Tensor, Tensor)>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f32) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam(lr: f32) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        for p in params.iter() {
            if p.grad.is_none() {
                return Err(TensorError::MissingGrad {
                    name: p.name.clone(),
                });
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                for p in params.iter_mut() {
                    let g = p.grad.as_ref().unwrap();
                    for (v, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *v -= *lr * gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                moments,
            } => {
                *step += 1;
                let t = *step as f64;
                let bc1 = 1.0 - (*beta1 as f64).powf(t);
                let bc2 = 1.0 - (*beta2 as f64).powf(t);
                for p in params.iter_mut() {
                    let g = p.grad.as_ref().unwrap().clone();
                    let slot = match moments.iter().position(|(n, _, _)| n == &p.name) {
                        Some(i) => i,
                        None => {
                            moments.push((
                                p.name.clone(),
                                Tensor::zeros(p.value.shape()),
                                Tensor::zeros(p.value.shape()),
                            ));
                            moments.len() - 1
                        }
                    };
                    let (_, m, v) = &mut moments[slot];
                    for i in 0..p.value.numel() {
                        let gv = g.data()[i];
                        m.data_mut()[i] = *beta1 * m.data()[i] + (1.0 - *beta1) * gv;
                        v.data_mut()[i] = *beta2 * v.data()[i] + (1.0 - *beta2) * gv * gv;
                        let mhat = m.data()[i] as f64 / bc1;
                        let vhat = v.data()[i] as f64 / bc2;
                        p.value.data_mut()[i] -=
                            (*lr as f64 * mhat / (vhat.sqrt() + *eps as f64)) as f32;
                    }
                }
            }
        }
        for p in params.iter_mut() {
            p.grad = None;
        }
        Ok(())
    }
}
