use ndarray::{Array1, Array2, Zip};

use super::{Dense, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Method {
    pub fn adam_default() -> Method {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub method: Method,
    pub learning_rate: f64,
    moments: Vec<Moments>,
    t: u64,
}

#[derive(Debug, Clone)]
struct Moments {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

impl Optimizer {
    pub fn new(method: Method, learning_rate: f64) -> Optimizer {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Optimizer {
            method,
            learning_rate,
            moments: Vec::new(),
            t: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Optimizer {
        Optimizer::new(Method::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Optimizer {
        Optimizer::new(Method::adam_default(), learning_rate)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub(super) fn step(&mut self, layers: &mut [Dense], grads: &Gradients) {
        self.t += 1;
        let lr = self.learning_rate;
        match self.method {
            Method::Sgd => {
                for (l, (gw, gb)) in layers.iter_mut().zip(&grads.layers) {
                    l.weights.scaled_add(-lr, gw);
                    l.bias.scaled_add(-lr, gb);
                }
            }
            Method::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if self.moments.len() != layers.len() {
                    self.moments = layers
                        .iter()
                        .map(|l| Moments {
                            m_w: Array2::zeros(l.weights.raw_dim()),
                            v_w: Array2::zeros(l.weights.raw_dim()),
                            m_b: Array1::zeros(l.bias.raw_dim()),
                            v_b: Array1::zeros(l.bias.raw_dim()),
                        })
                        .collect();
                }
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                };
                for ((l, (gw, gb)), mo) in layers.iter_mut().zip(&grads.layers).zip(&mut self.moments) {
                    Zip::from(&mut l.weights)
                        .and(gw)
                        .and(&mut mo.m_w)
                        .and(&mut mo.v_w)
                        .for_each(update);
                    Zip::from(&mut l.bias)
                        .and(gb)
                        .and(&mut mo.m_b)
                        .and(&mut mo.v_b)
                        .for_each(update);
                }
            }
        }
    }
}
