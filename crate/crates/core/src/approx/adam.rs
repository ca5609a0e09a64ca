use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One update of `net` along `grads`. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to adam".into()));
        }
        if grads.layers.len() != self.first.len() {
            return Err(Error::shape(
                "adam gradient layers",
                self.first.len(),
                grads.layers.len(),
            ));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.first[l];
            let (vw, vb) = &mut self.second[l];
            if gw.dim() != layer.weights.dim() {
                return Err(Error::shape("adam gradient", layer.weights.len(), gw.len()));
            }
            ndarray::Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v, lr, b1, b2, eps, c1, c2));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v, lr, b1, b2, eps, c1, c2));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(
    p: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + eps);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{Activation, Layer};
    use crate::rng::seeded;
    use ndarray::array;

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Layer {
                weights: array![[w]],
                bias: array![0.0],
            }],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!(
            (c.learning_rate, c.beta1, c.beta2, c.epsilon),
            (3e-4, 0.9, 0.999, 1e-8)
        );
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut net = Mlp::new(&[3, 4, 2], Activation::Identity, &mut seeded(0)).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &Gradients::zeros_like(&before))
            .unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn descends_on_square() {
        // f(w) = w², f'(1) = 2.
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(0.1));
        let grads = Gradients {
            layers: vec![(array![[2.0]], array![0.0])],
        };
        adam.step(&mut net, &grads).unwrap();
        let w = net.layers()[0].weights[[0, 0]];
        assert!(w < 1.0);
        // First bias-corrected step moves by lr·sign(g).
        assert!((w - 0.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let grads = Gradients {
            layers: vec![(array![[f64::NAN]], array![0.0])],
        };
        assert!(matches!(
            adam.step(&mut net, &grads),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(net, scalar_net(1.0));
        assert_eq!(adam.step, 0);
    }
}
