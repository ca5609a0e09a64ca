//! Fully connected networks with hand-written reverse-mode gradients.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_mlp, save_mlp, CHECKPOINT_VERSION};
pub use mlp::{Activation, Gradients, Layer, Mlp, Tape};

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `loss` with respect to every parameter of
/// `net`, in [`Mlp::flat_params`] order.
pub fn central_difference(net: &Mlp, h: f64, loss: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut p = base.clone();
    (0..base.len())
        .map(|i| {
            p[i] = base[i] + h;
            probe.set_flat_params(&p).expect("same length");
            let lp = loss(&probe);
            p[i] = base[i] - h;
            probe.set_flat_params(&p).expect("same length");
            let lm = loss(&probe);
            p[i] = base[i];
            (lp - lm) / (2.0 * h)
        })
        .collect()
}
