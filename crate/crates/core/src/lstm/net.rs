//! Forward pass, backpropagation through time, and gradient utilities.

use super::params::{LayerShape, ModelParams};
use crate::error::{Error, Result};
use crate::par;
use crate::types::Window;

const LN_EPS: f64 = 1e-5;
/// Samples per gradient partial sum. Fixed so the reduction tree does not
/// depend on how many threads run it.
const GRAD_CHUNK: usize = 8;

/// Gradient of a scalar loss with respect to `ModelParams::weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Rescale so the global L2 norm is at most `max_norm`.
pub fn clip_gradients(grads: Gradients, max_norm: f64) -> Gradients {
    let n = grads.norm();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        Gradients(grads.0.into_iter().map(|g| g * s).collect())
    } else {
        grads
    }
}

/// Mean squared error.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            expected: format!("{} targets", pred.len()),
            got: format!("{}", target.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse of empty input".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer activations kept for the backward pass. All buffers are
/// time-major.
struct LayerTrace {
    /// `[x_t; h_{t-1}]`
    z: Vec<f64>,
    /// post-activation gates i, f, g, o
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    /// standardized outputs fed upward, when layer norm is on
    ln_y: Vec<f64>,
    ln_inv: Vec<f64>,
}

struct Trace {
    layers: Vec<LayerTrace>,
    /// top-layer hidden state at the last step
    h_last: Vec<f64>,
}

fn run_layer(shape: &LayerShape, weights: &[f64], input: &[f64], steps: usize) -> LayerTrace {
    let h = shape.hidden;
    let d = shape.input;
    let cols = shape.cols();
    let w = &weights[shape.w..shape.w + 4 * h * cols];
    let b = &weights[shape.b..shape.b + 4 * h];
    let mut tr = LayerTrace {
        z: vec![0.0; steps * cols],
        gates: vec![0.0; steps * 4 * h],
        c: vec![0.0; steps * h],
        tanh_c: vec![0.0; steps * h],
        h: vec![0.0; steps * h],
        ln_y: Vec::new(),
        ln_inv: Vec::new(),
    };
    let mut a = vec![0.0; 4 * h];
    for t in 0..steps {
        {
            let z = &mut tr.z[t * cols..(t + 1) * cols];
            z[..d].copy_from_slice(&input[t * d..(t + 1) * d]);
            if t > 0 {
                z[d..].copy_from_slice(&tr.h[(t - 1) * h..t * h]);
            }
        }
        let z = &tr.z[t * cols..(t + 1) * cols];
        for (r, ar) in a.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            *ar = b[r] + row.iter().zip(z).map(|(x, y)| x * y).sum::<f64>();
        }
        let g = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            g[j] = sigmoid(a[j]);
            g[h + j] = sigmoid(a[h + j]);
            g[2 * h + j] = a[2 * h + j].tanh();
            g[3 * h + j] = sigmoid(a[3 * h + j]);
        }
        for j in 0..h {
            let c_prev = if t > 0 { tr.c[(t - 1) * h + j] } else { 0.0 };
            let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
            let tc = c.tanh();
            tr.c[t * h + j] = c;
            tr.tanh_c[t * h + j] = tc;
            tr.h[t * h + j] = g[3 * h + j] * tc;
        }
    }
    tr
}

fn layer_norm(tr: &mut LayerTrace, h: usize, steps: usize) {
    tr.ln_y = vec![0.0; steps * h];
    tr.ln_inv = vec![0.0; steps];
    for t in 0..steps {
        let x = &tr.h[t * h..(t + 1) * h];
        let m = x.iter().sum::<f64>() / h as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / h as f64;
        let inv = 1.0 / (v + LN_EPS).sqrt();
        tr.ln_inv[t] = inv;
        for j in 0..h {
            tr.ln_y[t * h + j] = (x[j] - m) * inv;
        }
    }
}

fn standardize(params: &ModelParams, window: &Window) -> Vec<f64> {
    let inv = params.input_inv_std();
    let c = window.channels;
    window
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - params.input_mean[i % c]) * inv[i % c])
        .collect()
}

fn run(params: &ModelParams, window: &Window) -> Trace {
    let layout = params.layout();
    let steps = window.frames();
    let mut input = standardize(params, window);
    let mut layers = Vec::with_capacity(layout.layers.len());
    let last = layout.layers.len() - 1;
    for (l, shape) in layout.layers.iter().enumerate() {
        let mut tr = run_layer(shape, &params.weights, &input, steps);
        if l < last {
            if params.config.layer_norm {
                layer_norm(&mut tr, shape.hidden, steps);
                input = tr.ln_y.clone();
            } else {
                input = tr.h.clone();
            }
        }
        layers.push(tr);
    }
    let h = params.config.hidden;
    let top = &layers[last].h;
    let h_last = top[(steps - 1) * h..steps * h].to_vec();
    Trace { layers, h_last }
}

fn head(params: &ModelParams, h_last: &[f64]) -> f64 {
    let layout = params.layout();
    let w = &params.weights[layout.out_w..layout.out_w + h_last.len()];
    let raw = params.weights[layout.out_b] + w.iter().zip(h_last).map(|(a, b)| a * b).sum::<f64>();
    params.target_mean + params.target_scale * raw
}

/// Angle estimate in degrees for one window.
pub fn forward(params: &ModelParams, window: &Window) -> Result<f64> {
    params.check_window(window)?;
    let tr = run(params, window);
    Ok(head(params, &tr.h_last))
}

/// Estimates for many windows, in input order.
pub fn forward_batch(params: &ModelParams, windows: &[Window]) -> Result<Vec<f64>> {
    for w in windows {
        params.check_window(w)?;
    }
    Ok(par::map(windows, |w| head(params, &run(params, w).h_last)))
}

/// Accumulate d(loss)/d(weights) for one sample given d(loss)/d(prediction).
fn backprop_sample(params: &ModelParams, window: &Window, dy: f64, grad: &mut [f64]) {
    let layout = params.layout();
    let tr = run(params, window);
    let steps = window.frames();
    let h = params.config.hidden;
    let dout = dy * params.target_scale;
    for j in 0..h {
        grad[layout.out_w + j] += dout * tr.h_last[j];
    }
    grad[layout.out_b] += dout;

    // gradient arriving at each h_t of the current layer from above
    let mut dh_ext = vec![0.0; steps * h];
    for j in 0..h {
        dh_ext[(steps - 1) * h + j] = dout * params.weights[layout.out_w + j];
    }
    for (l, shape) in layout.layers.iter().enumerate().rev() {
        let lt = &tr.layers[l];
        let d = shape.input;
        let cols = shape.cols();
        let w = &params.weights[shape.w..shape.w + 4 * h * cols];
        let mut dx = vec![0.0; steps * d];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &lt.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let dh = dh_ext[t * h + j] + dh_next[j];
                let tc = lt.tanh_c[t * h + j];
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                let c_prev = if t > 0 { lt.c[(t - 1) * h + j] } else { 0.0 };
                da[j] = dc * gg * i * (1.0 - i);
                da[h + j] = dc * c_prev * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - gg * gg);
                da[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let z = &lt.z[t * cols..(t + 1) * cols];
            let mut dz = vec![0.0; cols];
            for r in 0..4 * h {
                let a = da[r];
                if a == 0.0 {
                    continue;
                }
                let row = &w[r * cols..(r + 1) * cols];
                let grow = &mut grad[shape.w + r * cols..shape.w + (r + 1) * cols];
                for c in 0..cols {
                    grow[c] += a * z[c];
                    dz[c] += a * row[c];
                }
                grad[shape.b + r] += a;
            }
            dx[t * d..(t + 1) * d].copy_from_slice(&dz[..d]);
            dh_next.copy_from_slice(&dz[d..]);
        }
        if l > 0 {
            let below = &tr.layers[l - 1];
            if params.config.layer_norm {
                // dx is with respect to the standardized outputs of layer l-1
                for t in 0..steps {
                    let y = &below.ln_y[t * h..(t + 1) * h];
                    let dyv = &dx[t * h..(t + 1) * h];
                    let mean_dy = dyv.iter().sum::<f64>() / h as f64;
                    let mean_dyy = dyv.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / h as f64;
                    let inv = below.ln_inv[t];
                    for j in 0..h {
                        dh_ext[t * h + j] = inv * (dyv[j] - mean_dy - y[j] * mean_dyy);
                    }
                }
            } else {
                dh_ext = dx;
            }
        }
    }
}

/// Gradients of `sum_i out_grads[i] * prediction_i` with respect to the
/// weights. Callers supply d(loss)/d(prediction) per sample.
pub fn backward_outputs(params: &ModelParams, windows: &[Window], out_grads: &[f64]) -> Result<Gradients> {
    if windows.len() != out_grads.len() {
        return Err(Error::Shape {
            expected: format!("{} output gradients", windows.len()),
            got: format!("{}", out_grads.len()),
        });
    }
    for w in windows {
        params.check_window(w)?;
    }
    let n = params.weights.len();
    let pairs: Vec<(&Window, f64)> = windows.iter().zip(out_grads.iter().copied()).collect();
    let partials = par::map_chunks(&pairs, GRAD_CHUNK, |chunk| {
        let mut g = vec![0.0; n];
        for (w, dy) in chunk {
            if *dy != 0.0 {
                backprop_sample(params, w, *dy, &mut g);
            }
        }
        g
    });
    let mut total = Gradients::zeros(n);
    for p in partials {
        for (a, b) in total.0.iter_mut().zip(&p) {
            *a += b;
        }
    }
    Ok(total)
}

/// Mean MSE over a labelled batch and its full BPTT gradient.
pub fn backward(params: &ModelParams, batch: &[Window]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let targets: Vec<f64> = batch
        .iter()
        .map(|w| w.target.ok_or_else(|| Error::InvalidArgument("unlabelled window in training batch".into())))
        .collect::<Result<_>>()?;
    let pred = forward_batch(params, batch)?;
    let loss = mse_loss(&pred, &targets)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let n = batch.len() as f64;
    let dy: Vec<f64> = pred.iter().zip(&targets).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, backward_outputs(params, batch, &dy)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{init, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(layer_norm: bool, layers: usize) -> ModelConfig {
        ModelConfig {
            layers,
            hidden: 4,
            window: 5,
            input_channels: 3,
            layer_norm,
            ..Default::default()
        }
    }

    fn windows(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = (0..cfg.window * cfg.input_channels).map(|_| rng.random_range(0.0..1.0)).collect();
                Window::new(v, cfg.input_channels, Some(rng.random_range(40.0..180.0))).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_bias() {
        let cfg = tiny(false, 2);
        let mut p = init(&cfg, 0).unwrap();
        p.weights.iter_mut().for_each(|w| *w = 0.0);
        let w = &windows(&cfg, 1, 1)[0];
        assert_eq!(forward(&p, w).unwrap(), 0.0);
        p.set_output_bias(120.0);
        assert_eq!(forward(&p, w).unwrap(), 120.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny(false, 1);
        let p = init(&cfg, 0).unwrap();
        let w = Window::new(vec![0.0; 12], 3, None).unwrap();
        assert!(matches!(forward(&p, &w), Err(Error::Shape { .. })));
    }

    #[test]
    fn batch_matches_single_and_is_pure() {
        let cfg = tiny(true, 2);
        let p = init(&cfg, 7).unwrap();
        let ws = windows(&cfg, 20, 2);
        let batch = forward_batch(&p, &ws).unwrap();
        for (w, b) in ws.iter().zip(&batch) {
            let single = forward(&p, w).unwrap();
            assert!((single - b).abs() <= 1e-12);
            assert_eq!(single.to_bits(), forward(&p, w).unwrap().to_bits());
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0], &[3.0]).unwrap(), 4.0);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn output_bias_gradient_closed_form() {
        let cfg = tiny(false, 1);
        let p = init(&cfg, 3).unwrap();
        let ws = windows(&cfg, 9, 4);
        let (_, g) = backward(&p, &ws).unwrap();
        let pred = forward_batch(&p, &ws).unwrap();
        let expect = 2.0 * pred.iter().zip(&ws).map(|(y, w)| y - w.target.unwrap()).sum::<f64>() / 9.0;
        let got = g.0[p.layout().out_b];
        assert!((got - expect).abs() < 1e-9 * expect.abs().max(1.0));
    }

    #[test]
    fn zero_input_zero_weights_leave_output_weights_without_gradient() {
        let cfg = tiny(false, 1);
        let mut p = init(&cfg, 3).unwrap();
        p.weights.iter_mut().for_each(|w| *w = 0.0);
        let ws: Vec<Window> = (0..4)
            .map(|_| Window::new(vec![0.0; 15], 3, Some(90.0)).unwrap())
            .collect();
        let (_, g) = backward(&p, &ws).unwrap();
        let l = p.layout();
        // h_T is exactly zero, so out_w receives nothing
        assert!(g.0[l.out_w..l.out_w + cfg.hidden].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn clip_scales_only_when_needed() {
        let g = Gradients(vec![6.0, 8.0]);
        assert_eq!(clip_gradients(g.clone(), 5.0).0, vec![3.0, 4.0]);
        let g = Gradients(vec![0.6, 0.8, 0.0, 2.8]);
        assert_eq!(clip_gradients(g.clone(), 5.0), g);
    }
}
