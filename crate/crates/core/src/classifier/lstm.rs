//! Single-direction LSTM over a chosen row order, with BPTT.
//!
//! Gate layout in the 4U pre-activation: `[i | f | g | o]`.

use crate::tensor::{sigmoid, Tensor};

use super::LstmParams;

#[derive(Clone, Debug)]
pub(crate) struct Step {
    row: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates, 4U.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Trace {
    pub(crate) h: Vec<f64>,
    steps: Vec<Step>,
}

pub(crate) fn run(p: &LstmParams, x: &Tensor, rows: impl Iterator<Item = usize>) -> Trace {
    let u = p.units();
    let d = x.cols();
    let mut h = vec![0.0; u];
    let mut c = vec![0.0; u];
    let mut steps = Vec::new();
    for row in rows {
        let xr = x.row(row);
        let mut z = p.bias.data().to_vec();
        for (k, &xv) in xr.iter().enumerate().take(d) {
            if xv == 0.0 {
                continue;
            }
            for (zj, w) in z.iter_mut().zip(p.w_in.row(k)) {
                *zj += xv * w;
            }
        }
        for (k, &hv) in h.iter().enumerate() {
            for (zj, w) in z.iter_mut().zip(p.w_rec.row(k)) {
                *zj += hv * w;
            }
        }
        let mut gates = z;
        for j in 0..u {
            gates[j] = sigmoid(gates[j]);
            gates[u + j] = sigmoid(gates[u + j]);
            gates[2 * u + j] = gates[2 * u + j].tanh();
            gates[3 * u + j] = sigmoid(gates[3 * u + j]);
        }
        let c_prev = c.clone();
        let h_prev = h.clone();
        let mut tanh_c = vec![0.0; u];
        for j in 0..u {
            c[j] = gates[u + j] * c_prev[j] + gates[j] * gates[2 * u + j];
            tanh_c[j] = c[j].tanh();
            h[j] = gates[3 * u + j] * tanh_c[j];
        }
        steps.push(Step {
            row,
            h_prev,
            c_prev,
            gates,
            tanh_c,
        });
    }
    Trace { h, steps }
}

/// Backpropagates ∂L/∂h_final through the recorded steps into `g`.
/// Inputs are frozen embeddings, so no gradient flows to `x`.
pub(crate) fn backward(p: &LstmParams, x: &Tensor, trace: &Trace, dh_final: &[f64], g: &mut LstmParams) {
    let u = p.units();
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; u];
    let mut dz = vec![0.0; 4 * u];
    for step in trace.steps.iter().rev() {
        let gt = &step.gates;
        for j in 0..u {
            let (i, f, gg, o) = (gt[j], gt[u + j], gt[2 * u + j], gt[3 * u + j]);
            let tc = step.tanh_c[j];
            let do_ = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc[j] * gg * i * (1.0 - i);
            dz[u + j] = dc[j] * step.c_prev[j] * f * (1.0 - f);
            dz[2 * u + j] = dc[j] * i * (1.0 - gg * gg);
            dz[3 * u + j] = do_ * o * (1.0 - o);
            dc[j] *= f;
        }
        for (b, v) in g.bias.data_mut().iter_mut().zip(&dz) {
            *b += v;
        }
        for (k, &xv) in x.row(step.row).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (w, v) in g.w_in.row_mut(k).iter_mut().zip(&dz) {
                *w += xv * v;
            }
        }
        for (k, &hv) in step.h_prev.iter().enumerate() {
            for (w, v) in g.w_rec.row_mut(k).iter_mut().zip(&dz) {
                *w += hv * v;
            }
        }
        for (k, dhk) in dh.iter_mut().enumerate() {
            *dhk = crate::tensor::dot(p.w_rec.row(k), &dz);
        }
    }
}
