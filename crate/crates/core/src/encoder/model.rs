//! Pre-norm transformer stack with analytic backpropagation.
//!
//! Per layer: `x += Attn(LN₁(x))`, then `x += FFN(LN₂(x))` with a GELU
//! (tanh form) between the two feed-forward matrices. A final layer norm
//! produces the hidden states handed to pooling and the MLM head.

use crate::tensor::{matmul, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax_in_place};

use super::{EncoderParams, LayerParams};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[derive(Clone, Debug)]
pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], t: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            out[r * d + c] = gain[c] * h + bias[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &[f64], cache: &LnCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64], d: usize) -> Vec<f64> {
    let t = cache.rstd.len();
    let mut dx = vec![0.0; t * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..t {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for c in 0..d {
            dgain[c] += g[c] * xh[c];
            dbias[c] += g[c];
            dxhat[c] = g[c] * gain[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.rstd[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

#[derive(Clone, Debug)]
struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × T × T attention weights.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    b: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    pub(crate) hidden: Vec<f64>,
}

pub(crate) fn forward(params: &EncoderParams, ids: &[u32]) -> ForwardCache {
    let cfg = &params.config;
    let (t, d) = (ids.len(), cfg.dim);
    let mut x = vec![0.0; t * d];
    for (r, &id) in ids.iter().enumerate() {
        let e = params.tok_emb.row(id as usize);
        let p = params.pos_emb.row(r);
        for c in 0..d {
            x[r * d + c] = e[c] + p[c];
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (cache, next) = layer_forward(lp, &x, t, d, cfg.heads);
        layers.push(cache);
        x = next;
    }
    let (hidden, lnf) = layer_norm(&x, t, d, params.lnf_gain.data(), params.lnf_bias.data());
    ForwardCache {
        ids: ids.to_vec(),
        layers,
        lnf,
        hidden,
    }
}

fn layer_forward(lp: &LayerParams, x: &[f64], t: usize, d: usize, heads: usize) -> (LayerCache, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, ln1) = layer_norm(x, t, d, lp.ln1_gain.data(), lp.ln1_bias.data());
    let q = matmul(&a, lp.wq.data(), t, d, d);
    let k = matmul(&a, lp.wk.data(), t, d, d);
    let v = matmul(&a, lp.wv.data(), t, d, d);
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let prow = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, s) in prow.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(prow);
            for (j, &p) in prow.iter().enumerate() {
                for c in 0..dh {
                    ctx[i * d + off + c] += p * v[j * d + off + c];
                }
            }
        }
    }
    let mut x_mid = x.to_vec();
    matmul_acc(&mut x_mid, &ctx, lp.wo.data(), t, d, d);

    let (b, ln2) = layer_norm(&x_mid, t, d, lp.ln2_gain.data(), lp.ln2_bias.data());
    let hidden = lp.w1.cols();
    let mut pre = matmul(&b, lp.w1.data(), t, d, hidden);
    for r in 0..t {
        for (p, bias) in pre[r * hidden..(r + 1) * hidden].iter_mut().zip(lp.b1.data()) {
            *p += bias;
        }
    }
    let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
    let mut out = x_mid;
    matmul_acc(&mut out, &act, lp.w2.data(), t, hidden, d);
    for r in 0..t {
        for (o, bias) in out[r * d..(r + 1) * d].iter_mut().zip(lp.b2.data()) {
            *o += bias;
        }
    }
    (
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            pre,
            act,
        },
        out,
    )
}

/// Accumulates ∂L/∂θ into `grads` given ∂L/∂H for the final hidden states.
pub(crate) fn backward(params: &EncoderParams, cache: &ForwardCache, d_hidden: &[f64], grads: &mut EncoderParams) {
    let cfg = &params.config;
    let (t, d) = (cache.ids.len(), cfg.dim);
    let mut dx = layer_norm_backward(
        d_hidden,
        &cache.lnf,
        params.lnf_gain.data(),
        grads.lnf_gain.data_mut(),
        grads.lnf_bias.data_mut(),
        d,
    );
    for (l, lc) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(&params.layers[l], lc, &dx, &mut grads.layers[l], t, d, cfg.heads);
    }
    for (r, &id) in cache.ids.iter().enumerate() {
        let row = &dx[r * d..(r + 1) * d];
        for (g, v) in grads.tok_emb.row_mut(id as usize).iter_mut().zip(row) {
            *g += v;
        }
        for (g, v) in grads.pos_emb.row_mut(r).iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn layer_backward(
    lp: &LayerParams,
    lc: &LayerCache,
    d_out: &[f64],
    g: &mut LayerParams,
    t: usize,
    d: usize,
    heads: usize,
) -> Vec<f64> {
    let hidden = lp.w1.cols();
    // Feed-forward branch; the residual passes d_out straight through.
    for r in 0..t {
        for (gb, v) in g.b2.data_mut().iter_mut().zip(&d_out[r * d..(r + 1) * d]) {
            *gb += v;
        }
    }
    matmul_at_b_acc(g.w2.data_mut(), &lc.act, d_out, t, hidden, d);
    let mut d_act = vec![0.0; t * hidden];
    matmul_a_bt_acc(&mut d_act, d_out, lp.w2.data(), t, d, hidden);
    let d_pre: Vec<f64> = d_act.iter().zip(&lc.pre).map(|(da, &z)| da * gelu_grad(z)).collect();
    for r in 0..t {
        for (gb, v) in g.b1.data_mut().iter_mut().zip(&d_pre[r * hidden..(r + 1) * hidden]) {
            *gb += v;
        }
    }
    matmul_at_b_acc(g.w1.data_mut(), &lc.b, &d_pre, t, d, hidden);
    let mut d_b = vec![0.0; t * d];
    matmul_a_bt_acc(&mut d_b, &d_pre, lp.w1.data(), t, hidden, d);
    let d_ln2 = layer_norm_backward(&d_b, &lc.ln2, lp.ln2_gain.data(), g.ln2_gain.data_mut(), g.ln2_bias.data_mut(), d);
    let mut d_mid: Vec<f64> = d_out.iter().zip(&d_ln2).map(|(a, b)| a + b).collect();

    // Attention branch.
    matmul_at_b_acc(g.wo.data_mut(), &lc.ctx, &d_mid, t, d, d);
    let mut d_ctx = vec![0.0; t * d];
    matmul_a_bt_acc(&mut d_ctx, &d_mid, lp.wo.data(), t, d, d);

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let prow = &lc.probs[(h * t + i) * t..(h * t + i + 1) * t];
            let dci = &d_ctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                let vj = &lc.v[j * d + off..j * d + off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                for c in 0..dh {
                    dv[j * d + off + c] += prow[j] * dci[c];
                }
            }
            let inner: f64 = prow.iter().zip(&dp).map(|(p, g)| p * g).sum();
            for j in 0..t {
                let ds = prow[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                    dk[j * d + off + c] += ds * lc.q[i * d + off + c];
                }
            }
        }
    }
    matmul_at_b_acc(g.wq.data_mut(), &lc.a, &dq, t, d, d);
    matmul_at_b_acc(g.wk.data_mut(), &lc.a, &dk, t, d, d);
    matmul_at_b_acc(g.wv.data_mut(), &lc.a, &dv, t, d, d);
    let mut d_a = vec![0.0; t * d];
    matmul_a_bt_acc(&mut d_a, &dq, lp.wq.data(), t, d, d);
    matmul_a_bt_acc(&mut d_a, &dk, lp.wk.data(), t, d, d);
    matmul_a_bt_acc(&mut d_a, &dv, lp.wv.data(), t, d, d);
    let d_ln1 = layer_norm_backward(&d_a, &lc.ln1, lp.ln1_gain.data(), g.ln1_gain.data_mut(), g.ln1_bias.data_mut(), d);
    for (m, v) in d_mid.iter_mut().zip(&d_ln1) {
        *m += v;
    }
    d_mid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.5, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert_eq!(gelu(0.0), 0.0);
    }
}
