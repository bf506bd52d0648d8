//! Forward and backward passes for the three layer types: feature-axis
//! convolution, strided max-pooling over time, and an LSTM cell.
//!
//! Everything operates on flat f64 slices in double precision; the backward
//! functions accumulate into caller-provided gradient buffers so a batch can
//! be summed in a fixed order.

use crate::error::FrtpError;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Convolution over the feature axis with a zero-padded time kernel
// ---------------------------------------------------------------------------

/// out[t] = bias + sum_{dt, f} w[dt][f] * x[t + dt - pad][f], out-of-range
/// time indices contribute zero. `x` is [t][f] row-major, `w` is
/// [kernel_time][n_features] row-major, output has one channel.
pub fn conv_forward_seq(
    x: &[f64],
    t_len: usize,
    n_features: usize,
    w: &[f64],
    kernel_time: usize,
    bias: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), t_len * n_features);
    debug_assert_eq!(w.len(), kernel_time * n_features);
    debug_assert_eq!(out.len(), t_len);
    let pad = kernel_time as i64 / 2;
    for t in 0..t_len {
        let mut acc = bias;
        for dt in 0..kernel_time {
            let ti = t as i64 + dt as i64 - pad;
            if ti < 0 || ti >= t_len as i64 {
                continue;
            }
            let xrow = &x[ti as usize * n_features..(ti as usize + 1) * n_features];
            let wrow = &w[dt * n_features..(dt + 1) * n_features];
            for f in 0..n_features {
                acc += wrow[f] * xrow[f];
            }
        }
        out[t] = acc;
    }
}

/// Accumulates gradients for the convolution weights and bias given
/// d(loss)/d(out). Input gradients are not needed upstream of the model.
pub fn conv_backward_seq(
    x: &[f64],
    t_len: usize,
    n_features: usize,
    kernel_time: usize,
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut f64,
) {
    let pad = kernel_time as i64 / 2;
    for t in 0..t_len {
        let g = d_out[t];
        if g == 0.0 {
            continue;
        }
        *db += g;
        for dt in 0..kernel_time {
            let ti = t as i64 + dt as i64 - pad;
            if ti < 0 || ti >= t_len as i64 {
                continue;
            }
            let xrow = &x[ti as usize * n_features..(ti as usize + 1) * n_features];
            let wrow = &mut dw[dt * n_features..(dt + 1) * n_features];
            for f in 0..n_features {
                wrow[f] += g * xrow[f];
            }
        }
    }
}

/// Convenience wrapper over a segments x t x f tensor; returns segments x
/// floor-free t x 1 (same time length, single channel).
pub fn conv_forward(
    x: &[f64],
    n_segments: usize,
    t_len: usize,
    n_features: usize,
    w: &[f64],
    kernel_time: usize,
    bias: f64,
) -> Result<Vec<f64>, FrtpError> {
    if x.len() != n_segments * t_len * n_features {
        return Err(FrtpError::ShapeMismatch(format!(
            "conv input has {} values, expected {}",
            x.len(),
            n_segments * t_len * n_features
        )));
    }
    if w.len() != kernel_time * n_features {
        return Err(FrtpError::ShapeMismatch("conv kernel shape mismatch".into()));
    }
    let mut out = vec![0.0; n_segments * t_len];
    for seg in 0..n_segments {
        conv_forward_seq(
            &x[seg * t_len * n_features..(seg + 1) * t_len * n_features],
            t_len,
            n_features,
            w,
            kernel_time,
            bias,
            &mut out[seg * t_len..(seg + 1) * t_len],
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Max-pooling over time with stride R
// ---------------------------------------------------------------------------

/// out[b] = max of x over [bR, (b+1)R); the trailing remainder of T mod R is
/// dropped. Also returns the argmax index per output bucket for backprop.
pub fn maxpool_time(x: &[f64], r: usize) -> Result<(Vec<f64>, Vec<usize>), FrtpError> {
    if r == 0 || r > x.len() {
        return Err(FrtpError::RTooLarge { r, len: x.len() });
    }
    let out_len = x.len() / r;
    let mut out = vec![0.0; out_len];
    let mut arg = vec![0; out_len];
    for b in 0..out_len {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = b * r;
        for i in b * r..(b + 1) * r {
            if x[i] > best {
                best = x[i];
                best_i = i;
            }
        }
        out[b] = best;
        arg[b] = best_i;
    }
    Ok((out, arg))
}

/// Routes pooled-output gradients back to the argmax positions.
pub fn maxpool_backward(d_out: &[f64], arg: &[usize], d_in: &mut [f64]) {
    for (g, &i) in d_out.iter().zip(arg) {
        d_in[i] += g;
    }
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

pub const GATES: usize = 4; // input, forget, cell candidate, output

/// LSTM weights for one cell: per gate, input weights (hidden x d),
/// recurrent weights (hidden x hidden), and bias (hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// [gate][h * input_dim + i]
    pub w: [Vec<f64>; GATES],
    /// [gate][h * hidden + j]
    pub u: [Vec<f64>; GATES],
    pub b: [Vec<f64>; GATES],
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            input_dim,
            hidden,
            w: std::array::from_fn(|_| vec![0.0; hidden * input_dim]),
            u: std::array::from_fn(|_| vec![0.0; hidden * hidden]),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// gates[t][gate][h], post-activation.
    pub gates: Vec<[Vec<f64>; GATES]>,
    /// Cell states c_t, with c_{-1} implicit zero.
    pub c: Vec<Vec<f64>>,
    /// Hidden states h_t.
    pub h: Vec<Vec<f64>>,
}

/// Standard LSTM recurrence with sigmoid gates and tanh cell activation,
/// starting from zero hidden and cell state.
pub fn lstm_forward(seq: &[f64], t_len: usize, params: &LstmParams) -> Result<LstmCache, FrtpError> {
    let d = params.input_dim;
    let hn = params.hidden;
    if seq.len() != t_len * d {
        return Err(FrtpError::ShapeMismatch(format!(
            "lstm input has {} values, expected {}",
            seq.len(),
            t_len * d
        )));
    }
    let mut cache = LstmCache {
        gates: Vec::with_capacity(t_len),
        c: Vec::with_capacity(t_len),
        h: Vec::with_capacity(t_len),
    };
    let mut h_prev = vec![0.0; hn];
    let mut c_prev = vec![0.0; hn];
    for t in 0..t_len {
        let x = &seq[t * d..(t + 1) * d];
        let mut gates: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hn]);
        for g in 0..GATES {
            for h in 0..hn {
                let mut acc = params.b[g][h];
                let wrow = &params.w[g][h * d..(h + 1) * d];
                for i in 0..d {
                    acc += wrow[i] * x[i];
                }
                let urow = &params.u[g][h * hn..(h + 1) * hn];
                for j in 0..hn {
                    acc += urow[j] * h_prev[j];
                }
                gates[g][h] = if g == 2 { acc.tanh() } else { sigmoid(acc) };
            }
        }
        let mut c_t = vec![0.0; hn];
        let mut h_t = vec![0.0; hn];
        for h in 0..hn {
            c_t[h] = gates[1][h] * c_prev[h] + gates[0][h] * gates[2][h];
            h_t[h] = gates[3][h] * c_t[h].tanh();
        }
        cache.gates.push(gates);
        cache.c.push(c_t.clone());
        cache.h.push(h_t.clone());
        c_prev = c_t;
        h_prev = h_t;
    }
    Ok(cache)
}

/// Backpropagation through time. `d_h` carries d(loss)/d(h_t) per step
/// (often nonzero only at the last step). Accumulates parameter gradients
/// into `grads` and returns d(loss)/d(x_t) for every step.
pub fn lstm_backward(
    seq: &[f64],
    t_len: usize,
    params: &LstmParams,
    cache: &LstmCache,
    d_h: &[Vec<f64>],
    grads: &mut LstmParams,
) -> Vec<f64> {
    let d = params.input_dim;
    let hn = params.hidden;
    let mut dx = vec![0.0; t_len * d];
    let mut dh_next = vec![0.0; hn];
    let mut dc_next = vec![0.0; hn];
    for t in (0..t_len).rev() {
        let x = &seq[t * d..(t + 1) * d];
        let h_prev: &[f64] = if t == 0 { &[] } else { &cache.h[t - 1] };
        let c_prev: &[f64] = if t == 0 { &[] } else { &cache.c[t - 1] };
        let gates = &cache.gates[t];
        let mut d_gate_pre: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hn]);
        let mut dc = dc_next.clone();
        for h in 0..hn {
            let dh = d_h[t][h] + dh_next[h];
            let tanh_c = cache.c[t][h].tanh();
            let (i_g, f_g, g_g, o_g) = (gates[0][h], gates[1][h], gates[2][h], gates[3][h]);
            // output gate, pre-activation
            d_gate_pre[3][h] = dh * tanh_c * o_g * (1.0 - o_g);
            dc[h] += dh * o_g * (1.0 - tanh_c * tanh_c);
            d_gate_pre[0][h] = dc[h] * g_g * i_g * (1.0 - i_g);
            d_gate_pre[2][h] = dc[h] * i_g * (1.0 - g_g * g_g);
            let cp = if t == 0 { 0.0 } else { c_prev[h] };
            d_gate_pre[1][h] = dc[h] * cp * f_g * (1.0 - f_g);
        }
        for h in 0..hn {
            dc_next[h] = dc[h] * gates[1][h];
        }
        dh_next = vec![0.0; hn];
        for g in 0..GATES {
            for h in 0..hn {
                let dg = d_gate_pre[g][h];
                if dg == 0.0 {
                    continue;
                }
                grads.b[g][h] += dg;
                let wrow = &params.w[g][h * d..(h + 1) * d];
                let dwrow = &mut grads.w[g][h * d..(h + 1) * d];
                for i in 0..d {
                    dwrow[i] += dg * x[i];
                    dx[t * d + i] += dg * wrow[i];
                }
                if t > 0 {
                    let urow = &params.u[g][h * hn..(h + 1) * hn];
                    let durow = &mut grads.u[g][h * hn..(h + 1) * hn];
                    for j in 0..hn {
                        durow[j] += dg * h_prev[j];
                        dh_next[j] += dg * urow[j];
                    }
                }
            }
        }
    }
    dx
}
