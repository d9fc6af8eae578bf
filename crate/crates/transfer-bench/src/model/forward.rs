//! Graph construction for a [`ModelSpec`], generic over the element type so
//! gradient verification can run the identical code at f64.

use super::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, VarId};

/// Walk the layer list and build the forward graph from `input` to logits.
///
/// `input` must be `[N, C, H, W]` matching the spec's input shape, or
/// `[N, H, W]` when the first layer is an LSTM (sequence view).
pub fn forward_graph<E: Element>(
    spec: &ModelSpec,
    params: &[(String, Tensor<E>)],
    g: &mut Graph<E>,
    input: VarId,
) -> Result<VarId> {
    let mut cursor = 0;
    let mut next_param = |g: &mut Graph<E>, expect: &str| -> Result<VarId> {
        let Some((name, t)) = params.get(cursor) else {
            return Err(Error::ShapeTable {
                path: std::path::PathBuf::from("<params>"),
                detail: format!("missing parameter `{expect}`"),
            });
        };
        if !name.ends_with(expect) {
            return Err(Error::ShapeTable {
                path: std::path::PathBuf::from("<params>"),
                detail: format!("expected parameter `{expect}`, found `{name}`"),
            });
        }
        cursor += 1;
        Ok(g.leaf(t.clone()))
    };

    let mut conv_n = 0;
    let mut dense_n = 0;
    let mut lstm_n = 0;
    let mut x = input;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { padding, .. } => {
                conv_n += 1;
                let k = next_param(g, &format!("conv{conv_n}.kernel"))?;
                x = g.conv2d(x, k, *padding)?;
            }
            LayerSpec::Relu => {
                x = g.relu(x);
            }
            LayerSpec::MaxPool { stride } => {
                x = g.maxpool2d(x, *stride)?;
            }
            LayerSpec::Flatten => {
                let s = g.value(x).shape().to_vec();
                let n = s[0];
                let rest: usize = s[1..].iter().product();
                x = g.reshape(x, [n, rest])?;
            }
            LayerSpec::Dense { out_dim } => {
                dense_n += 1;
                let w = next_param(g, &format!("dense{dense_n}.weight"))?;
                let b = next_param(g, &format!("dense{dense_n}.bias"))?;
                let _ = out_dim;
                x = g.dense(x, w, b)?;
            }
            LayerSpec::Lstm { hidden_dim } => {
                lstm_n += 1;
                let w_ih = next_param(g, &format!("lstm{lstm_n}.w_ih"))?;
                let w_hh = next_param(g, &format!("lstm{lstm_n}.w_hh"))?;
                let bias = next_param(g, &format!("lstm{lstm_n}.bias"))?;
                let (h, _) = lstm_layer(g, x, w_ih, w_hh, bias, *hidden_dim)?;
                x = h;
            }
        }
    }
    Ok(x)
}

/// Unrolled single-layer LSTM over a `[N,T,D]` sequence (a `[N,1,T,D]` image
/// input is reshaped first). Returns the final hidden state `[N,H]` and the
/// per-step `(hidden, cell)` ids for inspection.
pub fn lstm_layer<E: Element>(
    g: &mut Graph<E>,
    input: VarId,
    w_ih: VarId,
    w_hh: VarId,
    bias: VarId,
    hidden_dim: usize,
) -> Result<(VarId, Vec<(VarId, VarId)>)> {
    let shape = g.value(input).shape().to_vec();
    let seq = match shape.len() {
        3 => input,
        4 if shape[1] == 1 => g.reshape(input, [shape[0], shape[2], shape[3]])?,
        _ => {
            return Err(Error::shape(
                "lstm",
                format!("expected [N,T,D] or [N,1,T,D], got {shape:?}"),
            ))
        }
    };
    let s = g.value(seq).shape().to_vec();
    let (n, t, _d) = (s[0], s[1], s[2]);
    let h_dim = hidden_dim;

    let mut h = g.leaf(Tensor::zeros([n, h_dim]));
    let mut c = g.leaf(Tensor::zeros([n, h_dim]));
    let mut states = Vec::with_capacity(t);
    for step in 0..t {
        let x_t = g.select_step(seq, step)?;
        let zx = g.dense(x_t, w_ih, bias)?;
        let zh = g.matmul(h, w_hh)?;
        let z = g.add(zx, zh)?;
        let i_gate = g.slice_cols(z, 0, h_dim)?;
        let f_gate = g.slice_cols(z, h_dim, h_dim)?;
        let g_gate = g.slice_cols(z, 2 * h_dim, h_dim)?;
        let o_gate = g.slice_cols(z, 3 * h_dim, h_dim)?;
        let i_s = g.sigmoid(i_gate);
        let f_s = g.sigmoid(f_gate);
        let g_t = g.tanh(g_gate);
        let o_s = g.sigmoid(o_gate);
        let fc = g.mul(f_s, c)?;
        let ig = g.mul(i_s, g_t)?;
        c = g.add(fc, ig)?;
        let ct = g.tanh(c);
        h = g.mul(o_s, ct)?;
        states.push((h, c));
    }
    Ok((h, states))
}
