//! Fully connected stacks shared by the MLP and the CNN head.
//!
//! Layer `l` uses `blocks[start + 2l]` as its `in × out` weight and
//! `blocks[start + 2l + 1]` as its `1 × out` bias. The activation is applied
//! after every layer except the last.

use super::{Activation, ExtractorParams};

pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let mut z = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (zk, wk) in z.iter_mut().zip(row) {
            *zk += xi * wk;
        }
    }
    z
}

pub(crate) fn forward(
    params: &ExtractorParams,
    start: usize,
    layers: usize,
    act: Activation,
    mut h: Vec<f64>,
    mut tape: Option<&mut Vec<Vec<f64>>>,
) -> Vec<f64> {
    for l in 0..layers {
        let w = &params.blocks[start + 2 * l];
        let b = &params.blocks[start + 2 * l + 1];
        let z = affine(&w.data, &b.data, &h, w.cols);
        let next = if l + 1 < layers {
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            z.clone()
        };
        if let Some(t) = tape.as_deref_mut() {
            t.push(std::mem::take(&mut h));
            t.push(z);
        }
        h = next;
    }
    h
}

/// `tape` holds `(input, pre-activation)` pairs for each layer.
pub(crate) fn backward(
    params: &ExtractorParams,
    start: usize,
    layers: usize,
    act: Activation,
    tape: &[Vec<f64>],
    upstream: &[f64],
    grads: &mut ExtractorParams,
) -> Vec<f64> {
    let mut g = upstream.to_vec();
    for l in (0..layers).rev() {
        let input = &tape[2 * l];
        let z = &tape[2 * l + 1];
        if l + 1 < layers {
            for (gk, &zk) in g.iter_mut().zip(z) {
                *gk *= act.derivative(zk);
            }
        }
        let w = &params.blocks[start + 2 * l];
        let out = w.cols;
        {
            let gw = &mut grads.blocks[start + 2 * l].data;
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (d, gk) in gw[i * out..(i + 1) * out].iter_mut().zip(&g) {
                    *d += xi * gk;
                }
            }
        }
        for (d, gk) in grads.blocks[start + 2 * l + 1].data.iter_mut().zip(&g) {
            *d += gk;
        }
        let mut gin = vec![0.0; w.rows];
        for (i, gi) in gin.iter_mut().enumerate() {
            let row = &w.data[i * out..(i + 1) * out];
            *gi = row.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        g = gin;
    }
    g
}
