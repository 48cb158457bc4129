use serde::{Deserialize, Serialize};

use super::{dense, Activation, ExtractorParams, FeatureMap, Recording};
use crate::error::{Error, Result};

/// Conv1D → ReLU → MaxPool1D → Conv1D → Flatten → dense stack.
///
/// Channels run over input variables, length over the time window. Both
/// convolutions use stride 1 and zero padding that preserves length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub n_inputs: usize,
    pub window: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    pub dense_widths: Vec<usize>,
}

impl CnnSpec {
    /// 256 and 128 channels, kernel width 3, pooling 2, dense 100-50-25-10-3.
    pub fn standard(n_inputs: usize, window: usize) -> Self {
        Self {
            n_inputs,
            window,
            conv1_channels: 256,
            conv2_channels: 128,
            kernel_width: 3,
            pool_width: 2,
            dense_widths: vec![100, 50, 25, 10, 3],
        }
    }

    pub fn pooled_len(&self) -> usize {
        self.window / self.pool_width.max(1)
    }

    pub fn flatten_len(&self) -> usize {
        self.conv2_channels * self.pooled_len()
    }
}

#[derive(Debug, Clone)]
pub struct CnnNet {
    spec: CnnSpec,
}

impl CnnNet {
    pub fn new(spec: CnnSpec) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("CNN: {m}")));
        if spec.n_inputs == 0 || spec.conv1_channels == 0 || spec.conv2_channels == 0 {
            return bad("channel counts must be positive");
        }
        if spec.kernel_width == 0 || spec.pool_width == 0 {
            return bad("kernel and pooling widths must be at least 1");
        }
        if spec.window < spec.kernel_width {
            return bad("window too short for the convolution kernel");
        }
        if spec.window < spec.pool_width {
            return bad("window too short for pooling");
        }
        if spec.dense_widths.last() != Some(&3) || spec.dense_widths.contains(&0) {
            return bad("dense widths must be positive and end in 3");
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    fn dense_start(&self) -> usize {
        4
    }
}

/// Same-length 1-D convolution. `input` is `c_in × len`, `weight` is
/// `c_out × (c_in·k)`, output is `c_out × len`, all row-major.
pub fn conv1d(
    input: &[f64],
    c_in: usize,
    len: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let left = (k - 1) / 2;
    let mut out = vec![0.0; c_out * len];
    for o in 0..c_out {
        let row = &mut out[o * len..(o + 1) * len];
        row.fill(bias[o]);
        for c in 0..c_in {
            let x = &input[c * len..(c + 1) * len];
            for kk in 0..k {
                let w = weight[o * c_in * k + c * k + kk];
                if w == 0.0 {
                    continue;
                }
                // out[t] += w * x[t + kk - left] where the index is in range
                let lo = left.saturating_sub(kk);
                let hi = (len + left).saturating_sub(kk).min(len);
                for t in lo..hi {
                    row[t] += w * x[t + kk - left];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    input: &[f64],
    c_in: usize,
    len: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let left = (k - 1) / 2;
    let mut din = vec![0.0; c_in * len];
    for o in 0..c_out {
        let g = &dout[o * len..(o + 1) * len];
        db[o] += g.iter().sum::<f64>();
        for c in 0..c_in {
            let x = &input[c * len..(c + 1) * len];
            for kk in 0..k {
                let idx = o * c_in * k + c * k + kk;
                let w = weight[idx];
                let lo = left.saturating_sub(kk);
                let hi = (len + left).saturating_sub(kk).min(len);
                let mut acc = 0.0;
                let dx = &mut din[c * len..(c + 1) * len];
                for t in lo..hi {
                    let s = t + kk - left;
                    acc += g[t] * x[s];
                    dx[s] += g[t] * w;
                }
                dw[idx] += acc;
            }
        }
    }
    din
}

impl FeatureMap for CnnNet {
    fn input_len(&self) -> usize {
        self.spec.n_inputs * self.spec.window
    }

    fn latent_dim(&self) -> usize {
        3
    }

    fn param_shapes(&self) -> Vec<(String, usize, usize, bool)> {
        let s = &self.spec;
        let mut shapes = vec![
            ("conv1.weight".into(), s.conv1_channels, s.n_inputs * s.kernel_width, false),
            ("conv1.bias".into(), 1, s.conv1_channels, true),
            ("conv2.weight".into(), s.conv2_channels, s.conv1_channels * s.kernel_width, false),
            ("conv2.bias".into(), 1, s.conv2_channels, true),
        ];
        let mut fan_in = s.flatten_len();
        for (l, &w) in s.dense_widths.iter().enumerate() {
            shapes.push((format!("dense{l}.weight"), fan_in, w, false));
            shapes.push((format!("dense{l}.bias"), 1, w, true));
            fan_in = w;
        }
        shapes
    }

    fn forward(
        &self,
        params: &ExtractorParams,
        input: &[f64],
        rec: Option<&mut Recording>,
    ) -> Result<Vec<f64>> {
        let s = &self.spec;
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "CNN expects {}x{} window, got {} values",
                s.n_inputs,
                s.window,
                input.len()
            )));
        }
        let (w, k, p) = (s.window, s.kernel_width, s.pool_width);
        let lp = s.pooled_len();
        let b = &params.blocks;
        let z1 = conv1d(input, s.n_inputs, w, &b[0].data, &b[1].data, s.conv1_channels, k);
        let mut pooled = vec![0.0; s.conv1_channels * lp];
        let mut argmax = vec![0usize; s.conv1_channels * lp];
        for c in 0..s.conv1_channels {
            for t in 0..lp {
                let mut best = f64::NEG_INFINITY;
                let mut at = c * w + t * p;
                for j in t * p..t * p + p {
                    let v = z1[c * w + j].max(0.0);
                    if v > best {
                        best = v;
                        at = c * w + j;
                    }
                }
                pooled[c * lp + t] = best;
                argmax[c * lp + t] = at;
            }
        }
        let flat = conv1d(&pooled, s.conv1_channels, lp, &b[2].data, &b[3].data, s.conv2_channels, k);
        match rec {
            Some(r) => {
                r.reset();
                r.tape.push(input.to_vec());
                r.tape.push(z1);
                r.tape.push(pooled);
                r.indices = argmax;
                let mut dense_tape = Vec::new();
                let out = dense::forward(
                    params,
                    self.dense_start(),
                    s.dense_widths.len(),
                    Activation::Relu,
                    flat,
                    Some(&mut dense_tape),
                );
                r.tape.extend(dense_tape);
                Ok(out)
            }
            None => Ok(dense::forward(
                params,
                self.dense_start(),
                s.dense_widths.len(),
                Activation::Relu,
                flat,
                None,
            )),
        }
    }

    fn backward(
        &self,
        params: &ExtractorParams,
        rec: &Recording,
        upstream: &[f64],
        grads: &mut ExtractorParams,
    ) -> Result<Vec<f64>> {
        rec.require()?;
        let s = &self.spec;
        let layers = s.dense_widths.len();
        if upstream.len() != 3 || rec.tape.len() != 3 + 2 * layers {
            return Err(Error::Shape("CNN backward: upstream or tape size".into()));
        }
        let (w, k) = (s.window, s.kernel_width);
        let lp = s.pooled_len();
        let dflat = dense::backward(
            params,
            self.dense_start(),
            layers,
            Activation::Relu,
            &rec.tape[3..],
            upstream,
            grads,
        );
        let (input, z1, pooled) = (&rec.tape[0], &rec.tape[1], &rec.tape[2]);

        let (head, tail) = grads.blocks.split_at_mut(3);
        let dpooled = conv1d_backward(
            pooled,
            s.conv1_channels,
            lp,
            &params.blocks[2].data,
            s.conv2_channels,
            k,
            &dflat,
            &mut head[2].data,
            &mut tail[0].data,
        );
        let mut dz1 = vec![0.0; s.conv1_channels * w];
        for (g, &at) in dpooled.iter().zip(&rec.indices) {
            if z1[at] > 0.0 {
                dz1[at] += g;
            }
        }
        let (first, rest) = grads.blocks.split_at_mut(1);
        Ok(conv1d_backward(
            input,
            s.n_inputs,
            w,
            &params.blocks[0].data,
            s.conv1_channels,
            k,
            &dz1,
            &mut first[0].data,
            &mut rest[0].data,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractors::{Extractor, ExtractorSpec};

    #[test]
    fn standard_shapes() {
        let spec = CnnSpec::standard(8, 5);
        assert_eq!(spec.flatten_len(), 256);
        let e = Extractor::new(ExtractorSpec::Cnn(spec), 1).unwrap();
        assert_eq!(e.params.shapes()[4], (256, 100));
        assert_eq!(e.latent_dim(), 3);
        let out = e.forward(&[0.1; 40], None).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_latent() {
        let e = Extractor::new(ExtractorSpec::Cnn(CnnSpec::standard(3, 4)), 2).unwrap();
        assert_eq!(e.forward(&[0.0; 12], None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn width_one_unit_kernel_sums_channels() {
        let row = [0.5, -1.0, 2.0, 3.0];
        let channels = 3;
        let input: Vec<f64> = (0..channels).flat_map(|_| row).collect();
        let out = conv1d(&input, channels, 4, &[1.0; 3], &[0.0], 1, 1);
        let expected: Vec<f64> = row.iter().map(|v| v * channels as f64).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn same_padding_width_three() {
        // single channel, kernel [1, 2, 3]: out[t] = x[t-1] + 2 x[t] + 3 x[t+1]
        let out = conv1d(&[1.0, 10.0, 100.0], 1, 3, &[1.0, 2.0, 3.0], &[0.5], 1, 3);
        assert_eq!(out, vec![32.5, 321.5, 210.5]);
    }

    #[test]
    fn rejects_short_windows() {
        let mut s = CnnSpec::standard(2, 2);
        assert!(CnnNet::new(s.clone()).is_err());
        s.kernel_width = 1;
        assert!(CnnNet::new(s.clone()).is_ok());
        s.window = 1;
        assert!(CnnNet::new(s).is_err());
    }
}
