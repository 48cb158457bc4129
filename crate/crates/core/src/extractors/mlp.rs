use serde::{Deserialize, Serialize};

use super::{dense, Activation, ExtractorParams, FeatureMap, Recording};
use crate::error::{Error, Result};

/// Multilayer perceptron on the flattened window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Output width of each layer; the last entry is the latent dimension.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    /// Flatten → 64 → 32 → 3 with ReLU, the baseline deep-kernel network.
    pub fn baseline(input_dim: usize) -> Self {
        Self {
            input_dim,
            layer_widths: vec![64, 32, 3],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpNet {
    spec: MlpSpec,
}

impl MlpNet {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.layer_widths.is_empty() {
            return Err(Error::InvalidSpec("MLP needs at least one layer".into()));
        }
        if spec.input_dim == 0 || spec.layer_widths.contains(&0) {
            return Err(Error::InvalidSpec("MLP widths must be positive".into()));
        }
        Ok(Self { spec })
    }
}

impl FeatureMap for MlpNet {
    fn input_len(&self) -> usize {
        self.spec.input_dim
    }

    fn latent_dim(&self) -> usize {
        *self.spec.layer_widths.last().expect("validated")
    }

    fn param_shapes(&self) -> Vec<(String, usize, usize, bool)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.spec.input_dim;
        for (l, &w) in self.spec.layer_widths.iter().enumerate() {
            shapes.push((format!("layer{l}.weight"), fan_in, w, false));
            shapes.push((format!("layer{l}.bias"), 1, w, true));
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
        if input.len() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "MLP expects input length {}, got {}",
                self.spec.input_dim,
                input.len()
            )));
        }
        let tape = rec.map(|r| {
            r.reset();
            &mut r.tape
        });
        Ok(dense::forward(
            params,
            0,
            self.spec.layer_widths.len(),
            self.spec.activation,
            input.to_vec(),
            tape,
        ))
    }

    fn backward(
        &self,
        params: &ExtractorParams,
        rec: &Recording,
        upstream: &[f64],
        grads: &mut ExtractorParams,
    ) -> Result<Vec<f64>> {
        rec.require()?;
        let layers = self.spec.layer_widths.len();
        if upstream.len() != self.latent_dim() || rec.tape.len() != 2 * layers {
            return Err(Error::Shape("MLP backward: upstream or tape size".into()));
        }
        Ok(dense::backward(
            params,
            0,
            layers,
            self.spec.activation,
            &rec.tape,
            upstream,
            grads,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractors::{init_params, Extractor, ExtractorSpec};

    fn spec(input_dim: usize, widths: &[usize], activation: Activation) -> ExtractorSpec {
        ExtractorSpec::Mlp(MlpSpec {
            input_dim,
            layer_widths: widths.to_vec(),
            activation,
        })
    }

    #[test]
    fn init_shapes_and_determinism() {
        let s = spec(4, &[3], Activation::Relu);
        let p = init_params(&s, 11).unwrap();
        assert_eq!(p.shapes(), vec![(4, 3), (1, 3)]);
        assert!(p.blocks[1].data.iter().all(|&b| b == 0.0));
        assert_eq!(p, init_params(&s, 11).unwrap());
        assert_ne!(p, init_params(&s, 12).unwrap());
    }

    #[test]
    fn zero_params_give_zero_latent() {
        let mut e = Extractor::new(spec(4, &[5, 3], Activation::Tanh), 0).unwrap();
        e.params = e.params.zeros_like();
        assert_eq!(e.forward(&[1.0, -2.0, 3.0, 0.5], None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut e = Extractor::new(spec(3, &[3], Activation::Relu), 0).unwrap();
        e.params.blocks[0].data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        e.params.blocks[1].data = vec![0.0; 3];
        let x = [0.3, -1.5, 2.0];
        assert_eq!(e.forward(&x, None).unwrap(), x.to_vec());
    }

    #[test]
    fn small_net_matches_hand_composition() {
        // 2 -> 2 -> 1 with ReLU
        let mut e = Extractor::new(spec(2, &[2, 1], Activation::Relu), 0).unwrap();
        e.params.blocks[0].data = vec![0.5, -1.0, 2.0, 0.25];
        e.params.blocks[1].data = vec![0.1, -0.2];
        e.params.blocks[2].data = vec![1.5, -3.0];
        e.params.blocks[3].data = vec![0.7];
        let x = [1.0, 2.0];
        // hidden pre-activations: [0.5 + 4 + 0.1, -1 + 0.5 - 0.2] = [4.6, -0.7]
        // relu: [4.6, 0]; output = 1.5 * 4.6 + 0.7 = 7.6
        let out = e.forward(&x, None).unwrap();
        assert!((out[0] - 7.6).abs() < 1e-14);
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let e = Extractor::new(spec(3, &[2], Activation::Relu), 4).unwrap();
        let x = [0.2, -1.0, 0.7];
        let g = [1.5, -0.5];
        let mut rec = Recording::new();
        e.forward(&x, Some(&mut rec)).unwrap();
        let (grads, dx) = e.param_gradients(&rec, &g).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                assert_eq!(grads.blocks[0].data[i * 2 + k], x[i] * g[k]);
            }
        }
        assert_eq!(grads.blocks[1].data, g.to_vec());
        let w = &e.params.blocks[0].data;
        for i in 0..3 {
            assert!((dx[i] - (w[2 * i] * g[0] + w[2 * i + 1] * g[1])).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let mut e = Extractor::new(spec(1, &[1, 1], Activation::Relu), 0).unwrap();
        e.params.blocks[0].data = vec![-1.0];
        e.params.blocks[2].data = vec![2.0];
        let mut rec = Recording::new();
        e.forward(&[3.0], Some(&mut rec)).unwrap();
        let (grads, dx) = e.param_gradients(&rec, &[1.0]).unwrap();
        assert_eq!(grads.blocks[0].data, vec![0.0]);
        assert_eq!(dx, vec![0.0]);
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        assert!(MlpNet::new(MlpSpec {
            input_dim: 2,
            layer_widths: vec![],
            activation: Activation::Relu
        })
        .is_err());
        assert!(MlpNet::new(MlpSpec {
            input_dim: 2,
            layer_widths: vec![3, 0],
            activation: Activation::Relu
        })
        .is_err());
        let e = Extractor::new(spec(2, &[1], Activation::Relu), 0).unwrap();
        assert!(matches!(e.forward(&[1.0], None), Err(Error::Shape(_))));
    }
}
