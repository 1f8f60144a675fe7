use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{Mlp, MlpSpec};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Architecture dimensions needed to lay out [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelLayout {
    pub node_in: usize,
    pub edge_in: usize,
    pub out: usize,
    pub hidden: usize,
    pub mp_layers: usize,
    pub mlp_hidden_layers: usize,
}

impl ModelLayout {
    pub fn node_encoder(&self) -> MlpSpec {
        MlpSpec::new(self.node_in, self.hidden, self.hidden, self.mlp_hidden_layers)
    }

    pub fn edge_encoder(&self) -> MlpSpec {
        MlpSpec::new(self.edge_in, self.hidden, self.hidden, self.mlp_hidden_layers)
    }

    /// Edge update input is `[x_i, x_j, e_ij]`.
    pub fn edge_update(&self) -> MlpSpec {
        MlpSpec::new(3 * self.hidden, self.hidden, self.hidden, self.mlp_hidden_layers)
    }

    /// Node update input is `[a*_i, x_i]`.
    pub fn node_update(&self) -> MlpSpec {
        MlpSpec::new(2 * self.hidden, self.hidden, self.hidden, self.mlp_hidden_layers)
    }

    pub fn decoder(&self) -> MlpSpec {
        MlpSpec::new(self.hidden, self.out, self.hidden, self.mlp_hidden_layers)
    }

    pub fn param_count(&self) -> usize {
        self.node_encoder().param_count()
            + self.edge_encoder().param_count()
            + self.mp_layers * (self.edge_update().param_count() + self.node_update().param_count())
            + self.decoder().param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassingParams {
    pub edge_mlp: Mlp,
    pub node_mlp: Mlp,
}

/// Every trainable tensor of the encode-process-decode model.
///
/// Gradients use the same type; see [`ModelParams::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub processor: Vec<MessagePassingParams>,
    pub decoder: Mlp,
}

pub type Gradients = ModelParams;

impl ModelParams {
    /// Seeded Glorot initialization. Tensors are drawn in declaration order
    /// from one ChaCha8 stream, so equal seeds give bitwise equal models.
    pub fn init(layout: ModelLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let node_encoder = Mlp::init(layout.node_encoder(), &mut rng);
        let edge_encoder = Mlp::init(layout.edge_encoder(), &mut rng);
        let processor = (0..layout.mp_layers)
            .map(|_| MessagePassingParams {
                edge_mlp: Mlp::init(layout.edge_update(), &mut rng),
                node_mlp: Mlp::init(layout.node_update(), &mut rng),
            })
            .collect();
        let decoder = Mlp::init(layout.decoder(), &mut rng);
        Self {
            layout,
            node_encoder,
            edge_encoder,
            processor,
            decoder,
        }
    }

    pub fn zeros(layout: ModelLayout) -> Self {
        Self {
            layout,
            node_encoder: Mlp::zeros(layout.node_encoder()),
            edge_encoder: Mlp::zeros(layout.edge_encoder()),
            processor: (0..layout.mp_layers)
                .map(|_| MessagePassingParams {
                    edge_mlp: Mlp::zeros(layout.edge_update()),
                    node_mlp: Mlp::zeros(layout.node_update()),
                })
                .collect(),
            decoder: Mlp::zeros(layout.decoder()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout)
    }

    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor2D)) {
        self.node_encoder
            .for_each_tensor(|n, t| f(format!("node_encoder.{n}"), t));
        self.edge_encoder
            .for_each_tensor(|n, t| f(format!("edge_encoder.{n}"), t));
        for (m, layer) in self.processor.iter().enumerate() {
            layer
                .edge_mlp
                .for_each_tensor(|n, t| f(format!("processor.{m}.edge_mlp.{n}"), t));
            layer
                .node_mlp
                .for_each_tensor(|n, t| f(format!("processor.{m}.node_mlp.{n}"), t));
        }
        self.decoder.for_each_tensor(|n, t| f(format!("decoder.{n}"), t));
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, &mut Tensor2D)) {
        self.node_encoder
            .for_each_tensor_mut(|n, t| f(format!("node_encoder.{n}"), t));
        self.edge_encoder
            .for_each_tensor_mut(|n, t| f(format!("edge_encoder.{n}"), t));
        for (m, layer) in self.processor.iter_mut().enumerate() {
            layer
                .edge_mlp
                .for_each_tensor_mut(|n, t| f(format!("processor.{m}.edge_mlp.{n}"), t));
            layer
                .node_mlp
                .for_each_tensor_mut(|n, t| f(format!("processor.{m}.node_mlp.{n}"), t));
        }
        self.decoder
            .for_each_tensor_mut(|n, t| f(format!("decoder.{n}"), t));
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out = Vec::new();
        self.for_each_tensor(|n, t| out.push((n, t)));
        out
    }

    /// All values concatenated in visiting order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(|_, t| out.extend_from_slice(&t.data));
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::shape("ModelParams::load_flat", n, flat.len()));
        }
        let mut off = 0;
        self.for_each_tensor_mut(|_, t| {
            let len = t.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        });
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.len());
        n
    }
}

/// Total number of trainable scalars.
pub fn param_count(params: &ModelParams) -> usize {
    params.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelLayout {
        ModelLayout {
            node_in: 3,
            edge_in: 7,
            out: 3,
            hidden: 8,
            mp_layers: 4,
            mlp_hidden_layers: 2,
        }
    }

    #[test]
    fn count_matches_layout_formula() {
        let p = ModelParams::init(small(), 0);
        assert_eq!(p.param_count(), small().param_count());
        assert_eq!(p.flatten().len(), p.param_count());
    }

    #[test]
    fn seeded_init_is_bitwise_reproducible() {
        let a = ModelParams::init(small(), 42).flatten();
        let b = ModelParams::init(small(), 42).flatten();
        let c = ModelParams::init(small(), 43).flatten();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, c);
    }

    #[test]
    fn flat_round_trip() {
        let p = ModelParams::init(small(), 1);
        let mut q = p.zeros_like();
        q.load_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.load_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn names_are_unique() {
        let p = ModelParams::init(small(), 0);
        let names: Vec<_> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"processor.3.node_mlp.norm2.gamma".to_string()));
    }
}
