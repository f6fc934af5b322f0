use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::numcore::{l2_normalize, matmul, relu, Tape, Tensor, Var};

/// Guard used when normalizing embeddings.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// A fully connected ReLU network mapping `D_in` features to `d`-dimensional
/// embeddings. Hidden layers use ReLU; the last layer is linear and is
/// optionally followed by ℓ2 normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    sizes: Vec<usize>,
    /// `[w0, b0, w1, b1, ...]`, weights stored `[fan_in × fan_out]`.
    params: Vec<Tensor>,
    normalize_output: bool,
}

fn check_sizes(sizes: &[usize]) -> Result<(), EmbedError> {
    if sizes.len() < 2 {
        return Err(EmbedError::Architecture(
            "need at least an input and an output size".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(EmbedError::Architecture(format!(
            "layer sizes must be positive: {sizes:?}"
        )));
    }
    Ok(())
}

fn param_shapes(sizes: &[usize]) -> Vec<Vec<usize>> {
    sizes
        .windows(2)
        .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
        .collect()
}

impl EmbeddingModel {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization from `seed`.
    pub fn new(sizes: &[usize], normalize_output: bool, seed: u64) -> Result<Self, EmbedError> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(sizes, normalize_output)?;
        for layer in 0..model.num_layers() {
            // Biases share the bound of their layer's weights.
            let bound = 1.0 / (sizes[layer] as f64).sqrt();
            for p in [2 * layer, 2 * layer + 1] {
                for v in model.params[p].data_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(model)
    }

    /// All weights and biases zero.
    pub fn zeros(sizes: &[usize], normalize_output: bool) -> Result<Self, EmbedError> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: param_shapes(sizes).iter().map(|s| Tensor::zeros(s)).collect(),
            normalize_output,
        })
    }

    /// Builds a model from explicit `[w0, b0, w1, b1, ...]` parameters.
    pub fn from_params(
        sizes: &[usize],
        params: Vec<Tensor>,
        normalize_output: bool,
    ) -> Result<Self, EmbedError> {
        check_sizes(sizes)?;
        let shapes = param_shapes(sizes);
        if shapes.len() != params.len() {
            return Err(EmbedError::Architecture(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(EmbedError::Architecture(format!(
                    "parameter {i} has shape {:?}, expected {s:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            normalize_output,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn normalize_output(&self) -> bool {
        self.normalize_output
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    fn check_width(&self, width: usize) -> Result<(), EmbedError> {
        if width != self.input_dim() {
            return Err(EmbedError::InputWidth {
                expected: self.input_dim(),
                found: width,
            });
        }
        Ok(())
    }

    /// Embeds each row of `batch` (`[B × D_in]`).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, EmbedError> {
        let (_, width) = batch.require_matrix("forward")?;
        self.check_width(width)?;
        let mut h = batch.clone();
        for layer in 0..self.num_layers() {
            h = matmul(&h, &self.params[2 * layer])?;
            let bias = self.params[2 * layer + 1].data();
            let n = bias.len();
            for row in h.data_mut().chunks_mut(n) {
                row.iter_mut().zip(bias).for_each(|(r, b)| *r += b);
            }
            if layer + 1 < self.num_layers() {
                h = relu(&h);
            }
        }
        if self.normalize_output {
            h = l2_normalize(&h, NORMALIZE_EPS);
        }
        Ok(h)
    }

    /// Records the parameters on `tape` as tracked leaves.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Differentiable forward pass using parameters bound by [`Self::bind`].
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
    ) -> Result<Var, EmbedError> {
        let (_, width) = tape.value(x).require_matrix("forward")?;
        self.check_width(width)?;
        let mut h = x;
        for layer in 0..self.num_layers() {
            h = tape.matmul(h, params[2 * layer])?;
            h = tape.add_bias(h, params[2 * layer + 1])?;
            if layer + 1 < self.num_layers() {
                h = tape.relu(h);
            }
        }
        if self.normalize_output {
            h = tape.normalize_rows(h, NORMALIZE_EPS);
        }
        Ok(h)
    }

    /// Order-sensitive digest of every parameter bit, for reproducibility checks.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the raw bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_zeros() {
        let m = EmbeddingModel::zeros(&[3, 4, 2], false).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = EmbeddingModel::from_params(
            &[3, 3],
            vec![Tensor::identity(3), Tensor::zeros(&[3])],
            false,
        )
        .unwrap();
        let x = Tensor::matrix(1, 3, vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = EmbeddingModel::new(&[4, 8, 2], true, 0).unwrap();
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            m.forward(&x),
            Err(EmbedError::InputWidth {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = EmbeddingModel::new(&[16, 64, 32], true, 7).unwrap();
        let b0 = 1.0 / 16f64.sqrt();
        let b1 = 1.0 / 64f64.sqrt();
        assert!(m.params()[0].data().iter().all(|v| v.abs() <= b0));
        assert!(m.params()[1].data().iter().all(|v| v.abs() <= b0));
        assert!(m.params()[2].data().iter().all(|v| v.abs() <= b1));
        assert_eq!(m.num_parameters(), 16 * 64 + 64 + 64 * 32 + 32);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let m = EmbeddingModel::new(&[5, 7, 3], true, 3).unwrap();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = m.forward_on_tape(&mut tape, &vars, xv).unwrap();
        let plain = m.forward(&x).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
