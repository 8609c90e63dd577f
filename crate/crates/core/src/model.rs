//! Network topology description and directly-encoded population parameters.
//!
//! The architecture is fixed: images are 2×2 max-pooled, flattened, then fed
//! through fully connected layers with ReLU between them and a softmax after
//! the last. A population stores one parameter tensor per layer with the
//! population as the slowest axis, so evaluating all individuals is a single
//! batched computation.

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{maxpool2x2, pop_linear, pop_linear_shared, relu, softmax, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input height {0} and width {1} must be even (2×2 pooling)")]
    OddInput(usize, usize),
    #[error("layer_units must list at least one layer")]
    NoLayers,
    #[error("layer {index} has zero units")]
    ZeroUnits { index: usize },
    #[error("individual index {index} out of range for population of {population}")]
    IndexOutOfRange { index: usize, population: usize },
    #[error("genome has {actual} values, spec requires {expected}")]
    GenomeLength { expected: usize, actual: usize },
    #[error("images shaped {actual:?} do not match spec input {expected:?}")]
    ImageShape {
        expected: (usize, usize),
        actual: Vec<usize>,
    },
    #[error("population must have at least one individual")]
    EmptyPopulation,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Fixed feed-forward topology: pooled image input and a stack of fully
/// connected layers, the last of which is the class layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input_hw: (usize, usize),
    pool: usize,
    layer_units: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_hw: (usize, usize), layer_units: Vec<usize>) -> Result<Self, ModelError> {
        if input_hw.0 == 0 || input_hw.0 % 2 != 0 || input_hw.1 == 0 || input_hw.1 % 2 != 0 {
            return Err(ModelError::OddInput(input_hw.0, input_hw.1));
        }
        if layer_units.is_empty() {
            return Err(ModelError::NoLayers);
        }
        if let Some(index) = layer_units.iter().position(|&u| u == 0) {
            return Err(ModelError::ZeroUnits { index });
        }
        Ok(Self {
            input_hw,
            pool: 2,
            layer_units,
        })
    }

    /// 28×28 digit images through 256-128-64-10 fully connected layers.
    pub fn mnist() -> Self {
        Self::new((28, 28), vec![256, 128, 64, 10]).expect("static spec is valid")
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    pub fn pooled_hw(&self) -> (usize, usize) {
        (self.input_hw.0 / self.pool, self.input_hw.1 / self.pool)
    }

    /// Flattened input dimension after pooling.
    pub fn input_dim(&self) -> usize {
        let (h, w) = self.pooled_hw();
        h * w
    }

    pub fn layer_units(&self) -> &[usize] {
        &self.layer_units
    }

    pub fn num_layers(&self) -> usize {
        self.layer_units.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_units.last().unwrap()
    }

    /// Per-layer `(fan_out, fan_in)` pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layer_units.len());
        let mut fan_in = self.input_dim();
        for &fan_out in &self.layer_units {
            shapes.push((fan_out, fan_in));
            fan_in = fan_out;
        }
        shapes
    }

    /// Total number of parameters (weights plus biases) per individual.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(out, inp)| out * inp + out)
            .sum()
    }

    /// Flat-genome offsets: per layer `(weight_offset, bias_offset)` in the
    /// layout `[w0, b0, w1, b1, ...]` with row-major weights.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.layer_units.len());
        let mut at = 0;
        for (out, inp) in self.layer_shapes() {
            offsets.push((at, at + out * inp));
            at += out * inp + out;
        }
        offsets
    }
}

/// Parameters of a whole population, one tensor per layer with shapes
/// `[p, fan_out, fan_in]` (weights) and `[p, fan_out]` (biases). Strategy
/// parameters (one mutation strength per individual) ride along when
/// self-adaptation is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationParams<F> {
    spec: NetworkSpec,
    weights: Vec<Tensor<F>>,
    biases: Vec<Tensor<F>>,
    sigma_genes: Option<Vec<F>>,
}

impl<F: Scalar> PopulationParams<F> {
    /// All-zero parameters (test and scratch construction).
    pub fn zeros(spec: NetworkSpec, population: usize) -> Result<Self, ModelError> {
        if population == 0 {
            return Err(ModelError::EmptyPopulation);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (out, inp) in spec.layer_shapes() {
            weights.push(Tensor::zeros(vec![population, out, inp]));
            biases.push(Tensor::zeros(vec![population, out]));
        }
        Ok(Self {
            spec,
            weights,
            biases,
            sigma_genes: None,
        })
    }

    /// Glorot-uniform weights — each layer drawn from `U[-L, L]` with
    /// `L = sqrt(6 / (fan_in + fan_out))` — and zero biases. Draw order is
    /// fixed (layer by layer, individual by individual, row-major) so one
    /// seed reproduces one population exactly.
    pub fn glorot_uniform_init<R: Rng + ?Sized>(
        spec: NetworkSpec,
        population: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut out = Self::zeros(spec, population)?;
        for (tensor, (fan_out, fan_in)) in out.weights.iter_mut().zip(out.spec.layer_shapes()) {
            let limit = F::cast((6.0 / (fan_in + fan_out) as f64).sqrt());
            for v in tensor.data_mut() {
                *v = F::uniform(rng, -limit, limit);
            }
        }
        Ok(out)
    }

    /// Builds a single-individual population from one flat genome.
    pub fn from_genome(spec: NetworkSpec, genome: &[F]) -> Result<Self, ModelError> {
        let mut out = Self::zeros(spec, 1)?;
        out.unflatten_into(0, genome)?;
        Ok(out)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn population_size(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn weights(&self, layer: usize) -> &Tensor<F> {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &Tensor<F> {
        &self.biases[layer]
    }

    pub fn sigma_genes(&self) -> Option<&[F]> {
        self.sigma_genes.as_deref()
    }

    /// Attaches one mutation-strength gene per individual, all set to `sigma`.
    pub fn set_uniform_sigma_genes(&mut self, sigma: F) {
        self.sigma_genes = Some(vec![sigma; self.population_size()]);
    }

    pub fn set_sigma_gene(&mut self, index: usize, sigma: F) -> Result<(), ModelError> {
        let population = self.population_size();
        match self.sigma_genes.as_mut() {
            Some(genes) if index < population => {
                genes[index] = sigma;
                Ok(())
            }
            Some(_) => Err(ModelError::IndexOutOfRange { index, population }),
            None => Err(ModelError::GenomeLength {
                expected: 0,
                actual: 1,
            }),
        }
    }

    /// Evaluates every individual on one shared image batch `[b, h, w]`,
    /// returning class probabilities `[p, b, classes]`.
    pub fn forward(&self, images: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        if images.rank() != 3
            || images.shape()[1] != self.spec.input_hw.0
            || images.shape()[2] != self.spec.input_hw.1
        {
            return Err(ModelError::ImageShape {
                expected: self.spec.input_hw,
                actual: images.shape().to_vec(),
            });
        }
        let b = images.shape()[0];
        let pooled = maxpool2x2(images)?;
        let flat = pooled.reshape(vec![b, self.spec.input_dim()])?;

        let layers = self.spec.num_layers();
        let mut x = pop_linear_shared(&self.weights[0], &self.biases[0], &flat)?;
        if layers > 1 {
            x = relu(&x);
        }
        for l in 1..layers {
            x = pop_linear(&self.weights[l], &self.biases[l], &x)?;
            if l + 1 < layers {
                x = relu(&x);
            }
        }
        Ok(softmax(&x)?)
    }

    /// Copies individual `k` into a flat genome: layers in order, each as
    /// row-major weights followed by biases.
    pub fn flatten(&self, k: usize) -> Result<Vec<F>, ModelError> {
        let population = self.population_size();
        if k >= population {
            return Err(ModelError::IndexOutOfRange {
                index: k,
                population,
            });
        }
        let mut genome = Vec::with_capacity(self.spec.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let w_stride = w.shape()[1] * w.shape()[2];
            genome.extend_from_slice(&w.data()[k * w_stride..(k + 1) * w_stride]);
            let b_stride = b.shape()[1];
            genome.extend_from_slice(&b.data()[k * b_stride..(k + 1) * b_stride]);
        }
        Ok(genome)
    }

    /// Writes a flat genome into individual `k` (inverse of [`Self::flatten`]).
    pub fn unflatten_into(&mut self, k: usize, genome: &[F]) -> Result<(), ModelError> {
        let population = self.population_size();
        if k >= population {
            return Err(ModelError::IndexOutOfRange {
                index: k,
                population,
            });
        }
        let expected = self.spec.param_count();
        if genome.len() != expected {
            return Err(ModelError::GenomeLength {
                expected,
                actual: genome.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let w_stride = w.shape()[1] * w.shape()[2];
            w.data_mut()[k * w_stride..(k + 1) * w_stride]
                .copy_from_slice(&genome[at..at + w_stride]);
            at += w_stride;
            let b_stride = b.shape()[1];
            b.data_mut()[k * b_stride..(k + 1) * b_stride]
                .copy_from_slice(&genome[at..at + b_stride]);
            at += b_stride;
        }
        Ok(())
    }

    /// Copies individual `src_k` of `source` into slot `dst_k` of `self`
    /// bit-for-bit (used for elites). Both populations must share a spec.
    pub fn copy_individual_from(
        &mut self,
        dst_k: usize,
        source: &Self,
        src_k: usize,
    ) -> Result<(), ModelError> {
        if self.spec != source.spec {
            return Err(ModelError::GenomeLength {
                expected: self.spec.param_count(),
                actual: source.spec.param_count(),
            });
        }
        let population = self.population_size();
        if dst_k >= population {
            return Err(ModelError::IndexOutOfRange {
                index: dst_k,
                population,
            });
        }
        if src_k >= source.population_size() {
            return Err(ModelError::IndexOutOfRange {
                index: src_k,
                population: source.population_size(),
            });
        }
        for (dst, src) in self.weights.iter_mut().zip(&source.weights) {
            let stride = dst.shape()[1] * dst.shape()[2];
            dst.data_mut()[dst_k * stride..(dst_k + 1) * stride]
                .copy_from_slice(&src.data()[src_k * stride..(src_k + 1) * stride]);
        }
        for (dst, src) in self.biases.iter_mut().zip(&source.biases) {
            let stride = dst.shape()[1];
            dst.data_mut()[dst_k * stride..(dst_k + 1) * stride]
                .copy_from_slice(&src.data()[src_k * stride..(src_k + 1) * stride]);
        }
        if let (Some(dst), Some(src)) = (self.sigma_genes.as_mut(), source.sigma_genes.as_deref()) {
            dst[dst_k] = src[src_k];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::new((4, 4), vec![5, 3, 2]).unwrap()
    }

    #[test]
    fn mnist_spec_has_expected_param_count() {
        let spec = NetworkSpec::mnist();
        assert_eq!(spec.input_dim(), 196);
        assert_eq!(
            spec.param_count(),
            196 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10
        );
        assert_eq!(spec.param_count(), 92_234);
    }

    #[test]
    fn tiny_spec_param_count() {
        assert_eq!(tiny_spec().param_count(), 4 * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(tiny_spec().param_count(), 51);
    }

    #[test]
    fn spec_rejects_invalid_shapes() {
        assert!(matches!(
            NetworkSpec::new((3, 4), vec![2]),
            Err(ModelError::OddInput(3, 4))
        ));
        assert!(matches!(
            NetworkSpec::new((4, 4), vec![]),
            Err(ModelError::NoLayers)
        ));
        assert!(matches!(
            NetworkSpec::new((4, 4), vec![3, 0]),
            Err(ModelError::ZeroUnits { index: 1 })
        ));
    }

    #[test]
    fn glorot_init_respects_layer_limits_and_zero_biases() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = PopulationParams::<f32>::glorot_uniform_init(spec.clone(), 6, &mut rng).unwrap();
        for (layer, (fan_out, fan_in)) in spec.layer_shapes().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            assert!(params
                .weights(layer)
                .data()
                .iter()
                .all(|&w| w.abs() <= limit));
            assert!(params.biases(layer).data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn glorot_init_is_seed_deterministic() {
        let spec = tiny_spec();
        let mut a_rng = ChaCha8Rng::seed_from_u64(9);
        let mut b_rng = ChaCha8Rng::seed_from_u64(9);
        let a = PopulationParams::<f32>::glorot_uniform_init(spec.clone(), 3, &mut a_rng).unwrap();
        let b = PopulationParams::<f32>::glorot_uniform_init(spec, 3, &mut b_rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = PopulationParams::<f32>::glorot_uniform_init(spec.clone(), 4, &mut rng).unwrap();
        for k in 0..4 {
            let genome = params.flatten(k).unwrap();
            assert_eq!(genome.len(), spec.param_count());
            let rebuilt = PopulationParams::from_genome(spec.clone(), &genome).unwrap();
            assert_eq!(rebuilt.flatten(0).unwrap(), genome);
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let spec = tiny_spec();
        let mut params = PopulationParams::<f32>::zeros(spec, 1).unwrap();
        let err = params.unflatten_into(0, &vec![0.0; 50]).unwrap_err();
        assert!(matches!(
            err,
            ModelError::GenomeLength {
                expected: 51,
                actual: 50
            }
        ));
    }

    #[test]
    fn forward_output_shape_and_rows_sum_to_one() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PopulationParams::<f32>::glorot_uniform_init(spec, 7, &mut rng).unwrap();
        let images = Tensor::from_fn(vec![5, 4, 4], |i| (i % 9) as f32 / 9.0);
        let probs = params.forward(&images).unwrap();
        assert_eq!(probs.shape(), &[7, 5, 2]);
        for row in probs.data().chunks(2) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v.is_finite() && v >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_image_shape() {
        let params = PopulationParams::<f32>::zeros(tiny_spec(), 2).unwrap();
        let images = Tensor::zeros(vec![5, 6, 4]);
        assert!(matches!(
            params.forward(&images).unwrap_err(),
            ModelError::ImageShape { .. }
        ));
    }

    #[test]
    fn zero_params_give_uniform_class_probabilities() {
        let params = PopulationParams::<f32>::zeros(tiny_spec(), 2).unwrap();
        let images = Tensor::from_fn(vec![3, 4, 4], |i| i as f32 / 48.0);
        let probs = params.forward(&images).unwrap();
        for &v in probs.data() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn copy_individual_is_bit_exact() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = PopulationParams::<f32>::glorot_uniform_init(spec.clone(), 3, &mut rng).unwrap();
        let mut dst = PopulationParams::<f32>::zeros(spec, 2).unwrap();
        dst.copy_individual_from(1, &src, 2).unwrap();
        assert_eq!(dst.flatten(1).unwrap(), src.flatten(2).unwrap());
        assert!(dst.flatten(0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_offsets_match_flatten_layout() {
        let spec = tiny_spec();
        let offsets = spec.layer_offsets();
        assert_eq!(offsets, vec![(0, 20), (25, 40), (43, 49)]);
        // Mark one bias and find it at the predicted offset.
        let mut params = PopulationParams::<f32>::zeros(spec.clone(), 1).unwrap();
        let mut genome = vec![0.0f32; spec.param_count()];
        genome[offsets[1].1] = 7.5; // first bias of layer 1
        params.unflatten_into(0, &genome).unwrap();
        assert_eq!(params.biases(1).data()[0], 7.5);
    }
}
