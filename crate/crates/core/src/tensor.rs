//! Dense row-major tensors with an explicit population axis, plus the small
//! set of kernels needed to evaluate a whole population of networks as one
//! batched computation.
//!
//! Shape conventions (slowest axis first):
//! * weights `[p, n, m]` — population, output units, input units
//! * biases  `[p, n]`
//! * activations `[p, b, n]` — population, batch, units
//! * images `[b, h, w]`
//!
//! Every kernel uses a fixed summation order that does not depend on the
//! number of worker threads, so results are bit-identical across thread
//! counts. Parallelism only ever splits work across independent output
//! cells.

use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("{op}: shape {shape:?} implies {expected} elements, data has {actual}")]
    ShapeDataMismatch {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: shape {shape:?} overflows the addressable element count")]
    ShapeOverflow { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {axis} axis mismatch: {left} vs {right}")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: {axis} extent {extent} is not divisible by 2")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },
    #[error("{op}: {axis} extent must be non-zero")]
    EmptyAxis { op: &'static str, axis: &'static str },
}

/// Dense row-major tensor. The shape never changes after construction except
/// through [`Tensor::reshape`], which preserves the element count.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

fn element_count(op: &'static str, shape: &[usize]) -> Result<usize, TensorError> {
    let mut n: usize = 1;
    for &extent in shape {
        n = n.checked_mul(extent).ok_or(TensorError::ShapeOverflow {
            op,
            shape: shape.to_vec(),
        })?;
    }
    Ok(n)
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let expected = element_count("new", &shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                op: "new",
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count("zeros", &shape).expect("shape overflow");
        Self {
            shape,
            data: vec![F::zero(); n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> F) -> Self {
        let n = element_count("from_fn", &shape).expect("shape overflow");
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Element at a full multi-index (row-major).
    pub fn at(&self, index: &[usize]) -> F {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (axis, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < extent, "index {i} out of range on axis {axis}");
            flat = flat * extent + i;
        }
        self.data[flat]
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected = element_count("reshape", &shape)?;
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                op: "reshape",
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }
}

/// Lane count of the fixed chunked reduction used by every dot product.
/// The accumulation order depends only on the vector length, never on the
/// thread count, which keeps results bit-identical across parallel runs.
const LANES: usize = 8;

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let off = c * LANES;
        for l in 0..LANES {
            acc[l] = acc[l] + a[off + l] * b[off + l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * LANES..a.len() {
        tail = tail + a[i] * b[i];
    }
    let head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    head + tail
}

/// Work size (in multiply-adds) below which kernels stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 15;

/// Batched affine map for a population of layers:
/// `out[k, i, j] = biases[k, j] + Σ_l weights[k, j, l] · input[k, i, l]`
/// with shapes weights `[p, n, m]`, biases `[p, n]`, input `[p, b, m]`,
/// output `[p, b, n]`.
pub fn pop_linear<F: Scalar>(
    weights: &Tensor<F>,
    biases: &Tensor<F>,
    input: &Tensor<F>,
) -> Result<Tensor<F>, TensorError> {
    const OP: &str = "pop_linear";
    check_rank(OP, weights, 3)?;
    check_rank(OP, biases, 2)?;
    check_rank(OP, input, 3)?;
    let (p, n, m) = (weights.shape[0], weights.shape[1], weights.shape[2]);
    check_axis(OP, "population", p, biases.shape[0])?;
    check_axis(OP, "population", p, input.shape[0])?;
    check_axis(OP, "output-unit", n, biases.shape[1])?;
    check_axis(OP, "input-unit", m, input.shape[2])?;
    let b = input.shape[1];
    pop_linear_impl(weights, biases, input.data(), b * m, p, b, n, m)
}

/// Same as [`pop_linear`] but with one input batch `[b, m]` logically
/// broadcast to every individual, avoiding a `p`-fold copy of the input.
pub fn pop_linear_shared<F: Scalar>(
    weights: &Tensor<F>,
    biases: &Tensor<F>,
    input: &Tensor<F>,
) -> Result<Tensor<F>, TensorError> {
    const OP: &str = "pop_linear_shared";
    check_rank(OP, weights, 3)?;
    check_rank(OP, biases, 2)?;
    check_rank(OP, input, 2)?;
    let (p, n, m) = (weights.shape[0], weights.shape[1], weights.shape[2]);
    check_axis(OP, "population", p, biases.shape[0])?;
    check_axis(OP, "output-unit", n, biases.shape[1])?;
    check_axis(OP, "input-unit", m, input.shape[1])?;
    let b = input.shape[0];
    pop_linear_impl(weights, biases, input.data(), 0, p, b, n, m)
}

/// Shared core: `input_pop_stride` is `b * m` when the input carries its own
/// population axis and `0` when one batch is broadcast to all individuals.
#[allow(clippy::too_many_arguments)]
fn pop_linear_impl<F: Scalar>(
    weights: &Tensor<F>,
    biases: &Tensor<F>,
    input: &[F],
    input_pop_stride: usize,
    p: usize,
    b: usize,
    n: usize,
    m: usize,
) -> Result<Tensor<F>, TensorError> {
    let mut out = Tensor::zeros(vec![p, b, n]);
    let w = weights.data();
    let bias = biases.data();

    let cell = |out_row: &mut [F], k: usize, i: usize| {
        let wk = &w[k * n * m..(k + 1) * n * m];
        let bk = &bias[k * n..(k + 1) * n];
        let x = &input[k * input_pop_stride + i * m..k * input_pop_stride + i * m + m];
        for j in 0..n {
            out_row[j] = bk[j] + dot(&wk[j * m..(j + 1) * m], x);
        }
    };

    if p * b * n * m >= PAR_THRESHOLD {
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out_row)| cell(out_row, row / b, row % b));
    } else {
        for (row, out_row) in out.data.chunks_mut(n).enumerate() {
            cell(out_row, row / b, row % b);
        }
    }
    Ok(out)
}

/// Elementwise `max(0, x)`.
pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect(),
    }
}

/// 2×2 max pooling with stride 2 over `[b, h, w]` images.
pub fn maxpool2x2<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    const OP: &str = "maxpool2x2";
    check_rank(OP, x, 3)?;
    let (b, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    if h % 2 != 0 {
        return Err(TensorError::OddExtent {
            op: OP,
            axis: "height",
            extent: h,
        });
    }
    if w % 2 != 0 {
        return Err(TensorError::OddExtent {
            op: OP,
            axis: "width",
            extent: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, oh, ow]);
    for img in 0..b {
        let src = &x.data[img * h * w..(img + 1) * h * w];
        let dst = &mut out.data[img * oh * ow..(img + 1) * oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let tl = src[(2 * r) * w + 2 * c];
                let tr = src[(2 * r) * w + 2 * c + 1];
                let bl = src[(2 * r + 1) * w + 2 * c];
                let br = src[(2 * r + 1) * w + 2 * c + 1];
                dst[r * ow + c] = tl.max(tr).max(bl).max(br);
            }
        }
    }
    Ok(out)
}

/// Softmax over the last axis, computed with the max-subtraction trick so
/// large logits cannot overflow.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    const OP: &str = "softmax";
    if x.rank() == 0 || *x.shape.last().unwrap() == 0 {
        return Err(TensorError::EmptyAxis {
            op: OP,
            axis: "class",
        });
    }
    let d = *x.shape.last().unwrap();
    let mut out = Tensor {
        shape: x.shape.clone(),
        data: x.data.clone(),
    };
    for row in out.data.chunks_mut(d) {
        let mut max = row[0];
        for &v in row.iter().skip(1) {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

fn check_rank<F: Scalar>(
    op: &'static str,
    t: &Tensor<F>,
    expected: usize,
) -> Result<(), TensorError> {
    if t.rank() != expected {
        return Err(TensorError::Rank {
            op,
            expected,
            shape: t.shape.clone(),
        });
    }
    Ok(())
}

fn check_axis(
    op: &'static str,
    axis: &'static str,
    left: usize,
    right: usize,
) -> Result<(), TensorError> {
    if left != right {
        return Err(TensorError::AxisMismatch {
            op,
            axis,
            left,
            right,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t<F: Scalar>(shape: &[usize], data: &[f64]) -> Tensor<F> {
        Tensor::new(shape.to_vec(), data.iter().map(|&v| F::cast(v)).collect()).unwrap()
    }

    #[test]
    fn new_rejects_mismatched_data_length() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeDataMismatch {
                op: "new",
                shape: vec![2, 3],
                expected: 6,
                actual: 5
            }
        );
    }

    #[test]
    fn pop_linear_two_individuals() {
        // p=2, n=1, m=2, b=1
        let w = t::<f32>(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t::<f32>(&[2, 1], &[0.5, -0.5]);
        let x = t::<f32>(&[2, 1, 2], &[1.0, 1.0, 2.0, 2.0]);
        let out = pop_linear(&w, &b, &x).unwrap();
        assert_eq!(out.shape(), &[2, 1, 1]);
        assert_eq!(out.data(), &[3.5, 13.5]);
    }

    #[test]
    fn pop_linear_shared_matches_replicated_input() {
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(7)
        };
        let (p, b, n, m) = (3, 4, 5, 6);
        let w = Tensor::<f32>::from_fn(vec![p, n, m], |_| f32::standard_normal(&mut rng));
        let bias = Tensor::<f32>::from_fn(vec![p, n], |_| f32::standard_normal(&mut rng));
        let x = Tensor::<f32>::from_fn(vec![b, m], |_| f32::standard_normal(&mut rng));
        let mut replicated = Vec::with_capacity(p * b * m);
        for _ in 0..p {
            replicated.extend_from_slice(x.data());
        }
        let xr = Tensor::new(vec![p, b, m], replicated).unwrap();
        let shared = pop_linear_shared(&w, &bias, &x).unwrap();
        let full = pop_linear(&w, &bias, &xr).unwrap();
        assert_eq!(shared, full);
    }

    #[test]
    fn pop_linear_names_the_offending_axis() {
        let w = t::<f32>(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t::<f32>(&[1, 1], &[0.5]);
        let x = t::<f32>(&[2, 1, 2], &[1.0; 4]);
        let err = pop_linear(&w, &b, &x).unwrap_err();
        assert_eq!(
            err,
            TensorError::AxisMismatch {
                op: "pop_linear",
                axis: "population",
                left: 2,
                right: 1
            }
        );
        let b = t::<f32>(&[2, 1], &[0.5, -0.5]);
        let x_bad = t::<f32>(&[2, 1, 3], &[1.0; 6]);
        let err = pop_linear(&w, &b, &x_bad).unwrap_err();
        assert_eq!(
            err,
            TensorError::AxisMismatch {
                op: "pop_linear",
                axis: "input-unit",
                left: 2,
                right: 3
            }
        );
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t::<f32>(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_single_window() {
        let x = t::<f32>(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let out = maxpool2x2(&x).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        // 2 images of 4x4 with known window maxima.
        let x = Tensor::<f32>::from_fn(vec![2, 4, 4], |i| i as f32);
        let out = maxpool2x2(&x).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert_eq!(out.data(), &[5.0, 7.0, 13.0, 15.0, 21.0, 23.0, 29.0, 31.0]);
    }

    #[test]
    fn maxpool_rejects_odd_extents() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 4]);
        assert_eq!(
            maxpool2x2(&x).unwrap_err(),
            TensorError::OddExtent {
                op: "maxpool2x2",
                axis: "height",
                extent: 3
            }
        );
        let x = Tensor::<f32>::zeros(vec![1, 4, 5]);
        assert_eq!(
            maxpool2x2(&x).unwrap_err(),
            TensorError::OddExtent {
                op: "maxpool2x2",
                axis: "width",
                extent: 5
            }
        );
    }

    #[test]
    fn softmax_uniform_logits() {
        let x = t::<f32>(&[1, 2], &[0.0, 0.0]);
        let out = softmax(&x).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_extreme_logits_do_not_overflow() {
        let x = t::<f32>(&[1, 2], &[1000.0, 0.0]);
        let out = softmax(&x).unwrap();
        assert!(out.data()[0] > 0.999_999);
        assert!(out.data()[1] < 1e-6);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dot_layout_is_length_dependent_only() {
        // Lengths straddling the lane width still sum every term exactly once.
        for len in [1usize, 7, 8, 9, 16, 17, 31] {
            let a: Vec<f64> = (0..len).map(|i| (i + 1) as f64).collect();
            let ones = vec![1.0f64; len];
            let expected = (len * (len + 1) / 2) as f64;
            assert_eq!(dot(&a, &ones), expected, "len {len}");
        }
    }

    #[test]
    fn reshape_preserves_data() {
        let x = t::<f32>(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), x.data());
        let err = x.reshape(vec![4, 2]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }
}
