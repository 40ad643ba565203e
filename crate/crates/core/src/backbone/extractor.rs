use crate::crafting::Fingerprint;
use crate::error::{Error, Result};
use crate::linalg::{rand_normal, DenseMatrix, SeededRng};

/// Multi-layer perceptron with `tanh` after every layer, including the last.
///
/// Layer `k` maps `dims[k]` inputs to `dims[k + 1]` outputs with weights stored
/// row-major as `(out, in)` and a `1 × out` bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    dims: Vec<usize>,
    // [W0, b0, W1, b1, ...]
    params: Vec<DenseMatrix>,
}

/// Per-layer activations kept for backpropagation. `activations[0]` is the input.
pub(crate) struct ForwardCache {
    pub activations: Vec<DenseMatrix>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer dims need at least an input and an output size, all >= 1 (got {dims:?})"
        )));
    }
    Ok(())
}

impl FeatureExtractor {
    /// Gaussian weights with stddev `1/√fan_in`, zero biases.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        check_dims(dims)?;
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            params.push(rand_normal(rng, fan_out, fan_in, 0.0, 1.0 / (fan_in as f64).sqrt())?);
            params.push(DenseMatrix::zeros(1, fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let params = dims
            .windows(2)
            .flat_map(|w| [DenseMatrix::zeros(w[1], w[0]), DenseMatrix::zeros(1, w[1])])
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    /// Build from explicit `[W0, b0, W1, b1, ...]`, checking that shapes chain.
    pub fn from_params(dims: &[usize], params: Vec<DenseMatrix>) -> Result<Self> {
        check_dims(dims)?;
        if params.len() != 2 * (dims.len() - 1) {
            return Err(Error::Invalid(format!(
                "{} parameter matrices for {} layers",
                params.len(),
                dims.len() - 1
            )));
        }
        for (k, w) in dims.windows(2).enumerate() {
            if params[2 * k].shape() != (w[1], w[0]) || params[2 * k + 1].shape() != (1, w[1]) {
                return Err(Error::Invalid(format!(
                    "layer {k} parameters do not chain with dims {dims:?}"
                )));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> &DenseMatrix {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &DenseMatrix {
        &self.params[2 * layer + 1]
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        for &d in &self.dims {
            h.write_u64(d as u64);
        }
        for p in &self.params {
            h.write_matrix(p);
        }
        h.finish()
    }

    /// Row `i` of the result is `f(batch[i])`.
    pub fn forward(&self, batch: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for k in 0..self.num_layers() {
            h = self.layer_forward(k, &h)?;
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, batch: &DenseMatrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(batch.clone());
        for k in 0..self.num_layers() {
            let next = self.layer_forward(k, &activations[k])?;
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn check_input(&self, batch: &DenseMatrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!(
                    "batch has {} columns, extractor expects {}",
                    batch.cols(),
                    self.input_dim()
                ),
            ));
        }
        Ok(())
    }

    fn layer_forward(&self, k: usize, input: &DenseMatrix) -> Result<DenseMatrix> {
        let mut z = input.matmul_transposed(self.weights(k))?;
        let bias = self.bias(k).data();
        let out = z.cols();
        for (i, x) in z.data_mut().iter_mut().enumerate() {
            *x = (*x + bias[i % out]).tanh();
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = FeatureExtractor::zeros(&[3, 5, 2]).unwrap();
        let x = rand_normal(&mut SeededRng::new(1), 4, 3, 0.0, 1.0).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), (4, 2));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_tanh() {
        let net =
            FeatureExtractor::from_params(&[3, 3], vec![DenseMatrix::identity(3), DenseMatrix::zeros(1, 3)]).unwrap();
        let x = rand_normal(&mut SeededRng::new(2), 5, 3, 0.0, 2.0).unwrap();
        let y = net.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b.tanh());
        }
    }

    #[test]
    fn forward_is_batch_invariant() {
        let mut rng = SeededRng::new(3);
        let net = FeatureExtractor::init(&[6, 64, 4], &mut rng).unwrap();
        let a = rand_normal(&mut rng, 300, 6, 0.0, 1.0).unwrap();
        let b = rand_normal(&mut rng, 7, 6, 0.0, 1.0).unwrap();
        let joint = net.forward(&a.vstack(&b).unwrap()).unwrap();
        let separate = net.forward(&a).unwrap().vstack(&net.forward(&b).unwrap()).unwrap();
        assert_eq!(joint, separate);
    }

    #[test]
    fn shape_errors() {
        let net = FeatureExtractor::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&DenseMatrix::zeros(1, 4)),
            Err(Error::Shape { .. })
        ));
        assert!(FeatureExtractor::zeros(&[3]).is_err());
        assert!(
            FeatureExtractor::from_params(&[3, 2], vec![DenseMatrix::zeros(3, 2), DenseMatrix::zeros(1, 2)]).is_err()
        );
    }
}
