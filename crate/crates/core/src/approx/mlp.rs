//! Fully connected layers over a slice of a flat parameter vector.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ApproxError;

/// A stack of dense layers. Hidden layers use ReLU; the last layer is linear
/// unless `relu_output` is set.
///
/// Parameters live in an external flat vector starting at `offset`. Each layer
/// stores its weight matrix row-major (`outputs × inputs`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub offset: usize,
    pub relu_output: bool,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTape {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpTape {
    /// Smallest |pre-activation| over ReLU units, or `None` without any.
    pub fn min_kink_distance(&self, relu_output: bool) -> Option<f64> {
        let relu_layers = if relu_output { self.pre.len() } else { self.pre.len().saturating_sub(1) };
        self.pre[..relu_layers].iter().flatten().map(|z| z.abs()).min_by(f64::total_cmp)
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, offset: usize, relu_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        Self { sizes, offset, relu_output }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Range of this network's parameters in the flat vector.
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.num_params()
    }

    /// `(weight range, bias range)` of layer `l`.
    fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let start = self.offset + self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        let (inputs, outputs) = (self.sizes[l], self.sizes[l + 1]);
        let w_end = start + inputs * outputs;
        (start..w_end, w_end..w_end + outputs)
    }

    /// Named parameter blocks, one weight and one bias block per layer.
    pub fn blocks(&self, prefix: &str) -> Vec<(String, Range<usize>)> {
        (0..self.num_layers())
            .flat_map(|l| {
                let (w, b) = self.layer_ranges(l);
                [(format!("{prefix}.layer{l}.weight"), w), (format!("{prefix}.layer{l}.bias"), b)]
            })
            .collect()
    }

    fn is_relu(&self, l: usize) -> bool {
        l + 1 < self.num_layers() || self.relu_output
    }

    /// Orthogonal-style initialization: rows of each hidden weight matrix are
    /// Gram-Schmidt orthonormalized Gaussian vectors scaled by `gain`, biases
    /// are zero, and the last layer is zero when `zero_last` is set.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R, gain: f64, zero_last: bool) {
        for l in 0..self.num_layers() {
            let (w, b) = self.layer_ranges(l);
            params[b].iter_mut().for_each(|x| *x = 0.0);
            if zero_last && l + 1 == self.num_layers() {
                params[w].iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let (inputs, outputs) = (self.sizes[l], self.sizes[l + 1]);
            let rows = orthogonal_rows(outputs, inputs, rng);
            for (dst, src) in params[w].iter_mut().zip(rows.iter().flatten()) {
                *dst = gain * src;
            }
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<MlpTape, ApproxError> {
        if x.len() != self.input_dim() {
            return Err(ApproxError::DimensionMismatch { what: "mlp input", expected: self.input_dim(), got: x.len() });
        }
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            let (wr, br) = self.layer_ranges(l);
            let (w, b) = (&params[wr], &params[br]);
            let n_in = self.sizes[l];
            let nonzero: Vec<usize> = (0..n_in).filter(|&k| h[k] != 0.0).collect();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    bias + nonzero.iter().map(|&k| row[k] * h[k]).sum::<f64>()
                })
                .collect();
            let out = if self.is_relu(l) { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            inputs.push(std::mem::replace(&mut h, out));
            pre.push(z);
        }
        Ok(MlpTape { inputs, pre, output: h })
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output`, and returns
    /// `∂loss/∂input` (empty unless `want_input_grad`).
    pub fn backward(&self, params: &[f64], tape: &MlpTape, grad_out: &[f64], grad: &mut [f64], want_input_grad: bool) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            if self.is_relu(l) {
                for (gv, z) in g.iter_mut().zip(&tape.pre[l]) {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let (wr, br) = self.layer_ranges(l);
            let n_in = self.sizes[l];
            let x = &tape.inputs[l];
            let nonzero: Vec<usize> = (0..n_in).filter(|&k| x[k] != 0.0).collect();
            let need_input = l > 0 || want_input_grad;
            let mut g_in = vec![0.0; if need_input { n_in } else { 0 }];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[br.start + o] += go;
                let row = wr.start + o * n_in;
                for &k in &nonzero {
                    grad[row + k] += go * x[k];
                }
                if need_input {
                    for (k, gi) in g_in.iter_mut().enumerate() {
                        *gi += go * params[row + k];
                    }
                }
            }
            g = g_in;
        }
        g
    }
}

/// `rows × cols` matrix with orthonormal rows (or columns, when rows > cols).
fn orthogonal_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        for u in &basis {
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    if transpose {
        (0..rows).map(|i| basis.iter().map(|row| row[i]).collect()).collect()
    } else {
        basis
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn linear_layer_squared_loss_gradient_is_closed_form() {
        let mlp = Mlp::new(vec![3, 1], 0, false);
        let params = vec![0.5, -1.0, 2.0, 0.25];
        let x = [1.0, 2.0, -0.5];
        let tape = mlp.forward(&params, &x).unwrap();
        let pred = tape.output[0];
        assert!((pred - (0.5 - 2.0 - 1.0 + 0.25)).abs() < 1e-15);
        let target = 1.0;
        let mut grad = vec![0.0; 4];
        mlp.backward(&params, &tape, &[2.0 * (pred - target)], &mut grad, false);
        for k in 0..3 {
            assert!((grad[k] - 2.0 * (pred - target) * x[k]).abs() < 1e-15);
        }
        assert!((grad[3] - 2.0 * (pred - target)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mlp = Mlp::new(vec![4, 5, 2], 0, false);
        let mut params = vec![0.0; mlp.num_params()];
        mlp.init(&mut params, &mut seeded_rng(1), 1.0, false);
        let tape = mlp.forward(&params, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut grad = vec![0.0; params.len()];
        mlp.backward(&params, &tape, &[0.0, 0.0], &mut grad, true);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = seeded_rng(3);
        for (r, c) in [(4, 6), (6, 4), (5, 5)] {
            let m = orthogonal_rows(r, c, &mut rng);
            let (outer, inner) = if r <= c { (r, c) } else { (c, r) };
            for a in 0..outer {
                for b in 0..outer {
                    let dot: f64 = (0..inner)
                        .map(|k| if r <= c { m[a][k] * m[b][k] } else { m[k][a] * m[k][b] })
                        .sum();
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mlp = Mlp::new(vec![3, 8, 8, 2], 5, false);
        let mut params = vec![1.0; 5 + mlp.num_params()];
        mlp.init(&mut params, &mut seeded_rng(2), 2f64.sqrt(), true);
        assert_eq!(&params[..5], &[1.0; 5]);
        let tape = mlp.forward(&params, &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(tape.output, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_wrong_input_dimension() {
        let mlp = Mlp::new(vec![3, 2], 0, false);
        let params = vec![0.0; mlp.num_params()];
        assert!(matches!(mlp.forward(&params, &[1.0]), Err(ApproxError::DimensionMismatch { .. })));
    }
}
