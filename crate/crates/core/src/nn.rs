//! Fully connected ReLU networks with a flat parameter vector and a
//! hand-written backward pass.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a ReLU MLP. The input is re-concatenated after hidden layer
/// `skip - 1` (so hidden layer `skip` sees `[h, x]`) when `depth > skip`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub width: usize,
    pub depth: usize,
    pub output: usize,
    pub skip: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &params[self.offset..self.offset + self.fan_out * self.fan_in])
            .expect("layer shape")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let o = self.offset + self.fan_out * self.fan_in;
        &params[o..o + self.fan_out]
    }

    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub shape: MlpShape,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
}

/// Activations saved by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of every layer (after any skip concatenation).
    inputs: Vec<Array2<f64>>,
}

fn layout(shape: &MlpShape) -> Vec<Layer> {
    let mut layers = Vec::with_capacity(shape.depth + 1);
    let mut offset = 0;
    let mut push = |fan_in, fan_out| {
        let l = Layer { fan_in, fan_out, offset };
        offset += l.len();
        layers.push(l);
    };
    for l in 0..shape.depth {
        let fan_in = if l == 0 {
            shape.input
        } else if Some(l) == shape.skip_layer() {
            shape.width + shape.input
        } else {
            shape.width
        };
        push(fan_in, shape.width);
    }
    push(if shape.depth == 0 { shape.input } else { shape.width }, shape.output);
    layers
}

impl MlpShape {
    fn skip_layer(&self) -> Option<usize> {
        self.skip.filter(|&s| s > 0 && self.depth > s)
    }

    pub fn param_count(&self) -> usize {
        layout(self).iter().map(Layer::len).sum()
    }
}

impl Mlp {
    /// Hidden layers get uniform(±1/√fan_in) weights and biases; the output
    /// layer starts at zero.
    pub fn new(shape: MlpShape, seed: u64) -> Self {
        let layers = layout(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layers.iter().map(Layer::len).sum()];
        for l in &layers[..layers.len() - 1] {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.len()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Self { shape, layers, params }
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::Model(format!(
                "network expects {} parameters, got {}",
                shape.param_count(),
                params.len()
            )));
        }
        Ok(Self { layers: layout(&shape), shape, params })
    }

    /// Offset and length of the output layer in `params`.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let l = self.layers.last().expect("output layer");
        l.offset..l.offset + l.len()
    }

    fn affine(&self, layer: &Layer, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights(&self.params).t());
        let b = ndarray::ArrayView1::from(layer.bias(&self.params));
        z += &b;
        z
    }

    /// Evaluate rows of `x` and keep what the backward pass needs.
    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, Tape) {
        let skip = self.shape.skip_layer();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            if Some(l) == skip {
                h = ndarray::concatenate(Axis(1), &[h.view(), x.view()]).expect("skip concat");
            }
            let mut z = self.affine(layer, &h);
            inputs.push(h);
            if l + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        (h, Tape { inputs })
    }

    /// Sign pattern of every hidden pre-activation; the network is smooth
    /// in its parameters wherever this pattern is constant.
    pub fn relu_pattern(&self, x: Array2<f64>) -> Vec<bool> {
        let (_, tape) = self.forward(x);
        let mut pattern = Vec::new();
        for (l, a) in tape.inputs.iter().enumerate().skip(1) {
            let cols = if Some(l) == self.shape.skip_layer() { self.shape.width } else { a.ncols() };
            pattern.extend(a.slice(s![.., ..cols]).iter().map(|&v| v > 0.0));
        }
        pattern
    }

    pub fn eval(&self, x: Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Parameter gradient and input gradient for output gradient `grad`.
    pub fn backward(&self, tape: &Tape, grad: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let skip = self.shape.skip_layer();
        let mut g_params = vec![0.0; self.params.len()];
        let mut g = grad.clone();
        let mut g_input_skip: Option<Array2<f64>> = None;
        let mut g_x = Array2::zeros((0, 0));
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a = &tape.inputs[l];
            {
                let gw = g.t().dot(a);
                let n = layer.fan_out * layer.fan_in;
                for (dst, v) in g_params[layer.offset..layer.offset + n].iter_mut().zip(gw.iter()) {
                    *dst = *v;
                }
                let gb = g.sum_axis(Axis(0));
                for (dst, v) in g_params[layer.offset + n..layer.offset + n + layer.fan_out].iter_mut().zip(gb.iter()) {
                    *dst = *v;
                }
            }
            let mut ga = g.dot(&layer.weights(&self.params));
            if Some(l) == skip {
                let w = self.shape.width;
                g_input_skip = Some(ga.slice(s![.., w..]).to_owned());
                ga = ga.slice(s![.., ..w]).to_owned();
            }
            if l == 0 {
                g_x = ga;
                break;
            }
            // ReLU of the previous layer: active where its output is positive
            let prev = &tape.inputs[l];
            let cols = ga.ncols();
            ga.zip_mut_with(&prev.slice(s![.., ..cols]), |gv, &av| {
                if av <= 0.0 {
                    *gv = 0.0;
                }
            });
            g = ga;
        }
        if let Some(extra) = g_input_skip {
            g_x += &extra;
        }
        (g_params, g_x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn shape(depth: usize, skip: Option<usize>) -> MlpShape {
        MlpShape { input: 5, width: 7, depth, output: 3, skip }
    }

    fn randomized(shape: MlpShape, seed: u64) -> Mlp {
        let mut net = Mlp::new(shape, seed);
        let mut r = crate::testutil::rng(seed + 1);
        let range = net.output_layer_range();
        for p in &mut net.params[range] {
            *p = r.gen_range(-0.5..0.5);
        }
        net
    }

    fn input(rows: usize, seed: u64) -> Array2<f64> {
        let mut r = crate::testutil::rng(seed);
        Array2::from_shape_fn((rows, 5), |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let net = Mlp::new(shape(6, Some(4)), 3);
        assert!(net.eval(input(9, 1)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_includes_skip() {
        let s = shape(6, Some(4));
        let expected = (5 + 1) * 7 + 3 * (7 + 1) * 7 + (12 + 1) * 7 + (7 + 1) * 7 + (7 + 1) * 3;
        assert_eq!(s.param_count(), expected);
        let s = MlpShape { skip: Some(4), depth: 3, ..s };
        assert_eq!(s.param_count(), (5 + 1) * 7 + 2 * (7 + 1) * 7 + (7 + 1) * 3);
        let full = MlpShape { input: 72, width: 256, depth: 8, output: 6, skip: Some(4) };
        assert_eq!(full.param_count(), 73 * 256 + 6 * 257 * 256 + 329 * 256 + 257 * 6);
    }

    #[test]
    fn gradients_match_finite_difference() {
        for (depth, skip) in [(6, Some(4)), (3, None), (1, None), (0, None)] {
            let net = randomized(shape(depth, skip), 5);
            let x = input(4, 9);
            let mut r = crate::testutil::rng(2);
            let w = Array2::from_shape_fn((4, 3), |_| r.gen_range(-1.0..1.0));
            let loss = |n: &Mlp, x: &Array2<f64>| (n.eval(x.clone()) * &w).sum();
            let (_, tape) = net.forward(x.clone());
            let (gp, gx) = net.backward(&tape, &w);
            let h = 1e-6;
            for k in 0..net.params.len() {
                let (mut a, mut b) = (net.clone(), net.clone());
                a.params[k] += h;
                b.params[k] -= h;
                let numeric = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
                assert!((numeric - gp[k]).abs() < 1e-6, "param {k}: {numeric} vs {}", gp[k]);
            }
            for i in 0..4 {
                for j in 0..5 {
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[[i, j]] += h;
                    b[[i, j]] -= h;
                    let numeric = (loss(&net, &a) - loss(&net, &b)) / (2.0 * h);
                    assert!((numeric - gx[[i, j]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rows_are_independent() {
        let net = randomized(shape(6, Some(4)), 8);
        let x = input(6, 3);
        let all = net.eval(x.clone());
        let one = net.eval(x.slice(s![2..3, ..]).to_owned());
        for j in 0..3 {
            assert!((all[[2, j]] - one[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn from_params_validates_length() {
        let s = shape(3, None);
        assert!(Mlp::from_params(s, vec![0.0; 3]).is_err());
        let net = Mlp::new(s, 1);
        assert_eq!(Mlp::from_params(s, net.params.clone()).unwrap(), net);
    }
}
