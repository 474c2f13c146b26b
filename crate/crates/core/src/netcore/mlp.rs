//! Dense feed-forward network with a fixed activation layout.
//!
//! Hidden layers use GELU, except the last hidden layer, which is the
//! width-6 bottleneck followed by `tanh`. The output layer is linear.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Width of the information bottleneck that precedes the output layer.
pub const BOTTLENECK_WIDTH: usize = 6;

/// Hidden widths before the bottleneck for the default architecture.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Tanh,
    Identity,
}

const GELU_COEF: f64 = 0.044715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let u = T::lit(GELU_SCALE) * (x + T::lit(GELU_COEF) * x * x * x);
                T::lit(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let half = T::lit(0.5);
                let u = T::lit(GELU_SCALE) * (x + T::lit(GELU_COEF) * x * x * x);
                let th = u.tanh();
                let du = T::lit(GELU_SCALE) * (T::one() + T::lit(3.0 * GELU_COEF) * x * x);
                half * (T::one() + th) + half * x * (T::one() - th * th) * du
            }
            Activation::Tanh => {
                let th = x.tanh();
                T::one() - th * th
            }
            Activation::Identity => T::one(),
        }
    }
}

/// One affine layer. `weights` is row-major with shape `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    fn affine(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let dot = row.iter().zip(input).fold(*b, |acc, (w, x)| acc + *w * *x);
            out.push(dot);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layer_dims: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Activations recorded by [`Mlp::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `inputs[l]` is the input to layer `l`; the final entry is the network output.
    pub inputs: Vec<Vec<T>>,
    pub pre_activations: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Gradient {
            weights: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weights.len()])
                .collect(),
            bias: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g = *g * factor);
        }
    }

    /// Flattened in [`Mlp::param`] order: per layer, weights then bias.
    pub fn flatten(&self) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|g| g.is_zero())
    }
}

fn check_layout(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 3 {
        return Err(Error::Architecture(format!(
            "need input, bottleneck and output widths, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Architecture(format!("zero-width layer in {layer_dims:?}")));
    }
    let bottleneck = layer_dims[layer_dims.len() - 2];
    if bottleneck != BOTTLENECK_WIDTH {
        return Err(Error::Architecture(format!(
            "last hidden layer must be the width-{BOTTLENECK_WIDTH} bottleneck, got {bottleneck}"
        )));
    }
    Ok(())
}

fn activation_for(layer: usize, n_layers: usize) -> Activation {
    if layer + 1 == n_layers {
        Activation::Identity
    } else if layer + 2 == n_layers {
        Activation::Tanh
    } else {
        Activation::Gelu
    }
}

impl<T: Scalar> Mlp<T> {
    /// Layer widths for the default layout: `input -> 64 -> 64 -> 6 -> output`.
    pub fn default_dims(n_in: usize, n_out: usize) -> Vec<usize> {
        let mut dims = vec![n_in];
        dims.extend_from_slice(&DEFAULT_HIDDEN);
        dims.push(BOTTLENECK_WIDTH);
        dims.push(n_out);
        dims
    }

    /// Glorot-uniform weights and zero biases from a seeded xoshiro256++ stream.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Self::build(layer_dims, |fan_in, fan_out| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            T::lit(rng.random_range(-limit..=limit))
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::build(layer_dims, |_, _| T::zero())
    }

    fn build(layer_dims: &[usize], mut weight: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_layout(layer_dims)?;
        let n_layers = layer_dims.len() - 1;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (in_dim, out_dim) = (w[0], w[1]);
                Layer {
                    in_dim,
                    out_dim,
                    weights: (0..in_dim * out_dim).map(|_| weight(in_dim, out_dim)).collect(),
                    bias: vec![T::zero(); out_dim],
                    activation: activation_for(l, n_layers),
                }
            })
            .collect();
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// Rebuilds a network from explicit `(weights, bias)` pairs per layer.
    pub fn from_parameters(layer_dims: &[usize], params: Vec<(Vec<T>, Vec<T>)>) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        check_len("layer count", model.layers.len(), params.len())?;
        for (layer, (w, b)) in model.layers.iter_mut().zip(params) {
            check_len("layer weights", layer.weights.len(), w.len())?;
            check_len("layer bias", layer.bias.len(), b.len())?;
            layer.weights = w;
            layer.bias = b;
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("layout has at least three widths")
    }

    /// Index of the bottleneck layer (the one producing the width-6 code).
    pub fn bottleneck_layer(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.weights.len() {
                return (l, true, index);
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return (l, false, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> T {
        let (l, is_weight, i) = self.locate(index);
        if is_weight {
            self.layers[l].weights[i]
        } else {
            self.layers[l].bias[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        let (l, is_weight, i) = self.locate(index);
        if is_weight {
            self.layers[l].weights[i] = value;
        } else {
            self.layers[l].bias[i] = value;
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        check_len("network input", self.input_dim(), input.len())?;
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&current, &mut next);
            next.iter_mut().for_each(|z| *z = layer.activation.apply(*z));
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    pub fn forward_cached(&self, input: &[T]) -> Result<ForwardCache<T>> {
        check_len("network input", self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(inputs.last().expect("seeded with the input"), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            inputs.push(a);
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
        })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &[T], grad: &mut Gradient<T>) {
        let mut delta: Vec<T> = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            for (d, z) in delta.iter_mut().zip(&cache.pre_activations[l]) {
                *d = *d * layer.activation.derivative(*z);
            }
            let input = &cache.inputs[l];
            let gw = &mut grad.weights[l];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = *g + *d * *x;
                }
                grad.bias[l][o] = grad.bias[l][o] + *d;
            }
            if l > 0 {
                let mut upstream = vec![T::zero(); layer.in_dim];
                for (row, d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    for (u, w) in upstream.iter_mut().zip(row) {
                        *u = *u + *w * *d;
                    }
                }
                delta = upstream;
            }
        }
    }

    pub fn apply_gradient(&mut self, grad: &Gradient<T>, learning_rate: T) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grad.weights[l]) {
                *w = *w - learning_rate * *g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad.bias[l]) {
                *b = *b - learning_rate * *g;
            }
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layer_dims: self.layer_dims.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.iter().map(|w| U::from_f64_lossy(w.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|b| U::from_f64_lossy(b.to_f64_lossy())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_missing_bottleneck() {
        assert!(Mlp::<f64>::zeros(&[2, 8, 3]).is_err());
        assert!(Mlp::<f64>::zeros(&[2, 6]).is_err());
        assert!(Mlp::<f64>::zeros(&[2, 6, 3]).is_ok());
    }

    #[test]
    fn activation_layout() {
        let m = Mlp::<f64>::zeros(&Mlp::<f64>::default_dims(5, 9)).unwrap();
        let acts: Vec<_> = m.layers().iter().map(|l| l.activation).collect();
        assert_eq!(
            acts,
            vec![Activation::Gelu, Activation::Gelu, Activation::Tanh, Activation::Identity]
        );
        assert_eq!(m.bottleneck_layer(), 2);
        assert_eq!(m.layers()[2].out_dim, BOTTLENECK_WIDTH);
    }

    #[test]
    fn weight_shapes_chain() {
        let m = Mlp::<f64>::init(&[4, 10, 6, 6], 3).unwrap();
        for (layer, w) in m.layers().iter().zip(m.layer_dims().windows(2)) {
            assert_eq!(layer.weights.len(), w[0] * w[1]);
            assert_eq!(layer.bias.len(), w[1]);
        }
        assert_eq!(m.param_count(), 4 * 10 + 10 + 10 * 6 + 6 + 6 * 6 + 6);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let m = Mlp::<f64>::init(&[5, 64, 6, 9], 11).unwrap();
        for layer in m.layers() {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= limit));
            assert!(layer.bias.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn param_indexing_round_trips() {
        let mut m = Mlp::<f64>::init(&[2, 3, 6, 3], 5).unwrap();
        for i in 0..m.param_count() {
            m.set_param(i, i as f64);
        }
        let flat: Vec<f64> = (0..m.param_count()).map(|i| m.param(i)).collect();
        assert_eq!(flat, (0..m.param_count()).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(m.layers()[0].bias, vec![6.0, 7.0, 8.0]);
    }
}
