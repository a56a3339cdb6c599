use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

use super::ModelError;

/// Floating-point element usable by [`Mlp`].
pub trait Scalar:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Activation applied after every layer except the last, which stays linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected network. `weights[k]` maps layer `k` to layer `k + 1` and
/// has shape `sizes[k + 1] x sizes[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    activation: Activation,
}

/// Parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in the same order as [`Mlp::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), ModelError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(ModelError::Shape(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

impl<T: Scalar> Mlp<T> {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self, ModelError> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes
                .windows(2)
                .map(|p| Array2::zeros((p[1], p[0])))
                .collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            activation,
        })
    }

    /// Uniform He-style initialization: weights in `±sqrt(6 / fan_in)`,
    /// zero biases.
    pub fn random(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let mut mlp = Self::zeros(sizes, activation)?;
        for w in &mut mlp.weights {
            let bound = (6.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| T::from_f64(rng.random_range(-bound..bound)).expect("finite"));
        }
        Ok(mlp)
    }

    pub fn from_parts(
        sizes: &[usize],
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
        activation: Activation,
    ) -> Result<Self, ModelError> {
        check_sizes(sizes)?;
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(ModelError::Shape("parameter count does not match layer sizes".into()));
        }
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.dim() != (sizes[k + 1], sizes[k]) || b.len() != sizes[k + 1] {
                return Err(ModelError::Shape(format!(
                    "layer {k}: weight {:?} / bias {} do not chain {} -> {}",
                    w.dim(),
                    b.len(),
                    sizes[k],
                    sizes[k + 1]
                )));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<T>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights (row-major) then biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<(), ModelError> {
        if flat.len() != self.num_params() {
            return Err(ModelError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().chain(b.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<(), ModelError> {
        if cols != self.input_dim() {
            return Err(ModelError::Dimension {
                expected: self.input_dim(),
                found: cols,
            });
        }
        Ok(())
    }

    fn affine(&self, k: usize, input: &ArrayView2<T>) -> Array2<T> {
        let mut z = input.dot(&self.weights[k].t());
        for mut row in z.rows_mut() {
            row.zip_mut_with(&self.biases[k], |v, &b| *v = *v + b);
        }
        z
    }

    fn activate(&self, z: &mut Array2<T>) {
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
    }

    /// Batch forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        self.check_input(input.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = self.affine(0, &input);
        for k in 1..=last {
            self.activate(&mut a);
            a = self.affine(k, &a.view());
        }
        Ok(a)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| ModelError::Shape(e.to_string()))?;
        Ok(self.forward_batch(view)?.into_iter().collect())
    }

    /// Mean reconstruction loss of the batch and its gradient with respect to
    /// every parameter. Targets are the inputs themselves.
    pub fn loss_and_gradients(&self, batch: ArrayView2<T>) -> Result<(T, Gradients<T>), ModelError> {
        self.check_input(batch.ncols())?;
        if batch.nrows() == 0 {
            return Err(ModelError::EmptyDataset);
        }
        if self.output_dim() != self.input_dim() {
            return Err(ModelError::Shape("reconstruction needs output dim = input dim".into()));
        }
        let layers = self.weights.len();
        // activations[k] is the input of layer k; preacts[k] its output before activation
        let mut activations: Vec<Array2<T>> = Vec::with_capacity(layers);
        let mut preacts: Vec<Array2<T>> = Vec::with_capacity(layers);
        activations.push(batch.to_owned());
        for k in 0..layers {
            let z = self.affine(k, &activations[k].view());
            if k + 1 < layers {
                let mut a = z.clone();
                self.activate(&mut a);
                activations.push(a);
            }
            preacts.push(z);
        }
        let output = &preacts[layers - 1];
        let residual = output - &batch;
        let count = T::from_usize(batch.nrows() * batch.ncols()).expect("representable");
        let loss = residual.mapv(|r| r * r).sum() / count;

        let two = T::one() + T::one();
        let mut delta = residual.mapv(|r| two * r / count);
        let mut grad_w = vec![Array2::zeros((0, 0)); layers];
        let mut grad_b = vec![Array1::zeros(0); layers];
        for k in (0..layers).rev() {
            grad_w[k] = delta.t().dot(&activations[k]);
            grad_b[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut upstream = delta.dot(&self.weights[k]);
                if self.activation == Activation::Relu {
                    // subgradient 0 at the kink
                    ndarray::Zip::from(&mut upstream)
                        .and(&preacts[k - 1])
                        .for_each(|d, &z| {
                            if z <= T::zero() {
                                *d = T::zero();
                            }
                        });
                }
                delta = upstream;
            }
        }
        Ok((
            loss,
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }

    /// Pre-activation values of every hidden layer for one input.
    pub fn hidden_preactivations(&self, input: &[T]) -> Result<Vec<Vec<T>>, ModelError> {
        self.check_input(input.len())?;
        let mut a = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| ModelError::Shape(e.to_string()))?
            .to_owned();
        let mut out = Vec::new();
        for k in 0..self.weights.len() - 1 {
            let z = self.affine(k, &a.view());
            out.push(z.iter().copied().collect());
            a = z;
            self.activate(&mut a);
        }
        Ok(out)
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().expect("finite")).expect("finite");
        Mlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.map(conv)).collect(),
            biases: self.biases.iter().map(|b| b.map(conv)).collect(),
            activation: self.activation,
        }
    }
}
