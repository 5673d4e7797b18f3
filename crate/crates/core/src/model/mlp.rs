//! Dense feed-forward network with tanh hidden activations and a linear
//! output layer, plus the derivative machinery the potential needs:
//!
//! - reverse mode (adjoints of inputs and parameters),
//! - forward tangents (directional derivatives through the net), and
//! - reverse-over-forward: parameter gradients of a scalar that depends on
//!   both the outputs *and* their directional derivatives. This is what
//!   training on forces requires, since forces are themselves derivatives.
//!
//! tanh is chosen deliberately: it is C∞ (the force loss differentiates the
//! network twice, so σ'' appears analytically) and bounded, which keeps
//! per-atom energies bounded.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Layer widths, input first: [d_in, h_1, ..., d_out].
    pub widths: Vec<usize>,
    /// weights[λ]: widths[λ+1] × widths[λ].
    pub weights: Vec<Array2<f64>>,
    /// biases[λ]: widths[λ+1].
    pub biases: Vec<Array1<f64>>,
}

/// Cached forward pass: inputs to every layer and pre-activations.
#[derive(Debug, Clone)]
pub struct Trace {
    /// acts[λ] = input of layer λ (acts[0] is the network input).
    pub acts: Vec<Array1<f64>>,
    /// pre[λ] = W_λ·acts[λ] + b_λ.
    pub pre: Vec<Array1<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array1<f64> {
        self.pre.last().expect("trace of an empty network")
    }
}

/// Forward tangents matching a [`Trace`].
#[derive(Debug, Clone)]
pub struct TangentTrace {
    pub act_dots: Vec<Array1<f64>>,
    pub pre_dots: Vec<Array1<f64>>,
}

impl TangentTrace {
    pub fn output(&self) -> &Array1<f64> {
        self.pre_dots.last().expect("tangent trace of an empty network")
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros(mlp: &Mlp) -> MlpGrads {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|x| x * s);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|x| x * s);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

#[inline]
fn tanh_d(t: f64) -> f64 {
    1.0 - t * t
}

impl Mlp {
    /// Initialize with uniform weights in ±(1/fan_in)^½ and zero biases.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Mlp> {
        if widths.len() < 2 {
            return Err(Error::Invalid(format!(
                "network needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Invalid(format!("zero layer width in {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-scale..scale));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp { widths: widths.to_vec(), weights, biases })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Structural consistency check (shapes against widths).
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2
            || self.weights.len() != self.widths.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(Error::Invalid("network layer bookkeeping is inconsistent".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.dim() != (self.widths[l + 1], self.widths[l]) || b.len() != self.widths[l + 1] {
                return Err(Error::Invalid(format!(
                    "layer {l} has shape {:?}/{}, expected ({}, {})/{}",
                    w.dim(),
                    b.len(),
                    self.widths[l + 1],
                    self.widths[l],
                    self.widths[l + 1]
                )));
            }
            if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("layer {l} contains non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.pre.pop().expect("at least one layer"))
    }

    /// Forward pass keeping everything reverse mode needs.
    pub fn forward_trace(&self, x: ArrayView1<f64>) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::Invalid(format!(
                "network input has {} components, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.n_layers();
        let mut acts = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for l in 0..n_layers {
            let z = self.weights[l].dot(&a) + &self.biases[l];
            acts.push(a);
            a = if l + 1 < n_layers { z.mapv(f64::tanh) } else { Array1::zeros(0) };
            pre.push(z);
        }
        Ok(Trace { acts, pre })
    }

    /// Forward tangents ẏ for an input tangent ẋ, reusing a value trace.
    pub fn forward_tangent(&self, trace: &Trace, x_dot: ArrayView1<f64>) -> TangentTrace {
        let n_layers = self.n_layers();
        let mut act_dots = Vec::with_capacity(n_layers);
        let mut pre_dots = Vec::with_capacity(n_layers);
        let mut a_dot = x_dot.to_owned();
        for l in 0..n_layers {
            let z_dot = self.weights[l].dot(&a_dot);
            act_dots.push(a_dot);
            a_dot = if l + 1 < n_layers {
                let t = trace.pre[l].mapv(f64::tanh);
                ndarray::Zip::from(&z_dot).and(&t).map_collect(|&zd, &tv| zd * tanh_d(tv))
            } else {
                Array1::zeros(0)
            };
            pre_dots.push(z_dot);
        }
        TangentTrace { act_dots, pre_dots }
    }

    /// Reverse pass. Returns the input adjoint ∂(ȳ·y)/∂x, and, when `grads`
    /// is provided, accumulates parameter adjoints into it.
    pub fn backprop(
        &self,
        trace: &Trace,
        y_adj: ArrayView1<f64>,
        mut grads: Option<&mut MlpGrads>,
    ) -> Array1<f64> {
        let n_layers = self.n_layers();
        let mut z_bar = y_adj.to_owned();
        for l in (0..n_layers).rev() {
            if let Some(g) = grads.as_deref_mut() {
                accumulate_outer(&mut g.weights[l], &z_bar, &trace.acts[l]);
                g.biases[l] += &z_bar;
            }
            let a_bar = self.weights[l].t().dot(&z_bar);
            if l == 0 {
                return a_bar;
            }
            let t = trace.pre[l - 1].mapv(f64::tanh);
            z_bar = ndarray::Zip::from(&a_bar).and(&t).map_collect(|&ab, &tv| ab * tanh_d(tv));
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass through the *augmented* (value, tangent) forward: given
    /// the adjoint of the outputs (`y_adj`) and of the output tangents
    /// (`y_dot_adj`), accumulate parameter gradients of
    /// Φ = y_adj·y + y_dot_adj·ẏ.
    ///
    /// Rules per layer (value adjoint ·̄, tangent adjoint ·̄˙):
    ///   affine z = W a + b:  ∂W += z̄ aᵀ + z̄˙ ȧᵀ,  ∂b += z̄,
    ///                        ā = Wᵀ z̄,  ā˙ = Wᵀ z̄˙;
    ///   tanh   a = σ(z):     z̄ = ā σ'(z) + ā˙ σ''(z) ż,   z̄˙ = ā˙ σ'(z).
    pub fn backprop_dual(
        &self,
        trace: &Trace,
        tangent: &TangentTrace,
        y_adj: ArrayView1<f64>,
        y_dot_adj: ArrayView1<f64>,
        grads: &mut MlpGrads,
    ) {
        let n_layers = self.n_layers();
        let mut z_bar = y_adj.to_owned();
        let mut z_dot_bar = y_dot_adj.to_owned();
        for l in (0..n_layers).rev() {
            accumulate_outer(&mut grads.weights[l], &z_bar, &trace.acts[l]);
            accumulate_outer(&mut grads.weights[l], &z_dot_bar, &tangent.act_dots[l]);
            grads.biases[l] += &z_bar;
            let a_bar = self.weights[l].t().dot(&z_bar);
            let a_dot_bar = self.weights[l].t().dot(&z_dot_bar);
            if l == 0 {
                return;
            }
            let z_prev = &trace.pre[l - 1];
            let z_dot_prev = &tangent.pre_dots[l - 1];
            let mut nz = Array1::zeros(a_bar.len());
            let mut nzd = Array1::zeros(a_bar.len());
            for i in 0..a_bar.len() {
                let t = z_prev[i].tanh();
                let s1 = tanh_d(t);
                let s2 = -2.0 * t * s1;
                nz[i] = a_bar[i] * s1 + a_dot_bar[i] * s2 * z_dot_prev[i];
                nzd[i] = a_dot_bar[i] * s1;
            }
            z_bar = nz;
            z_dot_bar = nzd;
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Append all parameters (per layer: weights row-major, then bias).
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }

    /// Inverse of [`Mlp::flatten_into`]; consumes from `flat[*cursor..]`.
    pub fn unflatten_from(&mut self, flat: &[f64], cursor: &mut usize) -> Result<()> {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut() {
                *x = *flat.get(*cursor).ok_or_else(short_flat)?;
                *cursor += 1;
            }
            for x in b.iter_mut() {
                *x = *flat.get(*cursor).ok_or_else(short_flat)?;
                *cursor += 1;
            }
        }
        Ok(())
    }
}

fn short_flat() -> Error {
    Error::Invalid("flattened parameter vector too short".into())
}

fn accumulate_outer(target: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    for (i, &c) in col.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut t = target.row_mut(i);
        for (j, &r) in row.iter().enumerate() {
            t[j] += c * r;
        }
    }
}
