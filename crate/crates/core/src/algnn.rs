//! Algebraic neural networks.
//!
//! Each layer maps a feature stack `X ∈ ℝ^{n_in × F_in}` to
//!
//! ```text
//! Y[:, f] = P · η( Σ_g ρ(a^{g f}) X[:, g] )
//! ```
//!
//! where every `a^{gf}` is a polynomial on the layer's shift set, `η` is a
//! pointwise nonlinearity with `η(0) = 0` and `P` is a pooling matrix with
//! operator norm at most one. A linear readout maps the flattened last
//! feature stack to the output vector.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asm::{norm_bound_with, word_vectors, word_vectors_transposed, ShiftSet};
use crate::error::{ensure_dim, ensure_generators, Error, Result};
use crate::io;
use crate::linalg::spectral_norm;
use crate::lipconst::{analytic_l0, analytic_l1, il_penalty_on, IL_TEMPERATURE};
use crate::ncpoly::{NcPolynomial, Word};
use crate::rng;
use crate::spectral::SpectralDecomposition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::Identity => v,
        }
    }

    /// Derivative, with the ReLU subgradient at zero taken as 0.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => 1.0 - v.tanh().powi(2),
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// Which words a filter with `K` taps may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TapsMode {
    /// Every word of degree `< K`.
    #[default]
    Degree,
    /// Powers `g_i^k` of single generators, `k < K`.
    Path,
}

impl TapsMode {
    pub fn words(self, num_generators: usize, taps: usize) -> Vec<Word> {
        let max_degree = taps.saturating_sub(1);
        match self {
            TapsMode::Degree => Word::all_up_to(num_generators, max_degree),
            TapsMode::Path => Word::powers_up_to(num_generators, max_degree),
        }
    }
}

/// `F_out × F_in` grid of filters sharing one word list.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    words: Vec<Word>,
    num_generators: usize,
    f_in: usize,
    f_out: usize,
    /// Index `(f_out · F_in + f_in) · W + w`.
    coeffs: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(words: Vec<Word>, num_generators: usize, f_in: usize, f_out: usize) -> Result<Self> {
        if f_in == 0 || f_out == 0 || words.is_empty() {
            return Err(Error::InvalidArgument("empty filter bank".into()));
        }
        if let Some(&l) = words.iter().flat_map(|w| w.letters()).find(|&&l| l >= num_generators) {
            return Err(Error::GeneratorIndex {
                index: l,
                num_generators,
            });
        }
        let len = words.len() * f_in * f_out;
        Ok(FilterBank {
            words,
            num_generators,
            f_in,
            f_out,
            coeffs: vec![0.0; len],
        })
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn f_in(&self) -> usize {
        self.f_in
    }

    pub fn f_out(&self) -> usize {
        self.f_out
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn offset(&self, f_out: usize, f_in: usize) -> usize {
        (f_out * self.f_in + f_in) * self.words.len()
    }

    pub fn filter_coeffs(&self, f_out: usize, f_in: usize) -> &[f64] {
        let o = self.offset(f_out, f_in);
        &self.coeffs[o..o + self.words.len()]
    }

    pub fn filter_coeffs_mut(&mut self, f_out: usize, f_in: usize) -> &mut [f64] {
        let o = self.offset(f_out, f_in);
        let w = self.words.len();
        &mut self.coeffs[o..o + w]
    }

    pub fn polynomial(&self, f_out: usize, f_in: usize) -> NcPolynomial {
        NcPolynomial::from_terms(
            self.num_generators,
            self.words
                .iter()
                .cloned()
                .zip(self.filter_coeffs(f_out, f_in).iter().copied()),
        )
        .expect("bank words are validated")
    }

    /// Sets filter `(f_out, f_in)` from a polynomial supported on the bank's
    /// words.
    pub fn set_polynomial(&mut self, f_out: usize, f_in: usize, p: &NcPolynomial) -> Result<()> {
        ensure_generators(self.num_generators, p.num_generators())?;
        if let Some((w, _)) = p.terms().find(|(w, _)| !self.words.contains(w)) {
            return Err(Error::InvalidArgument(format!("word `{w}` is not in the filter bank")));
        }
        let coeffs = p.coefficients_on(&self.words);
        self.filter_coeffs_mut(f_out, f_in).copy_from_slice(&coeffs);
        Ok(())
    }

    pub fn polynomials(&self) -> impl Iterator<Item = NcPolynomial> + '_ {
        (0..self.f_out).flat_map(move |f| (0..self.f_in).map(move |g| self.polynomial(f, g)))
    }
}

/// Per-layer constants entering the stability bounds. Filter constants are
/// summed over the feature grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCertificate {
    pub radius: f64,
    pub l0: f64,
    pub l1: f64,
    /// Lipschitz constant `C_ℓ` of the nonlinearity-plus-pooling map.
    pub lipschitz: f64,
    /// Bound `B_ℓ` on the layer's filter operator norm for any shifts of
    /// norm at most `radius`.
    pub norm_bound: f64,
    pub num_generators: usize,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub bank: FilterBank,
    pub shifts: Arc<ShiftSet>,
    pub nonlinearity: Nonlinearity,
    /// `n_out × n_in`, operator norm at most 1.
    pub pooling: DMatrix<f64>,
    /// Radius `B` of the certificate ball; defaults to the largest shift norm.
    pub certificate_radius: f64,
}

impl Layer {
    pub fn new(
        bank: FilterBank,
        shifts: Arc<ShiftSet>,
        nonlinearity: Nonlinearity,
        pooling: DMatrix<f64>,
    ) -> Result<Self> {
        ensure_generators(bank.num_generators, shifts.num_generators())?;
        ensure_dim(shifts.dim(), pooling.ncols())?;
        let pn = spectral_norm(&pooling);
        if pn > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!("pooling operator norm {pn} exceeds 1")));
        }
        let radius = shifts.max_norm();
        Ok(Layer {
            bank,
            shifts,
            nonlinearity,
            pooling,
            certificate_radius: if radius > 0.0 { radius } else { 1.0 },
        })
    }

    pub fn n_in(&self) -> usize {
        self.shifts.dim()
    }

    pub fn n_out(&self) -> usize {
        self.pooling.nrows()
    }

    /// Feature-summed certificate at the layer's radius.
    pub fn certificate(&self) -> Result<LayerCertificate> {
        self.certificate_at(self.certificate_radius)
    }

    pub fn certificate_at(&self, radius: f64) -> Result<LayerCertificate> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::MissingCertificate(0));
        }
        let mut l0 = 0.0;
        let mut l1 = 0.0;
        let mut norm_bound = 0.0;
        let radii = vec![radius; self.bank.num_generators];
        for p in self.bank.polynomials() {
            l0 += analytic_l0(&p, radius)?;
            l1 += analytic_l1(&p, radius)?.into_iter().fold(0.0, f64::max);
            norm_bound += norm_bound_with(&p, &radii);
        }
        Ok(LayerCertificate {
            radius,
            l0,
            l1,
            lipschitz: self.nonlinearity.lipschitz(),
            norm_bound,
            num_generators: self.shifts.num_generators(),
        })
    }

    /// Layer map with the given shift set standing in for the layer's own.
    pub fn forward_with(&self, x: &DMatrix<f64>, shifts: &ShiftSet) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x, shifts)?.output)
    }

    fn forward_cached(&self, x: &DMatrix<f64>, shifts: &ShiftSet) -> Result<LayerCache> {
        ensure_dim(self.n_in(), x.nrows())?;
        ensure_dim(self.bank.f_in, x.ncols())?;
        ensure_dim(self.n_in(), shifts.dim())?;
        ensure_generators(self.bank.num_generators, shifts.num_generators())?;
        let n = self.n_in();
        let word_vecs: Vec<Vec<DVector<f64>>> = (0..self.bank.f_in)
            .map(|g| word_vectors(&self.bank.words, shifts, &x.column(g).into_owned()))
            .collect();
        let mut pre = DMatrix::zeros(n, self.bank.f_out);
        for f in 0..self.bank.f_out {
            let mut col = DVector::zeros(n);
            for (g, vecs) in word_vecs.iter().enumerate() {
                for (h, v) in self.bank.filter_coeffs(f, g).iter().zip(vecs) {
                    col.axpy(*h, v, 1.0);
                }
            }
            pre.set_column(f, &col);
        }
        let act = pre.map(|v| self.nonlinearity.apply(v));
        let output = &self.pooling * act;
        Ok(LayerCache { word_vecs, pre, output })
    }
}

/// Affine map from the flattened final feature stack to the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct AlgNN {
    layers: Vec<Layer>,
    readout: Readout,
    generation: u64,
    seed: u64,
}

#[derive(Clone, Debug)]
struct LayerCache {
    /// `word_vecs[g][w] = S_w X[:, g]`.
    word_vecs: Vec<Vec<DVector<f64>>>,
    pre: DMatrix<f64>,
    output: DMatrix<f64>,
}

/// Activations recorded by [`AlgNN::forward`] for [`AlgNN::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    layers: Vec<LayerCache>,
    features: DVector<f64>,
    pub output: DVector<f64>,
}

impl ForwardCache {
    /// Output of layer `l` (after pooling).
    pub fn layer_output(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l].output
    }
}

/// Gradients in the layout of [`AlgNN::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

/// Shape of one layer for [`AlgNN::init`].
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub shifts: Arc<ShiftSet>,
    pub words: Vec<Word>,
    pub f_in: usize,
    pub f_out: usize,
    pub nonlinearity: Nonlinearity,
    pub pooling: Pooling,
}

#[derive(Clone, Debug)]
pub enum Pooling {
    Identity,
    /// Keep the first `n_out` coordinates.
    Truncate(usize),
    /// Project onto the first `n_out` columns of a spectral basis.
    Spectral(usize, Arc<SpectralDecomposition>),
    Matrix(DMatrix<f64>),
}

impl Pooling {
    pub fn matrix(&self, n_in: usize) -> Result<DMatrix<f64>> {
        match self {
            Pooling::Identity => Ok(DMatrix::identity(n_in, n_in)),
            Pooling::Truncate(n_out) => {
                if *n_out > n_in {
                    return Err(Error::InvalidArgument(format!("cannot pool {n_in} nodes to {n_out}")));
                }
                Ok(DMatrix::from_fn(*n_out, n_in, |i, j| if i == j { 1.0 } else { 0.0 }))
            }
            Pooling::Spectral(n_out, d) => {
                ensure_dim(n_in, d.dim())?;
                if *n_out > n_in {
                    return Err(Error::InvalidArgument(format!("cannot pool {n_in} nodes to {n_out}")));
                }
                Ok(d.basis().columns(0, *n_out).transpose())
            }
            Pooling::Matrix(m) => Ok(m.clone()),
        }
    }
}

impl AlgNN {
    pub fn new(layers: Vec<Layer>, readout: Readout, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            ensure_dim(pair[0].n_out(), pair[1].n_in())?;
            ensure_dim(pair[0].bank.f_out, pair[1].bank.f_in)?;
        }
        let last = layers.last().expect("non-empty");
        ensure_dim(last.n_out() * last.bank.f_out, readout.weights.ncols())?;
        ensure_dim(readout.weights.nrows(), readout.bias.len())?;
        Ok(AlgNN {
            layers,
            readout,
            generation: 0,
            seed,
        })
    }

    /// Random initialization: filter coefficients uniform on
    /// `±1/√(W·F_in)`, readout weights uniform on `±1/√fan_in`, zero bias.
    pub fn init(specs: Vec<LayerSpec>, output_dim: usize, seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (l, spec) in specs.into_iter().enumerate() {
            let mut r = rng::stream(seed, l as u64);
            let m = spec.shifts.num_generators();
            let mut bank = FilterBank::zeros(spec.words, m, spec.f_in, spec.f_out)?;
            let scale = 1.0 / ((bank.words.len() * spec.f_in) as f64).sqrt();
            for c in &mut bank.coeffs {
                *c = r.random_range(-scale..=scale);
            }
            let pooling = spec.pooling.matrix(spec.shifts.dim())?;
            layers.push(Layer::new(bank, spec.shifts, spec.nonlinearity, pooling)?);
        }
        let last = layers
            .last()
            .ok_or_else(|| Error::InvalidArgument("a network needs at least one layer".into()))?;
        let fan_in = last.n_out() * last.bank.f_out;
        let mut r = rng::stream(seed, u64::MAX);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = DMatrix::from_fn(output_dim, fan_in, |_, _| r.random_range(-scale..=scale));
        let readout = Readout {
            weights,
            bias: DVector::zeros(output_dim),
        };
        Self::new(layers, readout, seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn input_features(&self) -> usize {
        self.layers[0].bank.f_in
    }

    pub fn output_dim(&self) -> usize {
        self.readout.bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.bank.coeffs.len()).sum::<usize>()
            + self.readout.weights.len()
            + self.readout.bias.len()
    }

    /// Filter coefficients layer by layer, then readout weights (column
    /// major), then readout bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.bank.coeffs);
        }
        out.extend_from_slice(self.readout.weights.as_slice());
        out.extend_from_slice(self.readout.bias.as_slice());
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim(self.num_params(), params.len())?;
        let mut k = 0;
        for l in &mut self.layers {
            let len = l.bank.coeffs.len();
            l.bank.coeffs.copy_from_slice(&params[k..k + len]);
            k += len;
        }
        let len = self.readout.weights.len();
        self.readout.weights.as_mut_slice().copy_from_slice(&params[k..k + len]);
        k += len;
        self.readout.bias.as_mut_slice().copy_from_slice(&params[k..]);
        self.generation += 1;
        Ok(())
    }

    /// Mutable access to a layer's filter bank; invalidates forward caches.
    pub fn bank_mut(&mut self, layer: usize) -> &mut FilterBank {
        self.generation += 1;
        &mut self.layers[layer].bank
    }

    pub fn readout_mut(&mut self) -> &mut Readout {
        self.generation += 1;
        &mut self.readout
    }

    pub fn shift_sets(&self) -> Vec<Arc<ShiftSet>> {
        self.layers.iter().map(|l| l.shifts.clone()).collect()
    }

    /// Same parameters on different shift sets.
    pub fn with_shifts(&self, shifts: Vec<Arc<ShiftSet>>) -> Result<AlgNN> {
        ensure_dim(self.layers.len(), shifts.len())?;
        let mut net = self.clone();
        for (layer, s) in net.layers.iter_mut().zip(shifts) {
            ensure_dim(layer.n_in(), s.dim())?;
            ensure_generators(layer.bank.num_generators, s.num_generators())?;
            layer.shifts = s;
        }
        net.generation += 1;
        Ok(net)
    }

    /// Full forward pass with cache. `x` is `n × F_in`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let c = layer.forward_cached(&current, &layer.shifts)?;
            current = c.output.clone();
            caches.push(c);
        }
        let features = DVector::from_column_slice(current.as_slice());
        let output = &self.readout.weights * &features + &self.readout.bias;
        Ok(ForwardCache {
            generation: self.generation,
            layers: caches,
            features,
            output,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// The layer stack `Φ(x)` without the readout, optionally on other
    /// shift sets.
    pub fn layer_map(&self, x: &DMatrix<f64>, shifts: Option<&[Arc<ShiftSet>]>) -> Result<DMatrix<f64>> {
        if let Some(s) = shifts {
            ensure_dim(self.layers.len(), s.len())?;
        }
        let mut current = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let s = shifts.map_or(&*layer.shifts, |s| &*s[l]);
            current = layer.forward_with(&current, s)?;
        }
        Ok(current)
    }

    /// Reverse-mode gradients of `⟨loss_grad, output⟩` with respect to every
    /// parameter.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &DVector<f64>) -> Result<Gradients> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache("parameters changed since the forward pass".into()));
        }
        ensure_dim(self.output_dim(), loss_grad.len())?;

        let grad_w = loss_grad * cache.features.transpose();
        let grad_feat = self.readout.weights.tr_mul(loss_grad);
        let last = self.layers.last().expect("non-empty");
        let mut upstream = DMatrix::from_column_slice(last.n_out(), last.bank.f_out, grad_feat.as_slice());

        let mut layer_grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let bank = &layer.bank;
            let grad_act = layer.pooling.tr_mul(&upstream);
            let grad_pre = grad_act.zip_map(&lc.pre, |g, z| g * layer.nonlinearity.derivative(z));

            let nw = bank.words.len();
            let mut g_coeffs = vec![0.0; bank.coeffs.len()];
            for f in 0..bank.f_out {
                let gz = grad_pre.column(f);
                for g in 0..bank.f_in {
                    let o = bank.offset(f, g);
                    for (w, v) in lc.word_vecs[g].iter().enumerate() {
                        g_coeffs[o + w] = gz.dot(v);
                    }
                }
            }
            layer_grads[l] = g_coeffs;

            if l > 0 {
                let mut grad_in = DMatrix::zeros(layer.n_in(), bank.f_in);
                for f in 0..bank.f_out {
                    let gz = grad_pre.column(f).into_owned();
                    let adj = word_vectors_transposed(&bank.words, &layer.shifts, &gz);
                    for g in 0..bank.f_in {
                        let hs = bank.filter_coeffs(f, g);
                        let mut col = grad_in.column_mut(g);
                        for (h, u) in hs.iter().zip(&adj).take(nw) {
                            col.axpy(*h, u, 1.0);
                        }
                    }
                }
                upstream = grad_in;
            }
        }

        let mut out = Vec::with_capacity(self.num_params());
        for g in layer_grads {
            out.extend(g);
        }
        out.extend_from_slice(grad_w.as_slice());
        out.extend_from_slice(loss_grad.as_slice());
        Ok(Gradients(out))
    }

    /// Sum over layers and filters of the smoothed integral-Lipschitz
    /// penalty, with its gradient in the layout of [`AlgNN::params`].
    pub fn il_penalty(&self) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.num_params()];
        let mut k = 0;
        for layer in &self.layers {
            let bank = &layer.bank;
            for f in 0..bank.f_out {
                for g in 0..bank.f_in {
                    let pen = il_penalty_on(
                        &bank.words,
                        bank.filter_coeffs(f, g),
                        bank.num_generators,
                        layer.certificate_radius,
                        IL_TEMPERATURE,
                    )?;
                    value += pen.value;
                    let o = k + bank.offset(f, g);
                    for (slot, d) in grad[o..o + bank.words.len()].iter_mut().zip(pen.gradient) {
                        *slot += d;
                    }
                }
            }
            k += bank.coeffs.len();
        }
        Ok((value, grad))
    }

    /// Largest analytic integral-Lipschitz constant over all filters.
    pub fn max_l1(&self) -> Result<f64> {
        let mut best = 0.0_f64;
        for layer in &self.layers {
            for p in layer.bank.polynomials() {
                let l1 = analytic_l1(&p, layer.certificate_radius)?;
                best = best.max(l1.into_iter().fold(0.0, f64::max));
            }
        }
        Ok(best)
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `n × F_in` input feature stack.
    pub input: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl Sample {
    pub fn from_signal(x: DVector<f64>, target: DVector<f64>) -> Self {
        let n = x.len();
        Sample {
            input: DMatrix::from_column_slice(n, 1, x.as_slice()),
            target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight `λ_IL` of the integral-Lipschitz penalty.
    pub il_weight: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 16,
            il_weight: 0.0,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs, learning rate and batch size must be positive".into(),
            ));
        }
        if !(self.il_weight >= 0.0) {
            return Err(Error::InvalidArgument("il_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean squared error over the training set at the end of each epoch.
    pub loss: Vec<f64>,
    /// Penalty value (before weighting) at the end of each epoch.
    pub penalty: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Mean squared error over samples and output coordinates.
pub fn mean_squared_error(net: &AlgNN, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in data {
        let y = net.predict(&s.input)?;
        ensure_dim(y.len(), s.target.len())?;
        total += (y - &s.target).norm_squared();
        count += s.target.len();
    }
    Ok(total / count as f64)
}

pub fn evaluate_rmse(net: &AlgNN, data: &[Sample]) -> Result<f64> {
    Ok(mean_squared_error(net, data)?.sqrt())
}

/// Loss and gradient of `MSE + λ·penalty` on a batch.
fn batch_gradient(net: &AlgNN, batch: &[&Sample], il_weight: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    let outputs: usize = batch.iter().map(|s| s.target.len()).sum();
    let scale = 1.0 / outputs as f64;
    for s in batch {
        let cache = net.forward(&s.input)?;
        let err = &cache.output - &s.target;
        loss += err.norm_squared() * scale;
        let g = net.backward(&cache, &(err * (2.0 * scale)))?;
        for (acc, v) in grad.iter_mut().zip(g.0) {
            *acc += v;
        }
    }
    if il_weight > 0.0 {
        let (pen, pg) = net.il_penalty()?;
        loss += il_weight * pen;
        for (acc, v) in grad.iter_mut().zip(pg) {
            *acc += il_weight * v;
        }
    }
    Ok((loss, grad))
}

/// Minimizes `MSE + λ_IL · Σ penalty` with minibatches in a seeded order.
pub fn train(net: &mut AlgNN, data: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = batch_gradient(net, &batch, cfg.il_weight)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("non-finite batch loss {loss}"),
                });
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => adam.step(&mut params, &grad, cfg.learning_rate),
            }
            net.set_params(&params)?;
        }
        let mse = mean_squared_error(net, data)?;
        if !mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: format!("training error became {mse}"),
            });
        }
        history.loss.push(mse);
        history.penalty.push(net.il_penalty()?.0);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerManifest {
    dims: [usize; 2],
    features: [usize; 2],
    nonlinearity: Nonlinearity,
    radius: f64,
    num_generators: usize,
    words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    version: String,
    seed: u64,
    output_dim: usize,
    layers: Vec<LayerManifest>,
}

impl AlgNN {
    /// Writes the checkpoint directory: `model.json`, per-layer filter text
    /// files, pooling and shift CSVs, and `readout.csv` (bias in the last
    /// column).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let bank = &layer.bank;
            for f in 0..bank.f_out {
                for g in 0..bank.f_in {
                    io::write_polynomial(
                        &dir.join(format!("layer{l}_filter_{f}_{g}.txt")),
                        &bank.polynomial(f, g),
                    )?;
                }
            }
            io::write_matrix_csv(&dir.join(format!("layer{l}_pooling.csv")), &layer.pooling)?;
            io::write_shift_set(&dir.join(format!("layer{l}_shifts")), &layer.shifts)?;
            layers.push(LayerManifest {
                dims: [layer.n_in(), layer.n_out()],
                features: [bank.f_in, bank.f_out],
                nonlinearity: layer.nonlinearity,
                radius: layer.certificate_radius,
                num_generators: bank.num_generators,
                words: bank.words.iter().map(Word::to_string).collect(),
            });
        }
        let mut readout = self
            .readout
            .weights
            .clone()
            .insert_column(self.readout.weights.ncols(), 0.0);
        let last = readout.ncols() - 1;
        readout.set_column(last, &self.readout.bias);
        io::write_matrix_csv(&dir.join("readout.csv"), &readout)?;
        io::write_json(
            &dir.join("model.json"),
            &ModelManifest {
                version: crate::VERSION.to_string(),
                seed: self.seed,
                output_dim: self.output_dim(),
                layers,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<AlgNN> {
        let manifest: ModelManifest = io::read_json(&dir.join("model.json"))?;
        let mut layers = Vec::new();
        for (l, lm) in manifest.layers.iter().enumerate() {
            let words = lm.words.iter().map(|s| parse_word(s)).collect::<Result<Vec<_>>>()?;
            let shifts = Arc::new(io::read_shift_set(&dir.join(format!("layer{l}_shifts")))?);
            let mut bank = FilterBank::zeros(words, lm.num_generators, lm.features[0], lm.features[1])?;
            for f in 0..lm.features[1] {
                for g in 0..lm.features[0] {
                    let p = io::read_polynomial(&dir.join(format!("layer{l}_filter_{f}_{g}.txt")), lm.num_generators)?;
                    bank.set_polynomial(f, g, &p)?;
                }
            }
            let pooling = io::read_matrix_csv(&dir.join(format!("layer{l}_pooling.csv")))?;
            let mut layer = Layer::new(bank, shifts, lm.nonlinearity, pooling)?;
            layer.certificate_radius = lm.radius;
            layers.push(layer);
        }
        let readout = io::read_matrix_csv(&dir.join("readout.csv"))?;
        if readout.ncols() == 0 {
            return Err(Error::parse(dir.join("readout.csv").display(), 1, "empty readout"));
        }
        let bias = readout.column(readout.ncols() - 1).into_owned();
        let weights = readout.columns(0, readout.ncols() - 1).into_owned();
        AlgNN::new(layers, Readout { weights, bias }, manifest.seed)
    }
}

fn parse_word(s: &str) -> Result<Word> {
    if s.trim() == "e" {
        return Ok(Word::unit());
    }
    s.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| Error::InvalidArgument(format!("bad word `{s}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Word::new)
}
