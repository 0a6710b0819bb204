//! Graph convolutional policy network.
//!
//! Layers are polynomial graph filters followed by a pointwise activation:
//! `z^{ℓ+1} = σ_ℓ(Σ_k S^k z^ℓ H_{ℓk})`, with `z^0` the stacked robot
//! observations. The last layer outputs the per-robot mean of a diagonal
//! Gaussian over 2D actions; its log standard deviation is a learned 2-vector
//! shared by all robots.
//!
//! Gradients are computed in closed form by reverse accumulation through the
//! filter layers (no general autodiff).

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{check_signal, FilterTaps, GraphError, ShiftOperator};

/// `ln(2π)`
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default initial action standard deviation.
pub const DEFAULT_INIT_STD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcnError {
    #[error("layer specs do not chain: {0}")]
    SpecMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, u: &mut Array2<f64>) {
        if self == Activation::Tanh {
            u.mapv_inplace(f64::tanh);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub f_in: usize,
    pub f_out: usize,
    /// Polynomial order `K` of the layer's filter.
    pub order: usize,
    pub activation: Activation,
}

impl LayerSpec {
    /// Tanh hidden layers of the given widths followed by an identity output
    /// layer of width 2, all with filter order `order`.
    pub fn stack(f_in: usize, hidden: &[usize], order: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut width = f_in;
        for &h in hidden {
            specs.push(LayerSpec {
                f_in: width,
                f_out: h,
                order,
                activation: Activation::Tanh,
            });
            width = h;
        }
        specs.push(LayerSpec {
            f_in: width,
            f_out: 2,
            order,
            activation: Activation::Identity,
        });
        specs
    }
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), GcnError> {
    let last = specs
        .last()
        .ok_or_else(|| GcnError::SpecMismatch("at least one layer is required".into()))?;
    if last.f_out != 2 || last.activation != Activation::Identity {
        return Err(GcnError::SpecMismatch(
            "the final layer must have 2 outputs and identity activation".into(),
        ));
    }
    for (l, spec) in specs.iter().enumerate() {
        if spec.f_in == 0 || spec.f_out == 0 {
            return Err(GcnError::SpecMismatch(format!(
                "layer {l} has a zero width"
            )));
        }
    }
    for (l, pair) in specs.windows(2).enumerate() {
        if pair[0].f_out != pair[1].f_in {
            return Err(GcnError::SpecMismatch(format!(
                "layer {l} outputs {} features but layer {} expects {}",
                pair[0].f_out,
                l + 1,
                pair[1].f_in
            )));
        }
    }
    Ok(())
}

/// Filter taps of every layer plus the action log standard deviation.
///
/// Gradients share this layout (see [`GcnGradient`]).
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    specs: Vec<LayerSpec>,
    layers: Vec<FilterTaps>,
    pub log_std: [f64; 2],
}

/// Gradient with respect to every entry of a [`GcnParams`].
pub type GcnGradient = GcnParams;

impl GcnParams {
    /// Build from explicit layers; tap shapes must match `specs`.
    pub fn from_layers(
        specs: Vec<LayerSpec>,
        layers: Vec<FilterTaps>,
        log_std: [f64; 2],
    ) -> Result<Self, GcnError> {
        validate_specs(&specs)?;
        if specs.len() != layers.len() {
            return Err(GcnError::SpecMismatch(format!(
                "{} specs but {} layers",
                specs.len(),
                layers.len()
            )));
        }
        for (l, (spec, taps)) in specs.iter().zip(&layers).enumerate() {
            if taps.order() != spec.order || taps.f_in() != spec.f_in || taps.f_out() != spec.f_out
            {
                return Err(GcnError::SpecMismatch(format!(
                    "layer {l} taps are {}x{}x{} but its LayerSpec declares {}x{}x{}",
                    taps.order() + 1,
                    taps.f_in(),
                    taps.f_out(),
                    spec.order + 1,
                    spec.f_in,
                    spec.f_out
                )));
            }
        }
        Ok(Self {
            specs,
            layers,
            log_std,
        })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, GcnError> {
        validate_specs(specs)?;
        Ok(Self {
            specs: specs.to_vec(),
            layers: specs
                .iter()
                .map(|s| FilterTaps::zeros(s.order, s.f_in, s.f_out))
                .collect(),
            log_std: [0.0; 2],
        })
    }

    /// An all-zero value with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.specs).expect("specs were validated at construction")
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[FilterTaps] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [FilterTaps] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.specs[0].f_in
    }

    /// Hops of information that reach each robot's output.
    pub fn receptive_field(&self) -> usize {
        self.specs.iter().map(|s| s.order).sum()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| (l.order() + 1) * l.f_in() * l.f_out())
            .sum::<usize>()
            + 2
    }

    /// Every parameter in a fixed order: layer, tap, row-major entries, then
    /// the two log standard deviations.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            for tap in layer.taps() {
                out.extend(tap.iter().copied());
            }
        }
        out.extend(self.log_std);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), GcnError> {
        if flat.len() != self.n_params() {
            return Err(GcnError::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for tap in layer.taps_mut() {
                for (dst, src) in tap.iter_mut().zip(&mut it) {
                    *dst = src;
                }
            }
        }
        self.log_std = [it.next().unwrap(), it.next().unwrap()];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// `self += scale * other` (same layout required).
    pub fn add_scaled(&mut self, scale: f64, other: &GcnParams) {
        debug_assert_eq!(self.specs, other.specs);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ta, tb) in a.taps_mut().iter_mut().zip(b.taps()) {
                ta.scaled_add(scale, tb);
            }
        }
        for d in 0..2 {
            self.log_std[d] += scale * other.log_std[d];
        }
    }
}

/// Random taps with per-layer scale `1/√(F_in (K+1))`; `log_std` set to
/// `init_log_std` on both axes.
pub fn init_params(
    specs: &[LayerSpec],
    seed: u64,
    init_log_std: f64,
) -> Result<GcnParams, GcnError> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let scale = 1.0 / ((s.f_in * (s.order + 1)) as f64).sqrt();
            let dist = Normal::new(0.0, scale).expect("scale is positive");
            let taps = (0..=s.order)
                .map(|_| Array2::from_shape_fn((s.f_in, s.f_out), |_| rng.sample(dist)))
                .collect();
            FilterTaps::new(taps).expect("uniform tap shapes")
        })
        .collect();
    Ok(GcnParams {
        specs: specs.to_vec(),
        layers,
        log_std: [init_log_std; 2],
    })
}

/// Per-robot diagonal Gaussian over 2D actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDist {
    pub means: Array2<f64>,
    pub stds: [f64; 2],
}

impl PolicyDist {
    pub fn n_robots(&self) -> usize {
        self.means.nrows()
    }

    /// Log density of each robot's action row.
    pub fn log_prob(&self, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>, GcnError> {
        if actions.dim() != self.means.dim() {
            return Err(GcnError::DimensionMismatch(format!(
                "actions are {:?} but the policy has {:?}",
                actions.dim(),
                self.means.dim()
            )));
        }
        let log_norm: f64 = self.stds.iter().map(|s| s.ln()).sum::<f64>() + LN_2PI;
        Ok(self
            .means
            .outer_iter()
            .zip(actions.outer_iter())
            .map(|(mu, a)| {
                let quad: f64 = (0..2)
                    .map(|d| {
                        let z = (a[d] - mu[d]) / self.stds[d];
                        z * z
                    })
                    .sum();
                -0.5 * quad - log_norm
            })
            .collect())
    }

    /// Independent draws for every robot with their log densities.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
        let mut actions = self.means.clone();
        for mut row in actions.outer_iter_mut() {
            for d in 0..2 {
                let eps: f64 = rng.sample(StandardNormal);
                row[d] += self.stds[d] * eps;
            }
        }
        let log_probs = self.log_prob(actions.view()).expect("shapes match");
        (actions, log_probs)
    }

    /// The zero-variance limit: every robot takes its mean action.
    pub fn mode(&self) -> Array2<f64> {
        self.means.clone()
    }
}

pub fn sample_actions<R: Rng + ?Sized>(dist: &PolicyDist, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
    dist.sample(rng)
}

pub fn log_prob(dist: &PolicyDist, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>, GcnError> {
    dist.log_prob(actions)
}

/// Intermediate values of one layer needed by the backward pass.
struct LayerTrace {
    /// `S^k z` for `k = 0..=K`.
    shifted: Vec<Array2<f64>>,
    /// Post-activation output.
    output: Array2<f64>,
}

fn forward_trace(
    s: &ShiftOperator,
    x: ArrayView2<'_, f64>,
    params: &GcnParams,
) -> Result<Vec<LayerTrace>, GcnError> {
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(params.layers.len());
    for (spec, taps) in params.specs.iter().zip(&params.layers) {
        let input = traces.last().map_or(x, |t| t.output.view());
        check_signal(s, input, taps)?;
        let mut shifted = Vec::with_capacity(taps.order() + 1);
        shifted.push(input.to_owned());
        for _ in 0..taps.order() {
            let next = s.apply(shifted.last().unwrap().view());
            shifted.push(next);
        }
        let mut u = shifted[0].dot(&taps.taps()[0]);
        for (y, h) in shifted.iter().zip(taps.taps()).skip(1) {
            u += &y.dot(h);
        }
        spec.activation.apply(&mut u);
        traces.push(LayerTrace { shifted, output: u });
    }
    Ok(traces)
}

/// Per-robot action distributions for observations `x` on shift operator `s`.
pub fn forward(
    s: &ShiftOperator,
    x: ArrayView2<'_, f64>,
    params: &GcnParams,
) -> Result<PolicyDist, GcnError> {
    let mut traces = forward_trace(s, x, params)?;
    let means = traces.pop().expect("at least one layer").output;
    Ok(PolicyDist {
        means,
        stds: params.log_std.map(f64::exp),
    })
}

/// Gradient of `Σ_t w_t Σ_n log π_n(a_nt | x_t)` with respect to `params`.
///
/// All timesteps share the shift operator `s`.
pub fn backward(
    s: &ShiftOperator,
    observations: &[Array2<f64>],
    actions: &[Array2<f64>],
    weights: &[f64],
    params: &GcnParams,
) -> Result<GcnGradient, GcnError> {
    if observations.len() != actions.len() || observations.len() != weights.len() {
        return Err(GcnError::DimensionMismatch(format!(
            "{} observations, {} actions, {} weights",
            observations.len(),
            actions.len(),
            weights.len()
        )));
    }
    let mut grad = params.zeros_like();
    let var = params.log_std.map(|l| (2.0 * l).exp());
    for ((x, a), &w) in observations.iter().zip(actions).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let traces = forward_trace(s, x.view(), params)?;
        let mu = &traces.last().unwrap().output;
        if a.dim() != mu.dim() {
            return Err(GcnError::DimensionMismatch(format!(
                "actions are {:?} but the policy has {:?}",
                a.dim(),
                mu.dim()
            )));
        }
        // d/dμ of the Gaussian log density, weighted.
        let mut upstream = Array2::zeros(mu.raw_dim());
        for ((r, d), g) in upstream.indexed_iter_mut() {
            let diff: f64 = a[[r, d]] - mu[[r, d]];
            *g = w * diff / var[d];
            grad.log_std[d] += w * (diff * diff / var[d] - 1.0);
        }
        accumulate_layers(s, &traces, params, &mut grad, upstream);
    }
    Ok(grad)
}

/// Push `upstream = dL/d(output of last layer)` back through every layer,
/// adding tap gradients into `grad`.
fn accumulate_layers(
    s: &ShiftOperator,
    traces: &[LayerTrace],
    params: &GcnParams,
    grad: &mut GcnGradient,
    mut upstream: Array2<f64>,
) {
    for l in (0..traces.len()).rev() {
        let trace = &traces[l];
        let taps = params.layers[l].taps();
        if params.specs[l].activation == Activation::Tanh {
            Zip::from(&mut upstream)
                .and(&trace.output)
                .for_each(|g, &y| *g *= 1.0 - y * y);
        }
        for (k, (y, gtap)) in trace
            .shifted
            .iter()
            .zip(grad.layers[l].taps_mut())
            .enumerate()
        {
            debug_assert!(k < taps.len());
            *gtap += &y.t().dot(&upstream);
        }
        if l == 0 {
            break;
        }
        // dL/dz = Σ_k (Sᵀ)^k (upstream H_kᵀ), by Horner's rule.
        let order = taps.len() - 1;
        let mut acc = upstream.dot(&taps[order].t());
        for k in (0..order).rev() {
            acc = s.apply_transpose(acc.view());
            acc += &upstream.dot(&taps[k].t());
        }
        upstream = acc;
    }
}
