#![allow(dead_code)]

use gpg_core::gcn::{forward, Activation, GcnParams, LayerSpec};
use gpg_core::graph::{shift_operator, FilterTaps, Normalization, Permutation, RobotGraph};
use gpg_core::ShiftOperator;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected graph: a random spanning tree plus extra edges.
pub fn connected_graph<R: Rng>(rng: &mut R, n: usize, extra: usize) -> RobotGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((order[i], order[rng.random_range(0..i)]));
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    RobotGraph::from_edges(n, edges)
}

pub fn random_normalization<R: Rng>(rng: &mut R) -> Normalization {
    match rng.random_range(0..3) {
        0 => Normalization::RawAdjacency,
        1 => Normalization::DegreeNormalized,
        _ => Normalization::SelfLoopNormalized,
    }
}

pub fn random_shift<R: Rng>(rng: &mut R, n: usize) -> (RobotGraph, ShiftOperator) {
    let extra = rng.random_range(0..=n);
    let g = connected_graph(rng, n, extra);
    let norm = random_normalization(rng);
    let s = shift_operator(&g, norm);
    (g, s)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_taps<R: Rng>(rng: &mut R, order: usize, f_in: usize, f_out: usize) -> FilterTaps {
    FilterTaps::new(
        (0..=order)
            .map(|_| random_matrix(rng, f_in, f_out))
            .collect(),
    )
    .unwrap()
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Permutation {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    Permutation::new(p).unwrap()
}

/// Dense `Pᵀ` for a permutation (row `i` has its one at column `perm[i]`).
pub fn permutation_matrix(p: &Permutation) -> Array2<f64> {
    let n = p.len();
    let mut m = Array2::zeros((n, n));
    for (i, &j) in p.as_slice().iter().enumerate() {
        m[[i, j]] = 1.0;
    }
    m
}

/// Random network with `layers` layers: Tanh hidden layers and a linear head.
pub fn random_network<R: Rng>(
    rng: &mut R,
    f_in: usize,
    layers: usize,
    max_order: usize,
) -> GcnParams {
    let hidden: Vec<usize> = (1..layers).map(|_| rng.random_range(1..=5)).collect();
    let specs: Vec<LayerSpec> = LayerSpec::stack(f_in, &hidden, 0)
        .into_iter()
        .map(|s| LayerSpec {
            order: rng.random_range(0..=max_order),
            ..s
        })
        .collect();
    assert!(specs[..specs.len() - 1]
        .iter()
        .all(|s| s.activation == Activation::Tanh));
    let layers = specs
        .iter()
        .map(|s| random_taps(rng, s.order, s.f_in, s.f_out))
        .collect();
    let log_std = [rng.random_range(-1.0..0.5), rng.random_range(-1.0..0.5)];
    GcnParams::from_layers(specs, layers, log_std).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `Σ_t w_t Σ_n log π(a_nt | x_t)`, the objective whose gradient `backward` returns.
pub fn surrogate(
    s: &ShiftOperator,
    xs: &[Array2<f64>],
    acts: &[Array2<f64>],
    ws: &[f64],
    params: &GcnParams,
) -> f64 {
    xs.iter()
        .zip(acts)
        .zip(ws)
        .map(|((x, a), w)| {
            let dist = forward(s, x.view(), params).unwrap();
            w * dist.log_prob(a.view()).unwrap().iter().sum::<f64>()
        })
        .sum()
}

/// Central differences of [`surrogate`] in every flat parameter.
pub fn central_difference(
    s: &ShiftOperator,
    xs: &[Array2<f64>],
    acts: &[Array2<f64>],
    ws: &[f64],
    params: &GcnParams,
    h: f64,
) -> Vec<f64> {
    let theta = params.to_flat();
    let mut probe = params.clone();
    (0..theta.len())
        .map(|i| {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.set_flat(&t).unwrap();
            let up = surrogate(s, xs, acts, ws, &probe);
            t[i] = theta[i] - h;
            probe.set_flat(&t).unwrap();
            let down = surrogate(s, xs, acts, ws, &probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error at most 1e-4, or absolute error at most 1e-7 near zero.
pub fn gradients_agree(analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs());
        if abs > 1e-7 && rel > 1e-4 {
            return Err(format!("param {i}: analytic {a} numeric {n} (rel {rel:e})"));
        }
    }
    Ok(())
}

/// Minimum assignment cost by enumerating every permutation (Heap's algorithm).
pub fn brute_force_min(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| cost[[i, j]])
            .sum::<f64>()
    };
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}
