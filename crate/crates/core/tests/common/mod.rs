//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use lsm_core::grid::{Grid, GridHeader, GridStack};
use lsm_core::nn::{accumulate_gradient, Activation, Arch, Dataset, Layer, ModelSpec, Padding, Tensor};
use lsm_core::util::rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect()
}

/// Rows with correlated columns: a random mixing of independent normals.
pub fn correlated_matrix(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
    let z = normal_matrix(seed, n, p);
    let mix = normal_matrix(seed ^ 0x5eed, p, p);
    z.iter()
        .map(|row| {
            (0..p)
                .map(|j| (0..p).map(|i| row[i] * mix[i][j]).sum::<f64>() + 3.0 * j as f64)
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gradients

/// Max relative error of the reverse-mode weight gradient against central
/// differences with step `h`.
pub fn gradcheck(spec: &ModelSpec, weights: &[f64], input: &Tensor, label: u8, h: f64) -> f64 {
    gradcheck_at(spec, weights, input, label, h, &(0..weights.len()).collect::<Vec<_>>())
}

/// As [`gradcheck`], restricted to the given weight indices.
pub fn gradcheck_at(spec: &ModelSpec, weights: &[f64], input: &Tensor, label: u8, h: f64, indices: &[usize]) -> f64 {
    let mut grad = vec![0.0; weights.len()];
    accumulate_gradient(spec, weights, input, label, 1.0, &mut grad).unwrap();
    let loss = |w: &[f64]| {
        let mut g = vec![0.0; w.len()];
        accumulate_gradient(spec, w, input, label, 1.0, &mut g).unwrap()
    };
    let mut w = weights.to_vec();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let w0 = w[i];
        w[i] = w0 + h;
        let up = loss(&w);
        w[i] = w0 - h;
        let down = loss(&w);
        w[i] = w0;
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

fn dense(inputs: usize, outputs: usize, activation: Activation) -> Layer {
    Layer::Dense {
        inputs,
        outputs,
        activation,
    }
}

/// One small network per layer type, each ending in a single logit.
pub fn gradcheck_specs() -> Vec<(&'static str, ModelSpec)> {
    let spec = |arch, input_shape: Vec<usize>, layers| ModelSpec {
        arch,
        input_shape,
        layers,
        seed: 3,
    };
    vec![
        (
            "dense",
            spec(
                Arch::Cnn1d,
                vec![1, 1, 3],
                vec![dense(3, 4, Activation::Gelu), dense(4, 1, Activation::None)],
            ),
        ),
        (
            "conv1d",
            spec(
                Arch::Cnn1d,
                vec![6],
                vec![
                    Layer::Conv1d {
                        in_ch: 1,
                        out_ch: 3,
                        kernel: 3,
                        padding: Padding::Same,
                        activation: Activation::Gelu,
                    },
                    Layer::Conv1d {
                        in_ch: 3,
                        out_ch: 2,
                        kernel: 3,
                        padding: Padding::Valid,
                        activation: Activation::None,
                    },
                    Layer::GlobalAvgPool,
                    dense(2, 1, Activation::None),
                ],
            ),
        ),
        (
            "conv2d",
            spec(
                Arch::Cnn2d,
                vec![5, 5, 2],
                vec![
                    Layer::Conv2d {
                        in_ch: 2,
                        out_ch: 3,
                        kernel: 3,
                        padding: Padding::Same,
                        activation: Activation::Gelu,
                    },
                    Layer::MaxPool2d { size: 2 },
                    Layer::Conv2d {
                        in_ch: 3,
                        out_ch: 2,
                        kernel: 1,
                        padding: Padding::Valid,
                        activation: Activation::None,
                    },
                    Layer::GlobalAvgPool,
                    dense(2, 1, Activation::None),
                ],
            ),
        ),
        (
            "layernorm",
            spec(
                Arch::Vit,
                vec![2, 1, 4],
                vec![Layer::LayerNorm { dim: 4 }, Layer::GlobalAvgPool, dense(4, 1, Activation::None)],
            ),
        ),
        (
            "attention",
            spec(
                Arch::Vit,
                vec![3, 1, 4],
                vec![
                    Layer::MultiHeadAttention { dim: 4, heads: 2 },
                    Layer::GlobalAvgPool,
                    dense(4, 1, Activation::None),
                ],
            ),
        ),
        (
            "positional",
            spec(
                Arch::Vit,
                vec![2, 2, 3],
                vec![
                    Layer::PositionalEmbedding { tokens: 4, dim: 3 },
                    Layer::ClassToken { dim: 3 },
                    Layer::EncoderBlock {
                        dim: 3,
                        heads: 1,
                        ffn_dim: 4,
                    },
                    Layer::TakeClassToken,
                    dense(3, 1, Activation::None),
                ],
            ),
        ),
        (
            "sigmoid_bce",
            spec(Arch::Cnn1d, vec![1, 1, 2], vec![dense(2, 1, Activation::None)]),
        ),
    ]
}

/// Random weights and input for a gradient check at point `k`.
pub fn random_point(spec: &ModelSpec, k: u64) -> (Vec<f64>, Tensor, u8) {
    let mut r = rng(1000 + k);
    let w = (0..spec.param_count()).map(|_| r.random_range(-0.8..0.8)).collect();
    let n: usize = spec.input_shape.iter().product();
    let x = (0..n).map(|_| r.random_range(-1.5..1.5)).collect();
    (w, Tensor::new(spec.input_shape.clone(), x), (k % 2) as u8)
}

// ---------------------------------------------------------------------------
// ranking

/// O(n^2) Mann-Whitney statistic with ties counted one half.
pub fn mann_whitney(y: &[u8], s: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

// ---------------------------------------------------------------------------
// least squares

/// R^2 of y on x (with intercept) by gradient descent on the centered problem.
pub fn r2_gradient_descent(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len();
    let q = x.len();
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|e| e - m).collect::<Vec<f64>>()
    };
    let xc: Vec<Vec<f64>> = x.iter().map(|c| center(c)).collect();
    let yc = center(y);
    // step from a Gershgorin bound on the Gram matrix
    let gram = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let bound = (0..q)
        .map(|i| (0..q).map(|j| gram(&xc[i], &xc[j]).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / bound;
    let mut b = vec![0.0; q];
    for _ in 0..200_000 {
        let resid: Vec<f64> = (0..n)
            .map(|t| yc[t] - (0..q).map(|j| b[j] * xc[j][t]).sum::<f64>())
            .collect();
        let g: Vec<f64> = (0..q).map(|j| gram(&xc[j], &resid)).collect();
        let mut moved = 0.0f64;
        for j in 0..q {
            b[j] += step * g[j];
            moved = moved.max((step * g[j]).abs());
        }
        if moved < 1e-15 {
            break;
        }
    }
    let sse: f64 = (0..n)
        .map(|t| (yc[t] - (0..q).map(|j| b[j] * xc[j][t]).sum::<f64>()).powi(2))
        .sum();
    let sst: f64 = yc.iter().map(|v| v * v).sum();
    1.0 - sse / sst
}

// ---------------------------------------------------------------------------
// Jenks

/// Minimum within-class SSD over every placement of k-1 cuts that keeps runs
/// of equal values together. `sorted` must be ascending.
pub fn jenks_exhaustive(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    let cuts: Vec<usize> = (1..n).filter(|&i| sorted[i] != sorted[i - 1]).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn ssd(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum()
    }
    fn rec(sorted: &[f64], cuts: &[usize], from: usize, left: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if left == 0 {
            let mut start = 0;
            let mut total = 0.0;
            for &c in chosen.iter().chain(std::iter::once(&sorted.len())) {
                total += ssd(&sorted[start..c]);
                start = c;
            }
            *best = best.min(total);
            return;
        }
        for i in from..cuts.len() {
            chosen.push(cuts[i]);
            rec(sorted, cuts, i + 1, left - 1, chosen, best);
            chosen.pop();
        }
    }
    rec(sorted, &cuts, 0, k - 1, &mut chosen, &mut best);
    best
}

// ---------------------------------------------------------------------------
// rasters

/// Smooth random stack with `bands` layers, every cell valid.
pub fn random_stack(seed: u64, nrows: usize, ncols: usize, bands: usize, cellsize: f64) -> GridStack {
    let header = GridHeader::new(ncols, nrows, 500.0, 1000.0, cellsize);
    let mut r = rng(seed);
    let grids = (0..bands)
        .map(|b| {
            let values = (0..nrows * ncols)
                .map(|i| {
                    let (row, col) = ((i / ncols) as f64, (i % ncols) as f64);
                    (row * 0.1 + b as f64).sin() + (col * 0.07).cos() + r.random_range(-0.1..0.1)
                })
                .collect();
            Grid::new(header, values).unwrap()
        })
        .collect();
    lsm_core::grid::stack(grids, (0..bands).map(|b| format!("b{b}")).collect()).unwrap()
}

/// 200 points with label x0 + x1 > 0 and a margin around the boundary, as
/// vectors (`window` 0) or constant windows.
pub fn separable(window: usize, seed: u64) -> (Dataset, Dataset) {
    let mut r = rng(seed);
    let mut sets = (Dataset::default(), Dataset::default());
    let mut count = 0;
    while count < 200 {
        let a: f64 = r.random_range(-1.0..1.0);
        let b: f64 = r.random_range(-1.0..1.0);
        if (a + b).abs() < 0.2 {
            continue;
        }
        let label = (a + b > 0.0) as u8;
        let input = if window == 0 {
            Tensor::new(vec![2], vec![a, b])
        } else {
            let data = (0..window * window).flat_map(|_| [a, b]).collect();
            Tensor::new(vec![window, window, 2], data)
        };
        let set = if count % 10 < 7 { &mut sets.0 } else { &mut sets.1 };
        set.inputs.push(input);
        set.labels.push(label);
        count += 1;
    }
    sets
}
