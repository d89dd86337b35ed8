//! Naive reference implementations shared by the integration suites.

#![allow(dead_code)]

use pat_core::attention::{AttentionLayerParams, BiasMode};
use pat_core::Tensor;
use rand::Rng;

pub fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn proj(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, row: usize) -> Vec<f64> {
    let (c_in, c_out) = (w.rows(), w.cols());
    (0..c_out).map(|o| b.data()[o] + (0..c_in).map(|i| x.at(row, i) * w.at(i, o)).sum::<f64>()).collect()
}

/// Textbook multi-head softmax attention over all `N` rows of `x`, with an
/// optional absolute `N x N` bias per slot and a scalar block bias.
pub fn full_attention(x: &Tensor<f64>, p: &AttentionLayerParams<f64>) -> Tensor<f64> {
    let n = x.rows();
    let c = x.cols();
    let d = c / p.heads;
    let q: Vec<Vec<f64>> = (0..n).map(|r| proj(x, &p.w_q, &p.b_q, r)).collect();
    let k: Vec<Vec<f64>> = (0..n).map(|r| proj(x, &p.w_k, &p.b_k, r)).collect();
    let v: Vec<Vec<f64>> = (0..n).map(|r| proj(x, &p.w_v, &p.b_v, r)).collect();
    let block = p.block_bias.as_ref().map_or(0.0, |b| b.data()[0]);
    let mut cat = vec![vec![0.0; c]; n];
    for h in 0..p.heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for (j, s) in scores.iter_mut().enumerate() {
                let dot: f64 = (0..d).map(|t| q[i][h * d + t] * k[j][h * d + t]).sum();
                *s = dot / (d as f64).sqrt() + block;
                if let Some(table) = &p.bias {
                    assert_eq!(table.mode, BiasMode::Absolute, "oracle only knows absolute tables");
                    let theta = table.theta.values().next().unwrap();
                    *s += theta.data()[table.slot(h) * n * n + i * n + j];
                }
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in 0..d {
                cat[i][h * d + t] = (0..n).map(|j| e[j] / z * v[j][h * d + t]).sum();
            }
        }
    }
    let cat = Tensor::from_fn(&[n, c], |i| cat[i / c][i % c]);
    Tensor::from_fn(&[n, c], |i| {
        let (r, o) = (i / c, i % c);
        p.b_o.data()[o] + (0..c).map(|t| cat.at(r, t) * p.w_o.at(t, o)).sum::<f64>()
    })
}

/// Count of sensors covering each cell for square kernels, by direct
/// enumeration of every core and its Chebyshev ring.
pub fn square_multiplicity(h: usize, w: usize, core: usize, radius: usize) -> Vec<Vec<u32>> {
    let mut m = vec![vec![0u32; w]; h];
    for r0 in (0..h).step_by(core) {
        for c0 in (0..w).step_by(core) {
            let rlo = r0.saturating_sub(radius);
            let clo = c0.saturating_sub(radius);
            let rhi = (r0 + core + radius).min(h);
            let chi = (c0 + core + radius).min(w);
            for row in m.iter_mut().take(rhi).skip(rlo) {
                for v in row.iter_mut().take(chi).skip(clo) {
                    *v += 1;
                }
            }
        }
    }
    m
}
