//! Helpers shared by the integration suites.
#![allow(dead_code)]

use selfloc::gcn::{GcnModel, GraphInput, ModelDims, ModelTags};
use selfloc::numkit::{Matrix, Rng};

/// Random undirected simple graph: `n` nodes, each pair joined with
/// probability `p`.
pub fn random_edges(rng: &mut Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.uniform() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn neighbors_of(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_input(rng: &mut Rng, n: usize, dim: usize, p: f64) -> (GraphInput, Vec<(usize, usize)>) {
    let edges = random_edges(rng, n, p);
    let input = GraphInput::new(random_matrix(rng, n, dim), neighbors_of(n, &edges)).unwrap();
    (input, edges)
}

/// Model with every weight, the FC bias included, drawn at random.
pub fn random_model(rng: &mut Rng, input: usize, hidden: usize, classes: usize) -> GcnModel {
    let dims = ModelDims {
        input,
        hidden,
        classes,
    };
    let mut model = GcnModel::init(dims, ModelTags::default(), rng).unwrap();
    for v in model.fc_bias.as_mut_slice() {
        *v = 0.5 * rng.normal();
    }
    model
}

pub fn uniform_index(rng: &mut Rng, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

/// Node `i` of the original graph becomes node `perm[i]`.
pub fn permute_input(input: &GraphInput, perm: &[usize]) -> GraphInput {
    let n = input.num_nodes();
    let d = input.features.cols();
    let mut features = Matrix::zeros(n, d);
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        features.row_mut(perm[i]).copy_from_slice(input.features.row(i));
        neighbors[perm[i]] = input.neighbors[i].iter().map(|&j| perm[j]).collect();
    }
    GraphInput::new(features, neighbors).unwrap()
}

/// Dense `ReLU((A + I) H W^T)` by explicit triple loops.
pub fn dense_conv(h: &Matrix, edges: &[(usize, usize)], w: &Matrix) -> Matrix {
    let n = h.rows();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let mut ah = vec![vec![0.0; h.cols()]; n];
    for i in 0..n {
        for k in 0..n {
            for c in 0..h.cols() {
                ah[i][c] += a[i][k] * h.get(k, c);
            }
        }
    }
    let mut out = Matrix::zeros(n, w.rows());
    for i in 0..n {
        for o in 0..w.rows() {
            let mut s = 0.0;
            for c in 0..h.cols() {
                s += ah[i][c] * w.get(o, c);
            }
            out.set(i, o, s.max(0.0));
        }
    }
    out
}

/// Smallest |pre-activation| over both layers; finite differences are only
/// meaningful away from the ReLU kink.
pub fn min_abs_preactivation(model: &GcnModel, input: &GraphInput) -> f64 {
    let t = model.forward_input(input).unwrap();
    t.pre1
        .as_slice()
        .iter()
        .chain(t.pre2.as_slice())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// A random configuration (C = 5, hidden = 8, at most 10 nodes) whose
/// pre-activations all sit at least 1e-3 from the ReLU kink, so a 1e-5
/// central difference never straddles it.
pub fn smooth_config(rng: &mut Rng) -> (GcnModel, GraphInput, usize) {
    loop {
        let n = 1 + uniform_index(rng, 10);
        let dim = 2 + uniform_index(rng, 6);
        let (input, _) = random_input(rng, n, dim, 0.4);
        let model = random_model(rng, dim, 8, 5);
        if min_abs_preactivation(&model, &input) > 1e-3 {
            return (model, input, uniform_index(rng, 5));
        }
    }
}

/// Denominator floor for [`grad_check`].
pub const GRAD_FLOOR: f64 = 1e-5;

pub struct GradCheck {
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
    pub checked: usize,
}

/// Compares every analytic parameter gradient against central differences
/// with step `h`. Relative error is `|a - n| / max(|a|, |n|, floor)`; the
/// floor keeps round-off in the differenced loss (up to about 1e-10
/// absolute at h = 1e-5) from dominating near-zero gradients.
pub fn grad_check(model: &GcnModel, input: &GraphInput, label: usize, h: f64, floor: f64) -> GradCheck {
    let trace = model.forward_input(input).unwrap();
    let (grads, _) = model.backward(&trace, label).unwrap();
    let analytic = [&grads.w1, &grads.w2, &grads.fc_weight, &grads.fc_bias];
    let mut max_rel: f64 = 0.0;
    let mut worst = (0.0, 0.0);
    let mut checked = 0;
    for (p, g) in analytic.iter().enumerate() {
        for idx in 0..g.as_slice().len() {
            let mut plus = model.clone();
            plus.params_mut()[p].as_mut_slice()[idx] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].as_mut_slice()[idx] -= h;
            let numeric = (plus.loss(input, label).unwrap() - minus.loss(input, label).unwrap()) / (2.0 * h);
            let a = g.as_slice()[idx];
            checked += 1;
            let scale = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / scale;
            if rel > max_rel {
                max_rel = rel;
                worst = (a, numeric);
            }
        }
    }
    GradCheck {
        max_rel_error: max_rel,
        worst,
        checked,
    }
}
