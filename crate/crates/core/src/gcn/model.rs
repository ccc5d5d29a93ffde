use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{argmax, axpy, softmax, Matrix, Rng, LOG_FLOOR};
use crate::scenegraph::{GraphKind, SceneGraph};
use crate::teacher::ScoreKind;

/// Tags describing what the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTags {
    pub feature_variant: ScoreKind,
    pub graph_kind: GraphKind,
    /// Node roles of the multi-view attribute set; empty for single-view.
    #[serde(default)]
    pub attributes: Vec<String>,
    pub fc_bias: bool,
}

impl Default for ModelTags {
    fn default() -> Self {
        ModelTags {
            feature_variant: ScoreKind::ReciprocalRank,
            graph_kind: GraphKind::Mvil,
            attributes: Vec::new(),
            fc_bias: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Node features plus adjacency, ready for the convolution layers.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: Matrix,
    pub neighbors: Vec<Vec<usize>>,
}

impl GraphInput {
    pub fn new(features: Matrix, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        if neighbors.len() != features.rows() {
            return Err(Error::Structure(format!(
                "{} adjacency lists for {} nodes",
                neighbors.len(),
                features.rows()
            )));
        }
        let n = features.rows();
        for (i, adj) in neighbors.iter().enumerate() {
            if let Some(&j) = adj.iter().find(|&&j| j >= n) {
                return Err(Error::Structure(format!(
                    "node {i} lists neighbor {j} outside 0..{n}"
                )));
            }
        }
        // Backpropagation relies on a symmetric adjacency without self-loops.
        for (i, adj) in neighbors.iter().enumerate() {
            for &j in adj {
                if j == i {
                    return Err(Error::Structure(format!("node {i} lists itself as a neighbor")));
                }
                let forward = adj.iter().filter(|&&k| k == j).count();
                let back = neighbors[j].iter().filter(|&&k| k == i).count();
                if forward != back {
                    return Err(Error::Structure(format!(
                        "adjacency is not symmetric between nodes {i} and {j}"
                    )));
                }
            }
        }
        Ok(GraphInput {
            features,
            neighbors,
        })
    }

    pub fn from_graph(g: &SceneGraph) -> Result<Self> {
        let rows: Vec<Vec<f64>> = g.nodes.iter().map(|n| n.feature.values.clone()).collect();
        if rows.is_empty() {
            return Err(Error::Structure("graph has no nodes".into()));
        }
        GraphInput::new(Matrix::from_rows(&rows)?, g.neighbors())
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Row `i` of the result is `H_i + sum of H_j over neighbors j`.
pub fn aggregate(h: &Matrix, neighbors: &[Vec<usize>]) -> Result<Matrix> {
    if neighbors.len() != h.rows() {
        return Err(Error::Structure(format!(
            "{} adjacency lists for {} nodes",
            neighbors.len(),
            h.rows()
        )));
    }
    let mut out = h.clone();
    for (i, adj) in neighbors.iter().enumerate() {
        for &j in adj {
            if j >= h.rows() {
                return Err(Error::Structure(format!(
                    "edge ({i}, {j}) outside 0..{}",
                    h.rows()
                )));
            }
            axpy(1.0, h.row(j), out.row_mut(i));
        }
    }
    Ok(out)
}

/// One graph convolution: `ReLU((H_i + sum_j H_j) Wᵀ)` per node, no bias.
pub fn conv_layer(h: &Matrix, neighbors: &[Vec<usize>], w: &Matrix) -> Result<Matrix> {
    let s = aggregate(h, neighbors)?;
    Ok(s.matmul_transposed(w)?.relu())
}

/// Every intermediate of one forward pass, as needed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub neighbors: Vec<Vec<usize>>,
    pub h0: Matrix,
    pub agg1: Matrix,
    pub pre1: Matrix,
    pub h1: Matrix,
    pub agg2: Matrix,
    pub pre2: Matrix,
    pub h2: Matrix,
    pub readout: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub fc_weight: Matrix,
    pub fc_bias: Matrix,
}

impl GcnGradients {
    pub fn zeros_like(m: &GcnModel) -> Self {
        GcnGradients {
            w1: Matrix::zeros(m.w1.rows(), m.w1.cols()),
            w2: Matrix::zeros(m.w2.rows(), m.w2.cols()),
            fc_weight: Matrix::zeros(m.fc_weight.rows(), m.fc_weight.cols()),
            fc_bias: Matrix::zeros(1, m.fc_bias.cols()),
        }
    }

    pub fn add_assign(&mut self, other: &GcnGradients) -> Result<()> {
        self.w1.add_assign(&other.w1)?;
        self.w2.add_assign(&other.w2)?;
        self.fc_weight.add_assign(&other.fc_weight)?;
        self.fc_bias.add_assign(&other.fc_bias)
    }

    pub fn scale(&mut self, factor: f64) {
        self.w1.scale(factor);
        self.w2.scale(factor);
        self.fc_weight.scale(factor);
        self.fc_bias.scale(factor);
    }
}

/// Two sum-aggregation graph convolutions, mean readout, then a fully
/// connected layer and softmax.
///
/// Weight layout: `w1` is `hidden x input`, `w2` is `hidden x hidden`,
/// `fc_weight` is `classes x hidden`, `fc_bias` is `1 x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub w1: Matrix,
    pub w2: Matrix,
    pub fc_weight: Matrix,
    pub fc_bias: Matrix,
    pub tags: ModelTags,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-limit, limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

impl GcnModel {
    /// Uniform Glorot initialization of all weights; zero FC bias.
    pub fn init(dims: ModelDims, tags: ModelTags, rng: &mut Rng) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.classes == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {dims:?}")));
        }
        let w1 = glorot(rng, dims.hidden, dims.input);
        let w2 = glorot(rng, dims.hidden, dims.hidden);
        let fc_weight = glorot(rng, dims.classes, dims.hidden);
        Ok(GcnModel {
            w1,
            w2,
            fc_weight,
            fc_bias: Matrix::zeros(1, dims.classes),
            tags,
        })
    }

    pub fn from_parts(
        w1: Matrix,
        w2: Matrix,
        fc_weight: Matrix,
        fc_bias: Matrix,
        tags: ModelTags,
    ) -> Result<Self> {
        let hidden = w1.rows();
        let checks = [
            ("model w2 shape", w2.shape(), (hidden, hidden)),
            ("model fc_weight shape", fc_weight.shape(), (fc_weight.rows(), hidden)),
            ("model fc_bias shape", fc_bias.shape(), (1, fc_weight.rows())),
        ];
        for (context, got, want) in checks {
            if got != want {
                return Err(Error::Dimension {
                    context,
                    left: got,
                    right: want,
                });
            }
        }
        Ok(GcnModel {
            w1,
            w2,
            fc_weight,
            fc_bias,
            tags,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1.cols(),
            hidden: self.w1.rows(),
            classes: self.fc_weight.rows(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fc_weight.rows()
    }

    pub fn shapes(&self) -> [(usize, usize); 4] {
        [
            self.w1.shape(),
            self.w2.shape(),
            self.fc_weight.shape(),
            self.fc_bias.shape(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.w1,
            &mut self.w2,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }

    pub fn forward_input(&self, input: &GraphInput) -> Result<ForwardTrace> {
        if input.features.cols() != self.w1.cols() {
            return Err(Error::Dimension {
                context: "forward (node feature dim vs model input dim)",
                left: input.features.shape(),
                right: self.w1.shape(),
            });
        }
        if input.num_nodes() == 0 {
            return Err(Error::Structure("graph has no nodes".into()));
        }
        let neighbors = input.neighbors.clone();
        let h0 = input.features.clone();
        let agg1 = aggregate(&h0, &neighbors)?;
        let pre1 = agg1.matmul_transposed(&self.w1)?;
        let h1 = pre1.relu();
        let agg2 = aggregate(&h1, &neighbors)?;
        let pre2 = agg2.matmul_transposed(&self.w2)?;
        let h2 = pre2.relu();
        let readout = h2.mean_rows();
        let logits: Vec<f64> = (0..self.fc_weight.rows())
            .map(|c| crate::numkit::dot(self.fc_weight.row(c), &readout) + self.fc_bias.get(0, c))
            .collect();
        let probabilities = softmax(&logits)?;
        Ok(ForwardTrace {
            neighbors,
            h0,
            agg1,
            pre1,
            h1,
            agg2,
            pre2,
            h2,
            readout,
            logits,
            probabilities,
        })
    }

    pub fn forward(&self, g: &SceneGraph) -> Result<ForwardTrace> {
        self.forward_input(&GraphInput::from_graph(g)?)
    }

    /// Cross-entropy loss of the trace and its exact gradients.
    ///
    /// The loss is `-ln(p[label] + LOG_FLOOR)`, so the logit gradient is
    /// `(p - onehot) * p[label] / (p[label] + LOG_FLOOR)`. ReLU has zero
    /// derivative at zero.
    pub fn backward(&self, trace: &ForwardTrace, label: usize) -> Result<(GcnGradients, f64)> {
        let classes = self.num_classes();
        if label >= classes {
            return Err(Error::Argument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let p = &trace.probabilities;
        let loss = -(p[label] + LOG_FLOOR).ln();
        let floor_factor = p[label] / (p[label] + LOG_FLOOR);
        let d_logits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(c, &pc)| floor_factor * (pc - if c == label { 1.0 } else { 0.0 }))
            .collect();

        let hidden = self.w1.rows();
        let mut fc_weight = Matrix::zeros(classes, hidden);
        let mut d_readout = vec![0.0; hidden];
        for (c, &g) in d_logits.iter().enumerate() {
            axpy(g, &trace.readout, fc_weight.row_mut(c));
            axpy(g, self.fc_weight.row(c), &mut d_readout);
        }
        let fc_bias = Matrix::from_vec(1, classes, d_logits)?;

        let n = trace.h2.rows();
        let inv_n = 1.0 / n as f64;
        let mut d_pre2 = Matrix::zeros(n, hidden);
        for i in 0..n {
            let pre = trace.pre2.row(i);
            for (j, d) in d_pre2.row_mut(i).iter_mut().enumerate() {
                if pre[j] > 0.0 {
                    *d = d_readout[j] * inv_n;
                }
            }
        }
        let w2 = d_pre2.transpose_matmul(&trace.agg2)?;
        let d_agg2 = d_pre2.matmul(&self.w2)?;
        // A + I is symmetric, so the aggregation is its own adjoint.
        let d_h1 = aggregate(&d_agg2, &trace.neighbors)?;
        let mut d_pre1 = d_h1;
        for (d, &pre) in d_pre1.as_mut_slice().iter_mut().zip(trace.pre1.as_slice()) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        let w1 = d_pre1.transpose_matmul(&trace.agg1)?;

        Ok((
            GcnGradients {
                w1,
                w2,
                fc_weight,
                fc_bias,
            },
            loss,
        ))
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, input: &GraphInput, label: usize) -> Result<f64> {
        let trace = self.forward_input(input)?;
        Ok(-(trace.probabilities[label] + LOG_FLOOR).ln())
    }

    /// Most probable class (lowest index on ties) and the distribution.
    pub fn predict(&self, g: &SceneGraph) -> Result<(usize, Vec<f64>)> {
        self.predict_input(&GraphInput::from_graph(g)?)
    }

    pub fn predict_input(&self, input: &GraphInput) -> Result<(usize, Vec<f64>)> {
        let trace = self.forward_input(input)?;
        let label = argmax(&trace.probabilities).expect("at least one class");
        Ok((label, trace.probabilities))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn conv_self_only() {
        let h = mat(&[&[1.0, -2.0]]);
        let out = conv_layer(&h, &[vec![]], &Matrix::identity(2)).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn conv_self_plus_neighbor() {
        let h = mat(&[&[1.0], &[1.0]]);
        let out = conv_layer(&h, &[vec![1], vec![0]], &mat(&[&[1.0]])).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn conv_rejects_bad_edge() {
        let h = mat(&[&[1.0]]);
        let err = conv_layer(&h, &[vec![3]], &mat(&[&[1.0]])).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn graph_input_rejects_asymmetric_or_self_edges() {
        let f = Matrix::zeros(2, 1);
        assert!(GraphInput::new(f.clone(), vec![vec![1], vec![]]).is_err());
        assert!(GraphInput::new(f.clone(), vec![vec![0], vec![]]).is_err());
        assert!(GraphInput::new(f, vec![vec![1], vec![0]]).is_ok());
    }

    fn tiny_model(classes: usize) -> GcnModel {
        let mut rng = Rng::new(3);
        GcnModel::init(
            ModelDims {
                input: 3,
                hidden: 4,
                classes,
            },
            ModelTags::default(),
            &mut rng,
        )
        .unwrap()
    }

    fn tiny_input() -> GraphInput {
        GraphInput::new(
            mat(&[&[1.0, 0.5, 0.2], &[0.3, 1.0, 0.1], &[0.2, 0.4, 1.0]]),
            vec![vec![1, 2], vec![0], vec![0]],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut m = tiny_model(5);
        for p in m.params_mut() {
            p.scale(0.0);
        }
        let t = m.forward_input(&tiny_input()).unwrap();
        for p in &t.probabilities {
            assert!((p - 0.2).abs() < 1e-15);
        }
        assert_eq!(m.predict_input(&tiny_input()).unwrap().0, 0);
    }

    #[test]
    fn bias_gradient_is_p_minus_onehot() {
        let m = tiny_model(4);
        let t = m.forward_input(&tiny_input()).unwrap();
        let (g, loss) = m.backward(&t, 2).unwrap();
        assert!(loss > 0.0);
        for c in 0..4 {
            let want = t.probabilities[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((g.fc_bias.get(0, c) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn saturated_logits_zero_fc_gradient() {
        let mut m = tiny_model(3);
        m.fc_bias = Matrix::from_vec(1, 3, vec![0.0, 800.0, 0.0]).unwrap();
        let t = m.forward_input(&tiny_input()).unwrap();
        let (g, loss) = m.backward(&t, 1).unwrap();
        assert!(loss < 1e-11);
        assert!(g.fc_bias.as_slice().iter().all(|x| x.abs() < 1e-12));
        assert!(g.fc_weight.as_slice().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch() {
        let m = tiny_model(3);
        let input = GraphInput::new(mat(&[&[1.0, 2.0]]), vec![vec![]]).unwrap();
        assert!(matches!(m.forward_input(&input), Err(Error::Dimension { .. })));
        let t = m.forward_input(&tiny_input()).unwrap();
        assert!(m.backward(&t, 3).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let m = tiny_model(3);
        assert!(GcnModel::from_parts(
            m.w1.clone(),
            m.w2.clone(),
            m.fc_weight.clone(),
            Matrix::zeros(1, 2),
            m.tags.clone()
        )
        .is_err());
    }
}
