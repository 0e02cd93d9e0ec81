//! Clustering and classification metrics.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::mixture::Responsibilities;

/// Probabilities below this are clamped in the cross-entropy loss.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub true_labels: Vec<usize>,
    pub responsibilities: DMatrix<f64>,
    pub hard_assignments: Vec<usize>,
}

impl LabeledPrediction {
    pub fn new(true_labels: Vec<usize>, resp: &Responsibilities) -> Result<Self> {
        if true_labels.len() != resp.n() {
            return Err(Error::Shape {
                expected: format!("{} labels", resp.n()),
                got: format!("{}", true_labels.len()),
            });
        }
        Ok(Self { hard_assignments: resp.hard_assignments(), responsibilities: resp.r.clone(), true_labels })
    }

    /// From hard assignments only; responsibilities become one-hot.
    pub fn from_hard(true_labels: Vec<usize>, assignments: Vec<usize>, k: usize) -> Result<Self> {
        if true_labels.len() != assignments.len() {
            return Err(Error::Shape {
                expected: format!("{} assignments", true_labels.len()),
                got: format!("{}", assignments.len()),
            });
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::Validation(format!("assignment {bad} out of range for {k} clusters")));
        }
        let r = DMatrix::from_fn(assignments.len(), k, |i, j| if assignments[i] == j { 1.0 } else { 0.0 });
        Ok(Self { true_labels, responsibilities: r, hard_assignments: assignments })
    }

    pub fn n(&self) -> usize {
        self.true_labels.len()
    }

    pub fn k(&self) -> usize {
        self.responsibilities.ncols()
    }

    /// counts[(cluster, class)].
    pub fn contingency(&self, n_classes: usize) -> Result<DMatrix<usize>> {
        let mut counts = DMatrix::zeros(self.k(), n_classes);
        for (&c, &z) in self.true_labels.iter().zip(&self.hard_assignments) {
            if c >= n_classes {
                return Err(Error::Validation(format!("label {c} out of range for {n_classes} classes")));
            }
            counts[(z, c)] += 1;
        }
        Ok(counts)
    }
}

/// Class assigned to every cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMapping {
    pub class_of_cluster: Vec<usize>,
    /// Whether the cluster was part of the optimal one-to-one matching, as
    /// opposed to being sent to its plurality class.
    pub matched: Vec<bool>,
}

impl ClusterMapping {
    pub fn identity(k: usize) -> Self {
        Self { class_of_cluster: (0..k).collect(), matched: vec![true; k] }
    }
}

/// Cluster-to-class assignment maximizing the number of matched points;
/// clusters left over map to their plurality class (lowest class on ties).
pub fn map_clusters_to_classes(pred: &LabeledPrediction, n_classes: usize) -> Result<ClusterMapping> {
    if pred.n() == 0 {
        return Err(Error::Validation("empty prediction".into()));
    }
    if n_classes == 0 {
        return Err(Error::Validation("need at least one class".into()));
    }
    let counts = pred.contingency(n_classes)?;
    let k = pred.k();
    let mut class_of_cluster = vec![usize::MAX; k];
    let mut matched = vec![false; k];
    if n_classes <= k {
        let weights = Matrix::from_fn(n_classes, k, |(c, z)| counts[(z, c)] as i64);
        let (_, cluster_of_class) = kuhn_munkres(&weights);
        for (c, &z) in cluster_of_class.iter().enumerate() {
            class_of_cluster[z] = c;
            matched[z] = true;
        }
    } else {
        let weights = Matrix::from_fn(k, n_classes, |(z, c)| counts[(z, c)] as i64);
        let (_, class_of) = kuhn_munkres(&weights);
        for (z, &c) in class_of.iter().enumerate() {
            class_of_cluster[z] = c;
            matched[z] = true;
        }
    }
    for z in 0..k {
        if !matched[z] {
            let row = counts.row(z);
            let mut best = 0;
            for c in 1..n_classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            class_of_cluster[z] = best;
        }
    }
    Ok(ClusterMapping { class_of_cluster, matched })
}

fn check_mapping(pred: &LabeledPrediction, mapping: &ClusterMapping) {
    assert_eq!(mapping.class_of_cluster.len(), pred.k(), "mapping must cover every cluster");
}

/// Fraction of points whose cluster maps to their class.
pub fn accuracy(pred: &LabeledPrediction, mapping: &ClusterMapping) -> f64 {
    check_mapping(pred, mapping);
    let hits = pred
        .true_labels
        .iter()
        .zip(&pred.hard_assignments)
        .filter(|(&c, &z)| mapping.class_of_cluster[z] == c)
        .count();
    hits as f64 / pred.n() as f64
}

/// −(1/N) Σ_n ln P(class of n), where P sums the responsibilities of the
/// clusters mapped to that class, floored at [`PROBABILITY_FLOOR`].
pub fn cross_entropy_loss(pred: &LabeledPrediction, mapping: &ClusterMapping) -> f64 {
    check_mapping(pred, mapping);
    let total: f64 = pred
        .true_labels
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let p: f64 = (0..pred.k())
                .filter(|&z| mapping.class_of_cluster[z] == c)
                .map(|z| pred.responsibilities[(n, z)])
                .sum();
            -p.max(PROBABILITY_FLOOR).ln()
        })
        .sum();
    total / pred.n() as f64
}

/// Row-normalized confusion: entry (true class, predicted class).
pub fn confusion_matrix(pred: &LabeledPrediction, mapping: &ClusterMapping, n_classes: usize) -> DMatrix<f64> {
    check_mapping(pred, mapping);
    let mut m = DMatrix::zeros(n_classes, n_classes);
    for (&c, &z) in pred.true_labels.iter().zip(&pred.hard_assignments) {
        m[(c, mapping.class_of_cluster[z])] += 1.0;
    }
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    m
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: format!("{} labels", a.len()), got: format!("{}", b.len()) });
    }
    if a.len() < 2 {
        return Err(Error::Validation("adjusted Rand index needs at least two points".into()));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = DMatrix::<usize>::zeros(ka, kb);
    for (&i, &j) in a.iter().zip(b) {
        table[(i, j)] += 1;
    }
    let index: f64 = table.iter().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.row_iter().map(|r| choose2(r.sum())).sum();
    let sum_b: f64 = table.column_iter().map(|c| choose2(c.sum())).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}
