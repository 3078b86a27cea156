//! Nonparametric treatment-propensity estimation by counting neighbors in
//! an epsilon-ball, served by a ball-tree index, and the importance
//! weights w(x,t) = 1/(2 p(t|x)) that retarget the observational
//! objective at the uniform treatment distribution r(t) = 1/2.
//!
//! Correctness contract for the tree: a radius query returns exactly the
//! set a brute-force scan returns. Leaves evaluate the same squared
//! Euclidean predicate a scan would, and pruning keeps a tiny slack so
//! float rounding in the triangle-inequality bound can never discard a
//! point the scan would keep.

use thiserror::Error;

use crate::diffcore::Tensor;

pub const DEFAULT_LEAF_SIZE: usize = 32;
pub const DEFAULT_SMOOTHING: f64 = 1.0;
pub const DEFAULT_CLIP_LO: f64 = 0.05;
pub const DEFAULT_CLIP_HI: f64 = 0.95;

#[derive(Debug, Error)]
pub enum PropensityError {
    #[error("cannot index an empty point set")]
    EmptyIndex,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("query has {found} coordinates, index holds {expected}-dimensional points")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("smoothing must be non-negative, got {0}")]
    NegativeSmoothing(f64),
    #[error("clip bounds must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]")]
    DegenerateClip { lo: f64, hi: f64 },
    #[error("expected {expected} treatment labels, found {found}")]
    LabelMismatch { expected: usize, found: usize },
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---- ball tree ----

struct Node {
    center: Vec<f64>,
    radius: f64,
    kind: NodeKind,
}

enum NodeKind {
    Leaf { indices: Vec<usize> },
    Split { left: usize, right: usize },
}

pub struct BallTreeIndex {
    points: Tensor,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl BallTreeIndex {
    /// Build a split-on-spread ball tree over the rows of `points`.
    pub fn build(points: &Tensor, leaf_size: usize) -> Result<Self, PropensityError> {
        if points.rows() == 0 {
            return Err(PropensityError::EmptyIndex);
        }
        assert!(leaf_size >= 1, "leaf_size must be at least 1");
        assert!(points.all_finite(), "points must be finite");
        let mut tree = BallTreeIndex { points: points.clone(), nodes: Vec::new(), leaf_size };
        let all: Vec<usize> = (0..points.rows()).collect();
        tree.build_node(all);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty inputs
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    fn build_node(&mut self, indices: Vec<usize>) -> usize {
        let d = self.points.cols();
        let mut center = vec![0.0; d];
        for &i in &indices {
            for (c, v) in center.iter_mut().zip(self.points.row(i)) {
                *c += v;
            }
        }
        for c in &mut center {
            *c /= indices.len() as f64;
        }
        let radius = indices
            .iter()
            .map(|&i| dist_sq(&center, self.points.row(i)).sqrt())
            .fold(0.0, f64::max);

        let kind = if indices.len() <= self.leaf_size {
            NodeKind::Leaf { indices }
        } else {
            // split on the widest coordinate at its median
            let spread_dim = (0..d)
                .max_by(|&a, &b| {
                    let spread = |j: usize| {
                        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                        for &i in &indices {
                            let v = self.points.get(i, j);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                        hi - lo
                    };
                    spread(a).total_cmp(&spread(b))
                })
                .expect("at least one dimension");
            let mut sorted = indices;
            sorted.sort_by(|&a, &b| self.points.get(a, spread_dim).total_cmp(&self.points.get(b, spread_dim)));
            let right_half = sorted.split_off(sorted.len() / 2);
            let left = self.build_node(sorted);
            let right = self.build_node(right_half);
            NodeKind::Split { left, right }
        };
        self.nodes.push(Node { center, radius, kind });
        self.nodes.len() - 1
    }

    fn root(&self) -> usize {
        self.nodes.len() - 1 // build_node pushes the root last
    }

    /// Indices (ascending) of all points within Euclidean distance
    /// `epsilon` of `query`, the query point itself included when indexed.
    pub fn radius_indices(&self, query: &[f64], epsilon: f64) -> Result<Vec<usize>, PropensityError> {
        if epsilon <= 0.0 {
            return Err(PropensityError::NonPositiveEpsilon(epsilon));
        }
        if query.len() != self.dim() {
            return Err(PropensityError::DimensionMismatch { expected: self.dim(), found: query.len() });
        }
        let eps_sq = epsilon * epsilon;
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let dc = dist_sq(query, &node.center).sqrt();
            // conservative prune: the slack covers rounding in dc and the
            // stored radius, so no point passing the leaf predicate is lost
            if dc > node.radius + epsilon * (1.0 + 1e-9) + 1e-12 {
                continue;
            }
            match &node.kind {
                NodeKind::Leaf { indices } => {
                    for &i in indices {
                        if dist_sq(query, self.points.row(i)) <= eps_sq {
                            out.push(i);
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    #[cfg(test)]
    fn check_structural_invariants(&self) {
        let mut seen = vec![0usize; self.len()];
        for node in &self.nodes {
            if let NodeKind::Leaf { indices } = &node.kind {
                for &i in indices {
                    seen[i] += 1;
                }
            }
            // every point of the subtree lies inside (center, radius);
            // the radius was computed from these same float distances
            let covered: Vec<usize> = self.subtree_indices(node);
            for i in covered {
                assert!(dist_sq(&node.center, self.points.row(i)).sqrt() <= node.radius);
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "each point must sit in exactly one leaf");
    }

    #[cfg(test)]
    fn subtree_indices(&self, node: &Node) -> Vec<usize> {
        match &node.kind {
            NodeKind::Leaf { indices } => indices.clone(),
            NodeKind::Split { left, right } => {
                let mut v = self.subtree_indices(&self.nodes[*left]);
                v.extend(self.subtree_indices(&self.nodes[*right]));
                v
            }
        }
    }
}

/// (treated, total) neighbor counts within `epsilon` of `query`.
pub fn radius_count(
    index: &BallTreeIndex,
    query: &[f64],
    epsilon: f64,
    t: &Tensor,
) -> Result<(usize, usize), PropensityError> {
    if t.rows() != index.len() || t.cols() != 1 {
        return Err(PropensityError::LabelMismatch { expected: index.len(), found: t.rows() });
    }
    let hits = index.radius_indices(query, epsilon)?;
    let treated = hits.iter().filter(|&&i| t.get(i, 0) == 1.0).count();
    Ok((treated, hits.len()))
}

// ---- propensity estimation ----

pub struct PropensityEstimate {
    /// Clipped estimates of p(T=1 | x_i).
    pub e: Vec<f64>,
    pub epsilon: f64,
    pub smoothing: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// (treated, total) ball counts behind each estimate.
    pub raw_counts: Vec<(usize, usize)>,
}

/// Laplace-smoothed, clipped share of treated neighbors. An empty ball
/// falls back to the uninformative 1/2.
pub fn smoothed_share(treated: usize, total: usize, smoothing: f64, clip_lo: f64, clip_hi: f64) -> f64 {
    let raw = (treated as f64 + smoothing) / (total as f64 + 2.0 * smoothing);
    raw.clamp(clip_lo, clip_hi)
}

/// Estimate p(T=1 | x_i) for every indexed point by counting treated
/// neighbors within `epsilon` (the point itself included).
pub fn estimate_propensity(
    index: &BallTreeIndex,
    t: &Tensor,
    epsilon: f64,
    smoothing: f64,
    clip_lo: f64,
    clip_hi: f64,
) -> Result<PropensityEstimate, PropensityError> {
    if smoothing < 0.0 {
        return Err(PropensityError::NegativeSmoothing(smoothing));
    }
    if !(0.0 < clip_lo && clip_lo < clip_hi && clip_hi < 1.0) {
        return Err(PropensityError::DegenerateClip { lo: clip_lo, hi: clip_hi });
    }
    if t.rows() != index.len() || t.cols() != 1 {
        return Err(PropensityError::LabelMismatch { expected: index.len(), found: t.rows() });
    }
    let mut e = Vec::with_capacity(index.len());
    let mut raw_counts = Vec::with_capacity(index.len());
    for i in 0..index.len() {
        let (treated, total) = radius_count(index, index.points.row(i), epsilon, t)?;
        raw_counts.push((treated, total));
        e.push(smoothed_share(treated, total, smoothing, clip_lo, clip_hi));
    }
    Ok(PropensityEstimate { e, epsilon, smoothing, clip_lo, clip_hi, raw_counts })
}

// ---- importance weights ----

pub struct ImportanceWeights {
    /// w_i = 0.5 / p(t_i | x_i), positive by clipping.
    pub w: Vec<f64>,
    /// The uniform target mass r(T=1) = r(T=0).
    pub target: f64,
}

/// w_i = 0.5 / e_i for treated rows, 0.5 / (1 - e_i) for controls.
pub fn importance_weights(est: &PropensityEstimate, t: &Tensor) -> Result<ImportanceWeights, PropensityError> {
    if t.rows() != est.e.len() || t.cols() != 1 {
        return Err(PropensityError::LabelMismatch { expected: est.e.len(), found: t.rows() });
    }
    let w = est
        .e
        .iter()
        .enumerate()
        .map(|(i, &e)| if t.get(i, 0) == 1.0 { 0.5 / e } else { 0.5 / (1.0 - e) })
        .collect();
    Ok(ImportanceWeights { w, target: 0.5 })
}

/// One-call path from covariates and treatments to uniform-treatment
/// weights, using the default leaf size, smoothing, and clip bounds.
/// Covariates should be standardized first so Euclidean balls are
/// comparable across coordinates.
pub fn uniform_treatment_weights(x: &Tensor, t: &Tensor, epsilon: f64) -> Result<ImportanceWeights, PropensityError> {
    let index = BallTreeIndex::build(x, DEFAULT_LEAF_SIZE)?;
    let est = estimate_propensity(&index, t, epsilon, DEFAULT_SMOOTHING, DEFAULT_CLIP_LO, DEFAULT_CLIP_HI)?;
    importance_weights(&est, t)
}
