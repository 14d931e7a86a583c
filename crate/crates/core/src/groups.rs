//! Overlapping pixel groups and the ℓ1/ℓ∞ structured sparsity norm.

use crate::error::{invalid, Result};

/// An ordered collection of pixel-index groups with positive weights.
///
/// Indices are kept in one flat array with per-group offsets; group `i` is
/// `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    indices: Vec<usize>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
    p: usize,
}

impl GroupStructure {
    /// Builds a structure from explicit groups, checking every invariant:
    /// indices in range, groups nonempty and strictly increasing, weights
    /// positive, and every pixel covered.
    pub fn new(groups: Vec<Vec<usize>>, weights: Vec<f64>, p: usize) -> Result<Self> {
        if groups.len() != weights.len() {
            return Err(invalid("one weight per group is required"));
        }
        let mut covered = vec![false; p];
        let mut indices = Vec::new();
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        offsets.push(0);
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(invalid(format!("group {gi} is empty")));
            }
            if group.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("group {gi} is not strictly increasing")));
            }
            if let Some(&last) = group.last() {
                if last >= p {
                    return Err(invalid(format!("group {gi} has index {last} >= {p}")));
                }
            }
            for &i in group {
                covered[i] = true;
            }
            indices.extend_from_slice(group);
            offsets.push(indices.len());
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(invalid(format!("group weight {w} is not positive")));
        }
        if let Some(miss) = covered.iter().position(|c| !c) {
            return Err(invalid(format!("pixel {miss} is not covered by any group")));
        }
        Ok(Self { indices, offsets, weights, p })
    }

    /// Frame length the indices refer to.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Offset of group `i` inside a flat per-group buffer laid out like the index array.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Total number of (group, pixel) memberships.
    pub fn total_size(&self) -> usize {
        self.indices.len()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.len()).map(move |i| (self.group(i), self.weights[i]))
    }

    /// Number of groups containing each pixel.
    pub fn overlap_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.p];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    pub fn max_overlap(&self) -> usize {
        self.overlap_counts().into_iter().max().unwrap_or(0)
    }
}

fn window_origins(extent: usize, k: usize, stride: usize) -> Vec<usize> {
    let last = extent - k;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// One `k × k` group per window origin on a `stride` grid over an `H × W`
/// row-major frame, all weights 1.0.
///
/// With stride 1 the fully contained windows already cover every pixel. For
/// larger strides a clamped window flush with the bottom/right edge is added
/// so coverage stays total.
pub fn build_grid_groups(height: usize, width: usize, k: usize, stride: usize) -> Result<GroupStructure> {
    if k == 0 || stride == 0 {
        return Err(invalid("window size and stride must be positive"));
    }
    if k > height.min(width) {
        return Err(invalid(format!("window {k} does not fit a {height}x{width} frame")));
    }
    let ys = window_origins(height, k, stride);
    let xs = window_origins(width, k, stride);
    let mut groups = Vec::with_capacity(ys.len() * xs.len());
    for &y0 in &ys {
        for &x0 in &xs {
            let mut g = Vec::with_capacity(k * k);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    g.push(y * width + x);
                }
            }
            groups.push(g);
        }
    }
    let weights = vec![1.0; groups.len()];
    GroupStructure::new(groups, weights, height * width)
}

/// `Σ_g η_g · max_{i∈g} |s_i|`.
pub fn omega_norm(s: &[f64], groups: &GroupStructure) -> Result<f64> {
    if s.len() != groups.p() {
        return Err(invalid(format!("vector length {} does not match p = {}", s.len(), groups.p())));
    }
    Ok(omega_unchecked(s, groups))
}

pub(crate) fn omega_unchecked(s: &[f64], groups: &GroupStructure) -> f64 {
    groups
        .iter()
        .map(|(g, w)| w * g.iter().fold(0.0f64, |m, &i| m.max(s[i].abs())))
        .sum()
}
