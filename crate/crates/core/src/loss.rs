//! Training objectives: order-aligned consistency, its Chamfer variant, the
//! weighted Chamfer term, and their combination.
//!
//! Gradients of nearest-neighbor terms treat the current correspondences as
//! constants. The derivative of `‖p − q‖` at coincident points is taken as 0.

use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::NearestNeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_cons: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 0.9,
            lambda_cons: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.lambda_cons)) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cons: f64,
    pub wcd: f64,
    pub total: f64,
}

/// total = λ_cons · cons + wcd.
pub fn total_loss(cons: f64, wcd: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        cons,
        wcd,
        total: w.lambda_cons * cons + wcd,
    }
}

/// Mean over views and points of the squared distance between aligned points.
pub fn consistency_mse(completions: &[PointCloud], target: &PointCloud) -> Result<f64> {
    let views: Vec<&[Point3]> = completions.iter().map(|c| c.points()).collect();
    consistency_mse_points(&views, target.points())
}

pub(crate) fn consistency_mse_points(views: &[&[Point3]], target: &[Point3]) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one completion".into(),
        ));
    }
    let mut sum = 0.0;
    for v in views {
        if v.len() != target.len() {
            return Err(Error::SizeMismatch {
                expected: target.len(),
                actual: v.len(),
            });
        }
        sum += v
            .iter()
            .zip(target)
            .map(|(a, b)| a.distance_squared(*b))
            .sum::<f64>();
    }
    Ok(sum / (target.len() * views.len()) as f64)
}

/// d consistency_mse / d view, for one of `n_views` views.
pub(crate) fn consistency_mse_grad(
    view: &[Point3],
    target: &[Point3],
    n_views: usize,
) -> Vec<Point3> {
    let s = 2.0 / (target.len() * n_views) as f64;
    view.iter()
        .zip(target)
        .map(|(&a, &b)| (a - b) * s)
        .collect()
}

/// Mean over views of the symmetric Chamfer distance to the target.
pub fn consistency_chamfer(completions: &[PointCloud], target: &PointCloud) -> Result<f64> {
    if completions.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one completion".into(),
        ));
    }
    let target_index = NearestNeighborIndex::build(target);
    let mut sum = 0.0;
    for c in completions {
        sum +=
            chamfer_terms(c.points(), target.points(), Some(&target_index), None).value(1.0, 1.0);
    }
    Ok(sum / completions.len() as f64)
}

/// Nearest-neighbor correspondences in both directions between a source cloud
/// (the one being differentiated) and a reference cloud.
#[derive(Clone, Debug)]
pub struct ChamferTerms {
    /// For each source point: (index in reference, distance).
    pub forward: Vec<(usize, f64)>,
    /// For each reference point: (index in source, distance).
    pub backward: Vec<(usize, f64)>,
}

impl ChamferTerms {
    pub fn forward_mean(&self) -> f64 {
        self.forward.iter().map(|t| t.1).sum::<f64>() / self.forward.len() as f64
    }

    pub fn backward_mean(&self) -> f64 {
        self.backward.iter().map(|t| t.1).sum::<f64>() / self.backward.len() as f64
    }

    pub fn value(&self, a: f64, b: f64) -> f64 {
        a * self.forward_mean() + b * self.backward_mean()
    }

    /// Gradient of `a · forward_mean + b · backward_mean` w.r.t. source points,
    /// accumulated into `out` with factor `scale`.
    pub fn accumulate_source_grad(
        &self,
        source: &[Point3],
        reference: &[Point3],
        a: f64,
        b: f64,
        scale: f64,
        out: &mut [Point3],
    ) {
        let fa = scale * a / source.len() as f64;
        if fa != 0.0 {
            for (i, &(j, d)) in self.forward.iter().enumerate() {
                if d > 0.0 {
                    out[i] += (source[i] - reference[j]) * (fa / d);
                }
            }
        }
        let fb = scale * b / reference.len() as f64;
        if fb != 0.0 {
            for (j, &(i, d)) in self.backward.iter().enumerate() {
                if d > 0.0 {
                    out[i] += (source[i] - reference[j]) * (fb / d);
                }
            }
        }
    }

    /// Gradient w.r.t. the reference points (used only when the reference is
    /// not detached).
    pub fn accumulate_reference_grad(
        &self,
        source: &[Point3],
        reference: &[Point3],
        a: f64,
        b: f64,
        scale: f64,
        out: &mut [Point3],
    ) {
        let fa = scale * a / source.len() as f64;
        for (i, &(j, d)) in self.forward.iter().enumerate() {
            if d > 0.0 {
                out[j] += (reference[j] - source[i]) * (fa / d);
            }
        }
        let fb = scale * b / reference.len() as f64;
        for (j, &(i, d)) in self.backward.iter().enumerate() {
            if d > 0.0 {
                out[j] += (reference[j] - source[i]) * (fb / d);
            }
        }
    }
}

/// Computes both directed nearest-neighbor sets. Prebuilt indices are used
/// when supplied; otherwise they are built here.
pub fn chamfer_terms(
    source: &[Point3],
    reference: &[Point3],
    reference_index: Option<&NearestNeighborIndex>,
    source_index: Option<&NearestNeighborIndex>,
) -> ChamferTerms {
    let built_ref;
    let ref_idx = match reference_index {
        Some(i) => i,
        None => {
            built_ref = NearestNeighborIndex::from_points(reference).expect("nonempty reference");
            &built_ref
        }
    };
    let built_src;
    let src_idx = match source_index {
        Some(i) => i,
        None => {
            built_src = NearestNeighborIndex::from_points(source).expect("nonempty source");
            &built_src
        }
    };
    let forward = source
        .iter()
        .map(|&p| {
            let n = ref_idx.query(p);
            (n.index, n.distance)
        })
        .collect();
    let backward = reference
        .iter()
        .map(|&q| {
            let n = src_idx.query(q);
            (n.index, n.distance)
        })
        .collect();
    ChamferTerms { forward, backward }
}

/// (α/N_c) Σ_{p∈C} min_q ‖p − q‖ + (β/N_p) Σ_{q∈P} min_p ‖q − p‖.
pub fn weighted_chamfer(
    completion: &PointCloud,
    partial: &PointCloud,
    w: &LossWeights,
) -> Result<f64> {
    Ok(chamfer_terms(completion.points(), partial.points(), None, None).value(w.alpha, w.beta))
}
