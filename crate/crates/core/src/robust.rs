//! Robust relative pose estimation: the black-box vision task.
//!
//! A set of tentative matches goes through 5-point RANSAC for the essential
//! matrix, decomposition with cheirality, comparison against the ground-truth
//! pose, and soft/hard clamping of the resulting angular error. Every failure
//! mode folds into a flagged result carrying the ceiling loss, so a caller
//! sampling thousands of episodes always gets a loss value back.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    angular_pose_error, decompose_essential, epipolar_line_distance, five_point_solve,
    EssentialMatrix, NormalizedPoint2, Pose,
};

/// Errors from the robust estimator.
#[derive(Debug, Error)]
pub enum RobustError {
    /// Fewer matches than the minimal sample size of five.
    #[error("need at least 5 matches, got {0}")]
    NotEnoughMatches(usize),
    /// Every sampled minimal set failed the 5-point solver.
    #[error("all minimal samples were degenerate")]
    AllHypothesesDegenerate,
    /// Guidance weights or configuration violate their contract.
    #[error("invalid estimator input: {0}")]
    InvalidGuidance(String),
}

/// RANSAC parameters. The inlier threshold is an epipolar distance in
/// normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 1e-3,
            max_iterations: 1000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RobustError> {
        if self.inlier_threshold <= 0.0 || !self.inlier_threshold.is_finite() {
            return Err(RobustError::InvalidGuidance(
                "inlier_threshold must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(RobustError::InvalidGuidance(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RobustError::InvalidGuidance(
                "confidence must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one full task evaluation.
#[derive(Debug, Clone)]
pub struct TaskResult {
    /// Estimated pose; `None` when any stage failed.
    pub est_pose: Option<Pose>,
    /// Per-match inlier flags under the winning essential matrix.
    pub inlier_mask: Vec<bool>,
    /// Angular pose error in degrees; infinite on failure.
    pub raw_error_deg: f64,
    /// Soft/hard clamped loss; equals [`loss_ceiling`] on failure.
    pub clamped_loss: f64,
    /// RANSAC iterations actually run.
    pub iterations_run: usize,
    pub failed: bool,
}

/// Upper bound of the clamped loss: `25 + sqrt(50)`.
pub fn loss_ceiling() -> f64 {
    25.0 + 50.0_f64.sqrt()
}

/// Square-root soft clamping of the angular error.
///
/// Identity below 25°, `25 + sqrt(e − 25)` up to 75°, constant beyond.
/// Continuous and monotone nondecreasing.
pub fn soft_clamp(error_deg: f64) -> f64 {
    debug_assert!(error_deg >= 0.0);
    let e = error_deg.max(0.0);
    if e <= 25.0 {
        e
    } else if e <= 75.0 {
        25.0 + (e - 25.0).sqrt()
    } else {
        loss_ceiling()
    }
}

/// Draws `k` distinct indices from the categorical distribution given by
/// `weights`, by successive renormalization. Uniform weights reproduce plain
/// uniform sampling without replacement.
fn weighted_distinct_sample(
    weights: &mut [f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            if acc > target {
                chosen = Some(i);
                break;
            }
        }
        // Rounding may leave the accumulated sum just below the target; fall
        // back to the last positive-weight index.
        let idx = chosen.or_else(|| weights.iter().rposition(|&w| w > 0.0))?;
        picked.push(idx);
        weights[idx] = 0.0;
    }
    Some(picked)
}

/// Standard adaptive iteration bound for a given inlier ratio.
fn required_iterations(confidence: f64, inlier_ratio: f64, sample_size: u32) -> usize {
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    let w = inlier_ratio.powi(sample_size as i32).min(1.0);
    if w >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if !n.is_finite() {
        return usize::MAX;
    }
    n.ceil().max(1.0) as usize
}

fn residual(e: &EssentialMatrix, pair: &(NormalizedPoint2, NormalizedPoint2)) -> f64 {
    epipolar_line_distance(e, &pair.0, &pair.1).unwrap_or(f64::INFINITY)
}

/// RANSAC essential matrix fit over tentative matches.
///
/// Returns the hypothesis with the maximum inlier count over all tested
/// minimal samples (first found wins ties) together with its inlier mask and
/// the number of iterations run. All real solutions of each minimal sample
/// are scored. Optional `guidance` weights bias which matches enter minimal
/// samples; the weights are fixed inputs, not learned, and uniform weights
/// reproduce the unguided sampler exactly.
pub fn ransac_essential(
    matches: &[(NormalizedPoint2, NormalizedPoint2)],
    cfg: &RansacConfig,
    guidance: Option<&[f64]>,
) -> Result<(EssentialMatrix, Vec<bool>, usize), RobustError> {
    cfg.validate()?;
    let n = matches.len();
    if n < 5 {
        return Err(RobustError::NotEnoughMatches(n));
    }
    let base_weights: Vec<f64> = match guidance {
        Some(w) => {
            if w.len() != n {
                return Err(RobustError::InvalidGuidance(format!(
                    "{} weights for {} matches",
                    w.len(),
                    n
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(RobustError::InvalidGuidance(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(RobustError::InvalidGuidance("weights sum to zero".into()));
            }
            if w.iter().filter(|v| **v > 0.0).count() < 5 {
                return Err(RobustError::InvalidGuidance(
                    "fewer than 5 matches with positive weight".into(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, EssentialMatrix)> = None;
    let mut adaptive_cap = cfg.max_iterations;
    let mut iterations = 0usize;
    while iterations < adaptive_cap {
        iterations += 1;
        let mut weights = base_weights.clone();
        let Some(sample_idx) = weighted_distinct_sample(&mut weights, 5, &mut rng) else {
            break;
        };
        let sample: [(NormalizedPoint2, NormalizedPoint2); 5] = [
            matches[sample_idx[0]],
            matches[sample_idx[1]],
            matches[sample_idx[2]],
            matches[sample_idx[3]],
            matches[sample_idx[4]],
        ];
        let Ok(hypotheses) = five_point_solve(&sample) else {
            continue;
        };
        for e in hypotheses {
            let count = matches
                .iter()
                .filter(|m| residual(&e, m) < cfg.inlier_threshold)
                .count();
            let improved = match &best {
                Some((best_count, _)) => count > *best_count,
                None => true,
            };
            if improved {
                best = Some((count, e));
                let ratio = count as f64 / n as f64;
                adaptive_cap = required_iterations(cfg.confidence, ratio, 5)
                    .min(cfg.max_iterations)
                    .max(iterations);
            }
        }
    }

    let Some((_, e)) = best else {
        return Err(RobustError::AllHypothesesDegenerate);
    };
    let mask: Vec<bool> = matches
        .iter()
        .map(|m| residual(&e, m) < cfg.inlier_threshold)
        .collect();
    Ok((e, mask, iterations))
}

/// Runs the complete black-box task on an already-calibrated match subset.
///
/// `kps1`/`kps2` are the calibrated keypoint sets of the two images and
/// `matches` indexes into them. The pipeline is RANSAC → decomposition (using
/// the inliers for cheirality) → angular pose error → soft clamp. No stage
/// error escapes: failures set `failed` and the ceiling loss.
pub fn run_task(
    kps1: &[NormalizedPoint2],
    kps2: &[NormalizedPoint2],
    matches: &[(usize, usize)],
    gt: &Pose,
    cfg: &RansacConfig,
) -> TaskResult {
    let failure = |iterations: usize, mask_len: usize| TaskResult {
        est_pose: None,
        inlier_mask: vec![false; mask_len],
        raw_error_deg: f64::INFINITY,
        clamped_loss: loss_ceiling(),
        iterations_run: iterations,
        failed: true,
    };

    let pairs: Vec<(NormalizedPoint2, NormalizedPoint2)> = matches
        .iter()
        .map(|&(i, j)| (kps1[i], kps2[j]))
        .collect();
    let (e, mask, iterations) = match ransac_essential(&pairs, cfg, None) {
        Ok(v) => v,
        Err(_) => return failure(0, matches.len()),
    };
    let inliers: Vec<(NormalizedPoint2, NormalizedPoint2)> = pairs
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let cheirality_set = if inliers.is_empty() { &pairs } else { &inliers };
    let est = match decompose_essential(&e, cheirality_set) {
        Ok(p) => p,
        Err(_) => return failure(iterations, matches.len()),
    };
    let raw = angular_pose_error(&est, gt);
    TaskResult {
        est_pose: Some(est),
        inlier_mask: mask,
        raw_error_deg: raw,
        clamped_loss: soft_clamp(raw),
        iterations_run: iterations,
        failed: false,
    }
}
