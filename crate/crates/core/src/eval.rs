//! Deterministic evaluation: pose-error AUC, matching accuracy and match
//! statistics.
//!
//! Evaluation never samples: keypoints come from the deterministic test-time
//! extraction, all mutual-nearest-neighbor matches are kept, and the robust
//! estimator runs with a seed derived from the pair id. An oracle extractor
//! that returns the generator's interest points with perfectly
//! discriminative descriptors provides the upper-bound run every metric is
//! checked against.

use std::io::Write;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{
    angular_pose_error, decompose_essential, epipolar_line_distance, essential_from_pose,
    NormalizedPoint2,
};
use crate::model::{descriptor_at, forward, ModelError, ModelParams};
use crate::robust::{ransac_essential, RansacConfig};
use crate::sampling::{extract_keypoints_test, mutual_nn_candidates, ExtractConfig};
use crate::synthdata::{
    apply_homography, generate_pair, pixel_homography, PairSample, SceneConfig, SynthError,
};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid threshold: {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Which image of a pair to extract features from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSide {
    First,
    Second,
}

/// Keypoints (pixel coordinates) plus one descriptor per keypoint.
pub type Features = (Vec<(f64, f64)>, Vec<Vec<f64>>);

/// Anything that produces keypoints and descriptors for one image of a pair.
pub trait FeatureExtractor {
    fn features(&self, pair: &PairSample, side: ImageSide) -> Result<Features, EvalError>;
}

/// The trained network under the deterministic test-time extraction.
pub struct NetworkExtractor<'a> {
    pub params: &'a ModelParams,
    pub extract: ExtractConfig,
}

impl FeatureExtractor for NetworkExtractor<'_> {
    fn features(&self, pair: &PairSample, side: ImageSide) -> Result<Features, EvalError> {
        let image = match side {
            ImageSide::First => &pair.image1,
            ImageSide::Second => &pair.image2,
        };
        let (heat, field, _) = forward(&image.to_f64(), image.h, image.w, self.params)?;
        let kps = extract_keypoints_test(&heat, &self.extract);
        let mut coords = Vec::with_capacity(kps.len());
        let mut descs = Vec::with_capacity(kps.len());
        for p in &kps.points {
            coords.push((p.x as f64, p.y as f64));
            descs.push(descriptor_at(&field, p.x as f64, p.y as f64)?);
        }
        Ok((coords, descs))
    }
}

/// Upper-bound extractor: ground-truth keypoints with one-hot descriptors
/// shared across matching views.
pub struct OracleExtractor;

impl FeatureExtractor for OracleExtractor {
    fn features(&self, pair: &PairSample, side: ImageSide) -> Result<Features, EvalError> {
        let dim = pair.gt_keypoints1.len() + pair.gt_keypoints2.len();
        let one_hot = |slot: usize| {
            let mut v = vec![0.0; dim];
            v[slot] = 1.0;
            v
        };
        match side {
            ImageSide::First => {
                let coords = pair.gt_keypoints1.clone();
                let descs = (0..coords.len()).map(one_hot).collect();
                Ok((coords, descs))
            }
            ImageSide::Second => {
                let coords = pair.gt_keypoints2.clone();
                // Matched keypoints share the partner's one-hot slot;
                // unmatched ones get their own.
                let mut descs: Vec<Vec<f64>> = (0..coords.len())
                    .map(|j| one_hot(pair.gt_keypoints1.len() + j))
                    .collect();
                for &(i, j) in &pair.gt_correspondences {
                    descs[j] = one_hot(i);
                }
                Ok((coords, descs))
            }
        }
    }
}

/// Exact area under the cumulative recall curve of pose errors.
///
/// Each error `e ≤ T` contributes `(T − e)/(n·T)`; failures (infinite error)
/// contribute nothing. This is the exact integral of the recall step
/// function, not a binned approximation.
pub fn pose_auc(errors: &[f64], max_threshold_deg: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(max_threshold_deg > 0.0) {
        return Err(EvalError::InvalidThreshold(max_threshold_deg));
    }
    let n = errors.len() as f64;
    let sum: f64 = errors
        .iter()
        .filter(|e| **e <= max_threshold_deg)
        .map(|e| max_threshold_deg - e)
        .sum();
    Ok(sum / (n * max_threshold_deg))
}

/// Sorted per-pair pose errors.
#[derive(Debug, Clone)]
pub struct PoseErrorCurve {
    errors: Vec<f64>,
}

impl PoseErrorCurve {
    pub fn new(mut errors: Vec<f64>) -> Self {
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { errors }
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn recall_at(&self, threshold: f64) -> f64 {
        self.errors.iter().filter(|e| **e <= threshold).count() as f64 / self.errors.len() as f64
    }
}

/// Aggregate matching statistics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchStats {
    pub mean_keypoints_per_image: f64,
    pub mean_matches_per_pair: f64,
    /// Mean over pairs of the RANSAC inlier fraction.
    pub estimated_inlier_ratio: f64,
    /// Mean over pairs of the fraction of matches consistent with the
    /// ground-truth essential matrix.
    pub gt_inlier_ratio: f64,
}

/// Per-pair evaluation outcome.
#[derive(Debug, Clone)]
pub struct PairEvalRow {
    pub id: u64,
    pub keypoints1: usize,
    pub keypoints2: usize,
    pub matches: usize,
    pub inliers: usize,
    pub gt_inliers: usize,
    /// Pose error in degrees; infinite when the pipeline failed on the pair.
    pub error_deg: f64,
    pub failed: bool,
}

/// Full pose-evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<PairEvalRow>,
    pub curve: PoseErrorCurve,
    /// `(threshold_deg, auc)` pairs.
    pub auc: Vec<(f64, f64)>,
    pub stats: MatchStats,
}

/// Pose-evaluation configuration.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub ransac: RansacConfig,
    pub auc_thresholds_deg: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            auc_thresholds_deg: vec![5.0, 10.0, 20.0],
            seed: 0,
        }
    }
}

/// Runs the deterministic pipeline on every pair: extraction → mutual-NN →
/// RANSAC → decomposition → pose error. Per-pair failures are recorded as
/// infinite error and never abort the sweep.
pub fn evaluate_pose(
    dataset: &[PairSample],
    extractor: &dyn FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for pair in dataset {
        let (kp1, d1) = extractor.features(pair, ImageSide::First)?;
        let (kp2, d2) = extractor.features(pair, ImageSide::Second)?;
        let cands = mutual_nn_candidates(&d1, &d2);
        let calibrated: Vec<(NormalizedPoint2, NormalizedPoint2)> = cands
            .iter()
            .filter_map(|&(i, j, _)| {
                let a = pair.intrinsics.calibrate(kp1[i].0, kp1[i].1).ok()?;
                let b = pair.intrinsics.calibrate(kp2[j].0, kp2[j].1).ok()?;
                Some((a, b))
            })
            .collect();

        let gt_e = essential_from_pose(&pair.gt_pose);
        let gt_inliers = calibrated
            .iter()
            .filter(|(a, b)| {
                epipolar_line_distance(&gt_e, a, b)
                    .map(|d| d < cfg.ransac.inlier_threshold)
                    .unwrap_or(false)
            })
            .count();

        let ransac_cfg = RansacConfig {
            seed: mix_seed(cfg.seed, pair.id),
            ..cfg.ransac
        };
        let outcome = ransac_essential(&calibrated, &ransac_cfg, None)
            .ok()
            .and_then(|(e, mask, _)| {
                let inliers: Vec<_> = calibrated
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|(p, _)| *p)
                    .collect();
                let count = inliers.len();
                decompose_essential(&e, if count > 0 { &inliers } else { &calibrated })
                    .ok()
                    .map(|est| (count, angular_pose_error(&est, &pair.gt_pose)))
            });
        let (inliers, error_deg, failed) = match outcome {
            Some((count, err)) => (count, err, false),
            None => (0, f64::INFINITY, true),
        };
        rows.push(PairEvalRow {
            id: pair.id,
            keypoints1: kp1.len(),
            keypoints2: kp2.len(),
            matches: calibrated.len(),
            inliers,
            gt_inliers,
            error_deg,
            failed,
        });
    }

    let errors: Vec<f64> = rows.iter().map(|r| r.error_deg).collect();
    let auc = cfg
        .auc_thresholds_deg
        .iter()
        .map(|&t| pose_auc(&errors, t).map(|a| (t, a)))
        .collect::<Result<Vec<_>, _>>()?;

    let n = rows.len() as f64;
    let mean_kp = rows
        .iter()
        .map(|r| (r.keypoints1 + r.keypoints2) as f64 / 2.0)
        .sum::<f64>()
        / n;
    let mean_matches = rows.iter().map(|r| r.matches as f64).sum::<f64>() / n;
    let ratio_mean = |f: &dyn Fn(&PairEvalRow) -> usize| {
        let with_matches: Vec<&PairEvalRow> = rows.iter().filter(|r| r.matches > 0).collect();
        if with_matches.is_empty() {
            0.0
        } else {
            with_matches
                .iter()
                .map(|r| f(r) as f64 / r.matches as f64)
                .sum::<f64>()
                / with_matches.len() as f64
        }
    };
    let stats = MatchStats {
        mean_keypoints_per_image: mean_kp,
        mean_matches_per_pair: mean_matches,
        estimated_inlier_ratio: ratio_mean(&|r| r.inliers),
        gt_inlier_ratio: ratio_mean(&|r| r.gt_inliers),
    };

    Ok(EvalReport {
        curve: PoseErrorCurve::new(errors),
        rows,
        auc,
        stats,
    })
}

/// Matching-accuracy report over planar pairs.
#[derive(Debug, Clone)]
pub struct MmaReport {
    /// `per_threshold[t-1]` is the mean fraction of correct matches at a
    /// reprojection threshold of `t` pixels.
    pub per_threshold: Vec<f64>,
    /// Pairs that produced no matches at all (scored as zero accuracy).
    pub pairs_without_matches: usize,
}

/// Mean matching accuracy on planar pairs with exact homographies.
///
/// For each pair: extract, match by mutual nearest neighbors, reproject the
/// first-image keypoint through the ground-truth homography, and count the
/// match as correct at threshold `t` when the reprojection error is at most
/// `t` pixels.
pub fn mean_matching_accuracy(
    pairs: &[(PairSample, Matrix3<f64>)],
    extractor: &dyn FeatureExtractor,
    max_threshold_px: usize,
) -> Result<MmaReport, EvalError> {
    if pairs.is_empty() || max_threshold_px == 0 {
        return Err(EvalError::EmptyInput);
    }
    let mut per_threshold = vec![0.0; max_threshold_px];
    let mut pairs_without_matches = 0usize;
    for (pair, homography) in pairs {
        let (kp1, d1) = extractor.features(pair, ImageSide::First)?;
        let (kp2, d2) = extractor.features(pair, ImageSide::Second)?;
        let cands = mutual_nn_candidates(&d1, &d2);
        if cands.is_empty() {
            pairs_without_matches += 1;
            continue; // zero accuracy contribution at every threshold
        }
        let errors: Vec<f64> = cands
            .iter()
            .map(|&(i, j, _)| {
                let (mx, my) = apply_homography(homography, kp1[i].0, kp1[i].1);
                ((mx - kp2[j].0).powi(2) + (my - kp2[j].1).powi(2)).sqrt()
            })
            .collect();
        for (t_idx, acc) in per_threshold.iter_mut().enumerate() {
            let t = (t_idx + 1) as f64;
            let correct = errors.iter().filter(|e| **e <= t).count();
            *acc += correct as f64 / errors.len() as f64;
        }
    }
    for acc in per_threshold.iter_mut() {
        *acc /= pairs.len() as f64;
    }
    Ok(MmaReport {
        per_threshold,
        pairs_without_matches,
    })
}

/// Generates planar pairs with their exact pixel homographies.
pub fn generate_planar_benchmark(
    base: &SceneConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<(PairSample, Matrix3<f64>)>, SynthError> {
    let cfg = SceneConfig {
        planar: true,
        ..*base
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let (scene, mut pair) = generate_pair(&cfg, i as u64, &mut rng)?;
        pair.id = i as u64;
        let h = pixel_homography(&scene).expect("planar scene has a homography");
        out.push((pair, h));
    }
    Ok(out)
}

use rand_chacha::rand_core::SeedableRng;

/// Fraction of ground-truth interest points recovered within `radius_px` by
/// the extractor, averaged over both images of every pair.
pub fn keypoint_recall(
    pairs: &[PairSample],
    extractor: &dyn FeatureExtractor,
    radius_px: f64,
) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut recalled = 0usize;
    let mut total = 0usize;
    for pair in pairs {
        for (side, gt) in [
            (ImageSide::First, &pair.gt_keypoints1),
            (ImageSide::Second, &pair.gt_keypoints2),
        ] {
            let (kps, _) = extractor.features(pair, side)?;
            for &(gx, gy) in gt.iter() {
                total += 1;
                let hit = kps
                    .iter()
                    .any(|&(x, y)| ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() <= radius_px);
                if hit {
                    recalled += 1;
                }
            }
        }
    }
    Ok(recalled as f64 / total.max(1) as f64)
}

/// Writes the per-pair result table: one header line, then one row per pair.
pub fn write_pose_results(out: &mut impl Write, report: &EvalReport) -> std::io::Result<()> {
    writeln!(
        out,
        "pair\tkeypoints1\tkeypoints2\tmatches\tinliers\tgt_inliers\terror_deg\tfailed"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id, r.keypoints1, r.keypoints2, r.matches, r.inliers, r.gt_inliers, r.error_deg,
            r.failed as u8
        )?;
    }
    Ok(())
}

/// Writes the aggregate metrics table.
pub fn write_summary(out: &mut impl Write, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "metric\tvalue")?;
    for (t, auc) in &report.auc {
        writeln!(out, "auc@{t}\t{auc}")?;
    }
    writeln!(out, "pairs\t{}", report.rows.len())?;
    writeln!(
        out,
        "failed_pairs\t{}",
        report.rows.iter().filter(|r| r.failed).count()
    )?;
    writeln!(
        out,
        "mean_keypoints_per_image\t{}",
        report.stats.mean_keypoints_per_image
    )?;
    writeln!(
        out,
        "mean_matches_per_pair\t{}",
        report.stats.mean_matches_per_pair
    )?;
    writeln!(
        out,
        "estimated_inlier_ratio\t{}",
        report.stats.estimated_inlier_ratio
    )?;
    writeln!(out, "gt_inlier_ratio\t{}", report.stats.gt_inlier_ratio)?;
    Ok(())
}

/// Writes the matching-accuracy table.
pub fn write_mma(out: &mut impl Write, report: &MmaReport) -> std::io::Result<()> {
    writeln!(out, "threshold_px\taccuracy")?;
    for (t_idx, acc) in report.per_threshold.iter().enumerate() {
        writeln!(out, "{}\t{}", t_idx + 1, acc)?;
    }
    Ok(())
}
