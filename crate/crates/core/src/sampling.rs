//! Probabilistic keypoint and match selection, plus deterministic test-time
//! extraction.
//!
//! Training treats the heatmap as a categorical distribution over pixels and
//! draws keypoints independently with replacement; the joint log-probability
//! of a drawn set is the sum of its per-draw log-probabilities, and the two
//! images' sets multiply. Matching restricts to mutual nearest neighbors and
//! places a softmax over negated descriptor distances on the candidate set;
//! subsets are drawn sequentially without replacement, recording the exact
//! log-density of the realized sequence. At test time a deterministic
//! local-max extraction replaces sampling.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::HeatMap;
use crate::util::log_sum_exp;

#[derive(Debug, Error)]
pub enum SamplingError {
    /// The heatmap is not a valid probability distribution.
    #[error("invalid keypoint distribution: {0}")]
    InvalidDistribution(String),
    /// No candidate matches to build a distribution over.
    #[error("empty candidate match set")]
    EmptyCandidates,
    /// Invalid sampling parameter.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One sampled (or extracted) keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    pub x: usize,
    pub y: usize,
    /// Heatmap value at the pixel.
    pub value: f64,
    /// `ln` of the heatmap value.
    pub log_prob: f64,
    /// Number of draws that landed on this pixel (1 for extraction).
    pub multiplicity: usize,
}

/// A set of keypoints with the bookkeeping needed by the gradient estimator.
#[derive(Debug, Clone)]
pub struct KeyPointSet {
    /// Unique pixels in order of first draw.
    pub points: Vec<KeyPoint>,
    /// Total number of draws, duplicates included.
    pub n_draws: usize,
    /// Sum over draws of `log P(x_i)`: the set's joint log-probability.
    pub joint_log_prob: f64,
}

impl KeyPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A candidate match between keypoint `i` of the first set and `j` of the
/// second, with descriptor distance and its probability under the match
/// distribution of the full candidate set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub log_prob: f64,
}

/// Candidate matches (mutual nearest neighbors) with their distribution, or a
/// subset drawn from it.
#[derive(Debug, Clone)]
pub struct MatchSet {
    /// For a full set: all mutual-NN candidates. For a subsample: the drawn
    /// matches in draw order, each keeping its full-set `log_prob`.
    pub matches: Vec<MatchCandidate>,
    /// Log-density of the realized draw sequence (0 for a full set).
    pub sequence_log_prob: f64,
    pub is_subsampled: bool,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// |log Σ exp(log_prob)|: zero for a correctly normalized full set.
    pub fn normalization_defect(&self) -> f64 {
        let lse = log_sum_exp(&self.matches.iter().map(|m| m.log_prob).collect::<Vec<_>>());
        lse.abs()
    }
}

fn validate_heatmap(heatmap: &HeatMap) -> Result<(), SamplingError> {
    if !heatmap.is_valid_distribution() {
        return Err(SamplingError::InvalidDistribution(
            "entries must be nonnegative and sum to 1".into(),
        ));
    }
    Ok(())
}

/// Draws `n` keypoints independently (with replacement) from the heatmap.
///
/// Duplicate pixels collapse into one entry with a draw multiplicity, so the
/// matcher never sees repeated coordinates while the joint log-probability
/// still counts every draw. Zero-probability pixels are excluded exactly: the
/// inverse-CDF search can never land inside a zero-width interval.
pub fn sample_keypoints(
    heatmap: &HeatMap,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<KeyPointSet, SamplingError> {
    if n == 0 {
        return Err(SamplingError::InvalidArgument("n must be at least 1".into()));
    }
    validate_heatmap(heatmap)?;
    let values = heatmap.values();
    let mut cumulative = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for &v in values {
        acc += v;
        cumulative.push(acc);
    }
    let total = acc;

    let w = heatmap.w();
    let mut points: Vec<KeyPoint> = Vec::new();
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut joint = 0.0;
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        // First index with cumulative > target; zero-mass pixels have
        // zero-width intervals and are skipped by the strict inequality.
        let idx = cumulative
            .partition_point(|&c| c <= target)
            .min(values.len() - 1);
        let log_p = heatmap.log_values()[idx];
        joint += log_p;
        match slot_of.get(&idx) {
            Some(&slot) => points[slot].multiplicity += 1,
            None => {
                slot_of.insert(idx, points.len());
                points.push(KeyPoint {
                    x: idx % w,
                    y: idx / w,
                    value: values[idx],
                    log_prob: log_p,
                    multiplicity: 1,
                });
            }
        }
    }
    Ok(KeyPointSet {
        points,
        n_draws: n,
        joint_log_prob: joint,
    })
}

/// Squared L2 distance between descriptor slices.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// L2 distance between descriptor slices.
pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Exact mutual-nearest-neighbor matching over descriptor sets.
///
/// Pair `(i, j)` survives when `j` is `i`'s nearest neighbor and vice versa;
/// distance ties resolve to the lower index. Each keypoint appears in at most
/// one pair. Complexity is O(n²), which doubles as the test oracle at these
/// set sizes.
pub fn mutual_nn_candidates(desc1: &[Vec<f64>], desc2: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    if desc1.is_empty() || desc2.is_empty() {
        return Vec::new();
    }
    let nn = |from: &[Vec<f64>], to: &[Vec<f64>]| -> Vec<usize> {
        from.iter()
            .map(|d| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (j, e) in to.iter().enumerate() {
                    let dd = dist2(d, e);
                    if dd < best_d {
                        best_d = dd;
                        best = j;
                    }
                }
                best
            })
            .collect()
    };
    let fwd = nn(desc1, desc2);
    let bwd = nn(desc2, desc1);
    let mut out = Vec::new();
    for (i, &j) in fwd.iter().enumerate() {
        if bwd[j] == i {
            out.push((i, j, dist2(&desc1[i], &desc2[j]).sqrt()));
        }
    }
    out
}

/// Places the descriptor-distance softmax over the candidate set:
/// `P(m) ∝ exp(−distance(m))`, normalized over the candidates.
pub fn match_distribution(candidates: &[(usize, usize, f64)]) -> Result<MatchSet, SamplingError> {
    if candidates.is_empty() {
        return Err(SamplingError::EmptyCandidates);
    }
    let neg: Vec<f64> = candidates.iter().map(|c| -c.2).collect();
    let lse = log_sum_exp(&neg);
    let matches = candidates
        .iter()
        .map(|&(i, j, d)| MatchCandidate {
            i,
            j,
            distance: d,
            log_prob: -d - lse,
        })
        .collect();
    Ok(MatchSet {
        matches,
        sequence_log_prob: 0.0,
        is_subsampled: false,
    })
}

/// Draws `⌈fraction·|ms|⌉` matches without replacement by successive
/// renormalization of the match distribution.
///
/// The returned set lists matches in draw order and records the exact
/// log-density of the sequence, which is the match-side log-probability term
/// of the gradient estimator.
pub fn sample_match_subset(
    ms: &MatchSet,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MatchSet, SamplingError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SamplingError::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    if ms.is_empty() {
        return Err(SamplingError::EmptyCandidates);
    }
    let count = ((fraction * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
    let mut remaining: Vec<usize> = (0..ms.len()).collect();
    let mut drawn = Vec::with_capacity(count);
    let mut seq_log_prob = 0.0;
    for _ in 0..count {
        let neg: Vec<f64> = remaining.iter().map(|&k| -ms.matches[k].distance).collect();
        let lse = log_sum_exp(&neg);
        let weights: Vec<f64> = neg.iter().map(|&v| (v - lse).exp()).collect();
        let total: f64 = weights.iter().sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (slot, &wgt) in weights.iter().enumerate() {
            acc += wgt;
            if acc > target {
                pick = slot;
                break;
            }
        }
        seq_log_prob += neg[pick] - lse;
        drawn.push(ms.matches[remaining[pick]]);
        remaining.remove(pick);
    }
    Ok(MatchSet {
        matches: drawn,
        sequence_log_prob: seq_log_prob,
        is_subsampled: true,
    })
}

/// Configuration for deterministic test-time keypoint extraction.
#[derive(Debug, Clone, Copy)]
pub struct ExtractConfig {
    pub max_keypoints: usize,
    pub nms_radius: usize,
    pub min_value: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2000,
            nms_radius: 4,
            min_value: 0.00015,
        }
    }
}

impl ExtractConfig {
    /// Defaults scaled for 64×64 images: the keypoint budget and the
    /// suppression radius shrink with the image.
    pub fn desk_scale() -> Self {
        Self {
            max_keypoints: 256,
            nms_radius: 2,
            ..Self::default()
        }
    }
}

/// Deterministic extraction: local maxima under non-max suppression.
///
/// A pixel survives when no neighbor within the (Chebyshev) radius has a
/// strictly larger value, with equal values resolved in favor of the earlier
/// pixel in row-major order. Survivors below `min_value` are dropped and the
/// strongest `max_keypoints` are returned, ordered by descending value (ties
/// again row-major).
pub fn extract_keypoints_test(heatmap: &HeatMap, cfg: &ExtractConfig) -> KeyPointSet {
    let (h, w) = (heatmap.h(), heatmap.w());
    let r = cfg.nms_radius as isize;
    let mut survivors: Vec<KeyPoint> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = heatmap.value(x, y);
            if v < cfg.min_value {
                continue;
            }
            let mut suppressed = false;
            'window: for dy in -r..=r {
                let ny = y as isize + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let nv = heatmap.value(nx as usize, ny as usize);
                    let earlier = (ny as usize, nx as usize) < (y, x);
                    if nv > v || (nv == v && earlier) {
                        suppressed = true;
                        break 'window;
                    }
                }
            }
            if !suppressed {
                survivors.push(KeyPoint {
                    x,
                    y,
                    value: v,
                    log_prob: if v > 0.0 { v.ln() } else { f64::NEG_INFINITY },
                    multiplicity: 1,
                });
            }
        }
    }
    survivors.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap()
            .then_with(|| (a.y, a.x).cmp(&(b.y, b.x)))
    });
    survivors.truncate(cfg.max_keypoints);
    let joint = survivors.iter().map(|k| k.log_prob).sum();
    KeyPointSet {
        n_draws: survivors.len(),
        joint_log_prob: joint,
        points: survivors,
    }
}

/// Writes a keypoint dump: one `x<TAB>y<TAB>score` line per keypoint.
pub fn write_keypoint_dump(out: &mut impl Write, kps: &KeyPointSet) -> std::io::Result<()> {
    for k in &kps.points {
        writeln!(out, "{}\t{}\t{}", k.x, k.y, k.value)?;
    }
    Ok(())
}

/// Writes a match dump: one `i<TAB>j<TAB>distance<TAB>prob` line per match.
pub fn write_match_dump(out: &mut impl Write, ms: &MatchSet) -> std::io::Result<()> {
    for m in &ms.matches {
        writeln!(out, "{}\t{}\t{}\t{}", m.i, m.j, m.distance, m.log_prob.exp())?;
    }
    Ok(())
}
