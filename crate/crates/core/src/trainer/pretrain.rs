//! Supervised warm-up on generator ground truth.
//!
//! The score-function stage needs a detector that already concentrates
//! probability mass on workable locations and descriptors that roughly
//! separate points; this warm-up provides both. The heatmap trains with
//! cross-entropy against a uniform target over the ground-truth interest
//! points, and descriptors train with a triplet margin loss on known
//! correspondences with random in-image negatives.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CurvePoint, TrainError};
use crate::model::{
    adam_step, backward_scalar, descriptor_at, descriptor_at_backward, forward, AdamState,
    DescriptorField, ModelParams,
};
use crate::synthdata::PairSample;
use crate::util::mix_seed;

/// Warm-up hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub triplet_weight: f64,
    pub triplet_margin: f64,
    /// Correspondences sampled per iteration for the triplet term.
    pub max_triplets: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            learning_rate: 1e-3,
            triplet_weight: 8.0,
            triplet_margin: 1.0,
            max_triplets: 32,
            seed: 0,
        }
    }
}

/// Cross-entropy target: uniform mass over rounded ground-truth keypoints.
fn keypoint_target(kps: &[(f64, f64)], h: usize, w: usize) -> Vec<f64> {
    let mut target = vec![0.0; h * w];
    let mut count = 0usize;
    for &(x, y) in kps {
        let xi = x.round() as isize;
        let yi = y.round() as isize;
        if xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h {
            target[yi as usize * w + xi as usize] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        for v in target.iter_mut() {
            *v /= count as f64;
        }
    }
    target
}

struct TripletGrads {
    loss: f64,
    d_field1: Vec<f64>,
    d_field2: Vec<f64>,
}

/// Triplet margin loss over sampled correspondences; returns the loss and the
/// dense field gradients.
fn triplet_term(
    pair: &PairSample,
    field1: &DescriptorField,
    field2: &DescriptorField,
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TripletGrads, TrainError> {
    let dim = field1.dim();
    let mut out = TripletGrads {
        loss: 0.0,
        d_field1: vec![0.0; field1.data().len()],
        d_field2: vec![0.0; field2.data().len()],
    };
    let n_corr = pair.gt_correspondences.len();
    if n_corr < 2 || cfg.triplet_weight == 0.0 || cfg.max_triplets == 0 {
        return Ok(out);
    }
    // All second-image descriptors once, for hardest-negative mining.
    let all2: Vec<Vec<f64>> = pair
        .gt_keypoints2
        .iter()
        .map(|&(x, y)| descriptor_at(field2, x, y))
        .collect::<Result<_, _>>()?;
    let n_triplets = cfg.max_triplets.min(n_corr);
    let scale = cfg.triplet_weight / n_triplets as f64;
    let (h, w) = (field1.h(), field1.w());
    // Anchors and positives are jittered by up to a pixel so descriptors stay
    // stable under the localization error of test-time extraction.
    let mut jitter = |x: f64, y: f64, rng: &mut ChaCha8Rng| {
        (
            (x + rng.gen_range(-1.0..1.0)).clamp(0.0, (w - 1) as f64),
            (y + rng.gen_range(-1.0..1.0)).clamp(0.0, (h - 1) as f64),
        )
    };
    for _ in 0..n_triplets {
        let c = rng.gen_range(0..n_corr);
        let (i, j) = pair.gt_correspondences[c];
        let (ax, ay) = {
            let (x, y) = pair.gt_keypoints1[i];
            jitter(x, y, rng)
        };
        let (px, py) = {
            let (x, y) = pair.gt_keypoints2[j];
            jitter(x, y, rng)
        };
        let a = descriptor_at(field1, ax, ay)?;
        let p = descriptor_at(field2, px, py)?;
        // Hardest negative: the most confusing non-matching keypoint of the
        // second image.
        let mut j_neg = usize::MAX;
        let mut best = f64::INFINITY;
        for (k, d) in all2.iter().enumerate() {
            if k == j {
                continue;
            }
            let dd = dist(&a, d);
            if dd < best {
                best = dd;
                j_neg = k;
            }
        }
        let (nx, ny) = pair.gt_keypoints2[j_neg];
        let n = all2[j_neg].clone();
        let dp = dist(&a, &p);
        let dn = dist(&a, &n);
        let violation = dp - dn + cfg.triplet_margin;
        if violation <= 0.0 {
            continue;
        }
        out.loss += scale * violation;
        // d violation / d a = (a−p)/dp − (a−n)/dn, etc.
        let mut d_a = vec![0.0; dim];
        let mut d_p = vec![0.0; dim];
        let mut d_n = vec![0.0; dim];
        for k in 0..dim {
            let up = if dp > 1e-12 { (a[k] - p[k]) / dp } else { 0.0 };
            let un = if dn > 1e-12 { (a[k] - n[k]) / dn } else { 0.0 };
            d_a[k] = scale * (up - un);
            d_p[k] = -scale * up;
            d_n[k] = scale * un;
        }
        descriptor_at_backward(field1, ax, ay, &d_a, &mut out.d_field1)?;
        descriptor_at_backward(field2, px, py, &d_p, &mut out.d_field2)?;
        descriptor_at_backward(field2, nx, ny, &d_n, &mut out.d_field2)?;
    }
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Supervised warm-up loop; returns the trained parameters and loss curve.
pub fn pretrain(
    dataset: &[PairSample],
    params: ModelParams,
    cfg: &PretrainConfig,
) -> Result<(ModelParams, Vec<CurvePoint>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.learning_rate <= 0.0 {
        return Err(TrainError::Config("learning_rate must be positive".into()));
    }
    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut curve = Vec::with_capacity(cfg.iterations);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        order.swap(i, j);
    }

    for iteration in 0..cfg.iterations {
        let pair = &dataset[order[iteration % order.len()]];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1 + iteration as u64));
        let (h, w) = (pair.image1.h, pair.image1.w);
        let img1 = pair.image1.to_f64();
        let img2 = pair.image2.to_f64();
        let (heat1, field1, cache1) = forward(&img1, h, w, &params)?;
        let (heat2, field2, cache2) = forward(&img2, h, w, &params)?;

        // Cross-entropy of each heatmap against the generator targets. The
        // upstream coefficient on log h_p of the loss −Σ t_p log h_p is −t_p.
        let t1 = keypoint_target(&pair.gt_keypoints1, h, w);
        let t2 = keypoint_target(&pair.gt_keypoints2, h, w);
        let ce1: f64 = -t1
            .iter()
            .zip(heat1.log_values())
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, l)| t * l)
            .sum::<f64>();
        let ce2: f64 = -t2
            .iter()
            .zip(heat2.log_values())
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, l)| t * l)
            .sum::<f64>();
        let g1: Vec<f64> = t1.iter().map(|t| -t).collect();
        let g2: Vec<f64> = t2.iter().map(|t| -t).collect();

        let triplet = triplet_term(pair, &field1, &field2, cfg, &mut rng)?;

        let mut grads = backward_scalar(&params, &cache1, &g1, &triplet.d_field1)?;
        let gb = backward_scalar(&params, &cache2, &g2, &triplet.d_field2)?;
        grads.add_assign(&gb);
        if !grads.all_finite() {
            return Err(TrainError::NonFiniteGradient { iteration });
        }
        adam_step(
            &mut params,
            &grads,
            &mut state,
            cfg.learning_rate,
            0.9,
            0.999,
            1e-8,
        )?;
        curve.push(CurvePoint {
            iteration,
            mean_loss: ce1 + ce2 + triplet.loss,
            mean_raw_error_deg: f64::INFINITY,
        });
    }
    Ok((params, curve))
}
