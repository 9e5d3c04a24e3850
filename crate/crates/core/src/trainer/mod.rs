//! Score-function gradient training of the detection/matching pipeline.
//!
//! Each training iteration samples `n_X` keypoint-set pairs from the two
//! heatmaps and, per pair, `n_M` match subsets from the descriptor-distance
//! distribution; every episode runs the robust pose task and yields a clamped
//! loss. The scalar surrogate
//!
//! ```text
//! S = Σ_e A_e · (log P(X_e, X'_e) + log P(M_e | X_e, X'_e)) / (n_X·n_M)
//! ```
//!
//! with advantages `A_e` (loss minus baseline, losses treated as constants)
//! has the property that its exact reverse-mode gradient is the sampled
//! score-function estimator of the expected-loss gradient: no gradient ever
//! flows through RANSAC or the solver, only through the log-probabilities.

mod config;
mod pretrain;

pub use config::{parse_key_values, ConfigBundle};
pub use pretrain::{pretrain, PretrainConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::NormalizedPoint2;
use crate::model::{
    adam_step, backward_scalar, descriptor_at, descriptor_at_backward, forward, AdamState,
    DescriptorField, Grads, HeatMap, ModelError, ModelParams,
};
use crate::robust::{run_task, RansacConfig};
use crate::sampling::{
    match_distribution, mutual_nn_candidates, sample_keypoints, sample_match_subset, KeyPointSet,
    SamplingError,
};
use crate::synthdata::PairSample;
use crate::util::{log_sum_exp, mix_seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Baseline subtracted from episode losses inside the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Mean loss over all `n_X·n_M` episodes of the iteration.
    GlobalMean,
    /// Mean over the `n_M` episodes sharing each keypoint sample.
    PerKeypointSet,
    /// No baseline: the raw score-function estimator.
    None,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// `n_X`: keypoint-set samples per iteration.
    pub n_keypoint_samples: usize,
    /// `n_M`: match subsets per keypoint sample.
    pub n_match_samples: usize,
    /// Draws per image for each keypoint sample.
    pub keypoints_per_image: usize,
    /// Fraction of candidate matches kept per episode.
    pub match_fraction: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub baseline: BaselineMode,
    /// Invoke the checkpoint observer every this many iterations (0 = never).
    pub checkpoint_every: usize,
    pub ransac: RansacConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_keypoint_samples: 3,
            n_match_samples: 3,
            keypoints_per_image: 64,
            match_fraction: 0.5,
            learning_rate: 1e-4,
            iterations: 5000,
            seed: 0,
            baseline: BaselineMode::GlobalMean,
            checkpoint_every: 0,
            ransac: RansacConfig {
                max_iterations: 100,
                ..Default::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_keypoint_samples == 0 || self.n_match_samples == 0 {
            return Err(TrainError::Config(
                "n_keypoint_samples and n_match_samples must be at least 1".into(),
            ));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction <= 1.0) {
            return Err(TrainError::Config("match_fraction outside (0, 1]".into()));
        }
        if self.keypoints_per_image == 0 {
            return Err(TrainError::Config("keypoints_per_image must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Bookkeeping for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub keypoint_sample: usize,
    pub match_sample: usize,
    pub clamped_loss: f64,
    pub raw_error_deg: f64,
    pub failed: bool,
    /// Joint keypoint log-probability of both images (the detector term).
    pub logp_keypoints: f64,
    /// Sequence log-probability of the drawn match subset (the matcher term).
    pub logp_matches: f64,
    pub advantage: f64,
}

/// Loss and status returned by the black-box task for one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOutcome {
    pub clamped_loss: f64,
    pub raw_error_deg: f64,
    pub failed: bool,
}

/// The realized randomness of one training iteration: everything needed to
/// re-evaluate the surrogate objective as a deterministic function of the
/// parameters.
#[derive(Debug, Clone)]
pub struct FrozenEpisodes {
    pub samples: Vec<FrozenKeypointSample>,
    pub n_match_samples: usize,
    pub losses: Vec<f64>,
    pub advantages: Vec<f64>,
    pub records: Vec<EpisodeRecord>,
}

/// One keypoint-set sample with its candidate matches and drawn subsets.
#[derive(Debug, Clone)]
pub struct FrozenKeypointSample {
    pub kps1: KeyPointSet,
    pub kps2: KeyPointSet,
    /// Mutual-NN candidate pairs (indices into `kps1.points`/`kps2.points`).
    pub candidates: Vec<(usize, usize)>,
    /// Per match-sample: drawn candidate indices in draw order.
    pub subsets: Vec<Vec<usize>>,
}

impl FrozenEpisodes {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Advantages for a flat loss vector laid out `s·n_M + m`.
pub fn compute_advantages(losses: &[f64], mode: BaselineMode, n_match_samples: usize) -> Vec<f64> {
    match mode {
        BaselineMode::None => losses.to_vec(),
        BaselineMode::GlobalMean => {
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            losses.iter().map(|l| l - mean).collect()
        }
        BaselineMode::PerKeypointSet => {
            let mut out = Vec::with_capacity(losses.len());
            for chunk in losses.chunks(n_match_samples) {
                let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                out.extend(chunk.iter().map(|l| l - mean));
            }
            out
        }
    }
}

/// Log-density of drawing `order` sequentially without replacement from the
/// softmax over negated distances.
pub fn match_sequence_log_prob(distances: &[f64], order: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..distances.len()).collect();
    let mut total = 0.0;
    for &chosen in order {
        let neg: Vec<f64> = remaining.iter().map(|&k| -distances[k]).collect();
        let lse = log_sum_exp(&neg);
        total += -distances[chosen] - lse;
        remaining.retain(|&k| k != chosen);
    }
    total
}

/// Accumulates `coeff · ∂ log P(order) / ∂ distances[j]` into `out`.
///
/// For each draw step, every remaining candidate `j` receives the softmax
/// weight of that step and the chosen candidate additionally receives −1.
pub fn match_sequence_distance_grads(
    distances: &[f64],
    order: &[usize],
    coeff: f64,
    out: &mut [f64],
) {
    let mut remaining: Vec<usize> = (0..distances.len()).collect();
    for &chosen in order {
        let neg: Vec<f64> = remaining.iter().map(|&k| -distances[k]).collect();
        let lse = log_sum_exp(&neg);
        for (slot, &k) in remaining.iter().enumerate() {
            out[k] += coeff * (neg[slot] - lse).exp();
        }
        out[chosen] -= coeff;
        remaining.retain(|&k| k != chosen);
    }
}

/// Unit descriptors at the keypoints of a set.
fn keypoint_descriptors(
    kps: &KeyPointSet,
    field: &DescriptorField,
) -> Result<Vec<Vec<f64>>, ModelError> {
    kps.points
        .iter()
        .map(|p| descriptor_at(field, p.x as f64, p.y as f64))
        .collect()
}

/// Calibrated coordinates of the keypoints of a set.
fn calibrated_keypoints(kps: &KeyPointSet, pair: &PairSample) -> Vec<NormalizedPoint2> {
    kps.points
        .iter()
        .map(|p| {
            pair.intrinsics
                .calibrate(p.x as f64, p.y as f64)
                .expect("in-image pixels calibrate within bounds")
        })
        .collect()
}

/// Candidate descriptor distances recomputed from the fields.
fn candidate_distances(
    sample: &FrozenKeypointSample,
    desc1: &[Vec<f64>],
    desc2: &[Vec<f64>],
) -> Vec<f64> {
    sample
        .candidates
        .iter()
        .map(|&(i, j)| crate::sampling::descriptor_distance(&desc1[i], &desc2[j]))
        .collect()
}

/// Samples all episodes of one iteration, running `task` for each.
///
/// The task closure receives the calibrated keypoint sets, the episode's
/// match subset (as index pairs into those sets) and a per-episode seed; it
/// must return the episode loss. The default task is [`run_task`].
pub fn sample_episodes(
    pair: &PairSample,
    params: &ModelParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    task: &mut dyn FnMut(
        &[NormalizedPoint2],
        &[NormalizedPoint2],
        &[(usize, usize)],
        u64,
    ) -> EpisodeOutcome,
) -> Result<FrozenEpisodes, TrainError> {
    cfg.validate()?;
    let (h, w) = (pair.image1.h, pair.image1.w);
    let (heat1, field1, _) = forward(&pair.image1.to_f64(), h, w, params)?;
    let (heat2, field2, _) = forward(&pair.image2.to_f64(), h, w, params)?;

    let mut samples = Vec::with_capacity(cfg.n_keypoint_samples);
    let mut losses = Vec::new();
    let mut outcomes = Vec::new();
    for _ in 0..cfg.n_keypoint_samples {
        let kps1 = sample_keypoints(&heat1, cfg.keypoints_per_image, rng)?;
        let kps2 = sample_keypoints(&heat2, cfg.keypoints_per_image, rng)?;
        let desc1 = keypoint_descriptors(&kps1, &field1)?;
        let desc2 = keypoint_descriptors(&kps2, &field2)?;
        let cands = mutual_nn_candidates(&desc1, &desc2);
        let dist = match_distribution(&cands)?;
        let cal1 = calibrated_keypoints(&kps1, pair);
        let cal2 = calibrated_keypoints(&kps2, pair);

        let mut subsets = Vec::with_capacity(cfg.n_match_samples);
        for _ in 0..cfg.n_match_samples {
            let subset = sample_match_subset(&dist, cfg.match_fraction, rng)?;
            let episode_seed = rng.gen::<u64>();
            let matches: Vec<(usize, usize)> =
                subset.matches.iter().map(|m| (m.i, m.j)).collect();
            let outcome = task(&cal1, &cal2, &matches, episode_seed);
            losses.push(outcome.clamped_loss);
            outcomes.push(outcome);
            // Store draw order as candidate indices for gradient replay.
            let order: Vec<usize> = subset
                .matches
                .iter()
                .map(|m| {
                    cands
                        .iter()
                        .position(|&(i, j, _)| i == m.i && j == m.j)
                        .expect("subset matches come from the candidate set")
                })
                .collect();
            subsets.push(order);
        }
        samples.push(FrozenKeypointSample {
            kps1,
            kps2,
            candidates: cands.iter().map(|&(i, j, _)| (i, j)).collect(),
            subsets,
        });
    }

    let advantages = compute_advantages(&losses, cfg.baseline, cfg.n_match_samples);
    let mut records = Vec::with_capacity(losses.len());
    for (s, sample) in samples.iter().enumerate() {
        let logp_kps = sample.kps1.joint_log_prob + sample.kps2.joint_log_prob;
        let desc1_dists = {
            // Recompute distances once per sample for the sequence terms.
            let desc1 = keypoint_descriptors(&sample.kps1, &field1)?;
            let desc2 = keypoint_descriptors(&sample.kps2, &field2)?;
            candidate_distances(sample, &desc1, &desc2)
        };
        for (m, order) in sample.subsets.iter().enumerate() {
            let e = s * cfg.n_match_samples + m;
            records.push(EpisodeRecord {
                keypoint_sample: s,
                match_sample: m,
                clamped_loss: losses[e],
                raw_error_deg: outcomes[e].raw_error_deg,
                failed: outcomes[e].failed,
                logp_keypoints: logp_kps,
                logp_matches: match_sequence_log_prob(&desc1_dists, order),
                advantage: advantages[e],
            });
        }
    }

    Ok(FrozenEpisodes {
        samples,
        n_match_samples: cfg.n_match_samples,
        losses,
        advantages,
        records,
    })
}

/// The surrogate objective re-evaluated at `params` with the episode
/// structure (pixels, candidate pairs, subsets, advantages) held fixed.
///
/// Smooth in the parameters; its gradient is [`surrogate_gradient`]. Used by
/// the finite-difference checks.
pub fn surrogate_value(
    pair: &PairSample,
    params: &ModelParams,
    frozen: &FrozenEpisodes,
) -> Result<f64, TrainError> {
    let (h, w) = (pair.image1.h, pair.image1.w);
    let (heat1, field1, _) = forward(&pair.image1.to_f64(), h, w, params)?;
    let (heat2, field2, _) = forward(&pair.image2.to_f64(), h, w, params)?;
    let n_episodes = frozen.losses.len() as f64;
    let mut total = 0.0;
    for (s, sample) in frozen.samples.iter().enumerate() {
        let logp_kps = keypoint_set_log_prob(&sample.kps1, &heat1)
            + keypoint_set_log_prob(&sample.kps2, &heat2);
        let desc1 = keypoint_descriptors(&sample.kps1, &field1)?;
        let desc2 = keypoint_descriptors(&sample.kps2, &field2)?;
        let dists = candidate_distances(sample, &desc1, &desc2);
        for (m, order) in sample.subsets.iter().enumerate() {
            let e = s * frozen.n_match_samples + m;
            let logp_matches = match_sequence_log_prob(&dists, order);
            total += frozen.advantages[e] * (logp_kps + logp_matches);
        }
    }
    Ok(total / n_episodes)
}

/// Joint log-probability of a fixed keypoint set under a (possibly updated)
/// heatmap.
fn keypoint_set_log_prob(kps: &KeyPointSet, heat: &HeatMap) -> f64 {
    kps.points
        .iter()
        .map(|p| p.multiplicity as f64 * heat.log_value(p.x, p.y))
        .sum()
}

/// Exact reverse-mode gradient of [`surrogate_value`] with respect to the
/// parameters.
pub fn surrogate_gradient(
    pair: &PairSample,
    params: &ModelParams,
    frozen: &FrozenEpisodes,
) -> Result<Grads, TrainError> {
    let (h, w) = (pair.image1.h, pair.image1.w);
    let img1 = pair.image1.to_f64();
    let img2 = pair.image2.to_f64();
    let (_, field1, cache1) = forward(&img1, h, w, params)?;
    let (_, field2, cache2) = forward(&img2, h, w, params)?;
    let desc_dim = params.config().desc_dim;

    let n_episodes = frozen.losses.len() as f64;
    let mut g_log_heat1 = vec![0.0; h * w];
    let mut g_log_heat2 = vec![0.0; h * w];
    let mut d_field1 = vec![0.0; h * w * desc_dim];
    let mut d_field2 = vec![0.0; h * w * desc_dim];

    for (s, sample) in frozen.samples.iter().enumerate() {
        // Keypoint term: the whole sample's advantage mass lands on the
        // log-probabilities of the drawn pixels.
        let kp_coeff: f64 = (0..frozen.n_match_samples)
            .map(|m| frozen.advantages[s * frozen.n_match_samples + m])
            .sum::<f64>()
            / n_episodes;
        for p in &sample.kps1.points {
            g_log_heat1[p.y * w + p.x] += kp_coeff * p.multiplicity as f64;
        }
        for p in &sample.kps2.points {
            g_log_heat2[p.y * w + p.x] += kp_coeff * p.multiplicity as f64;
        }

        // Match term: coefficients on each candidate's descriptor distance.
        let desc1 = keypoint_descriptors(&sample.kps1, &field1)?;
        let desc2 = keypoint_descriptors(&sample.kps2, &field2)?;
        let dists = candidate_distances(sample, &desc1, &desc2);
        let mut g_dist = vec![0.0; dists.len()];
        for (m, order) in sample.subsets.iter().enumerate() {
            let coeff = frozen.advantages[s * frozen.n_match_samples + m] / n_episodes;
            match_sequence_distance_grads(&dists, order, coeff, &mut g_dist);
        }
        for (c, &(i, j)) in sample.candidates.iter().enumerate() {
            if g_dist[c] == 0.0 {
                continue;
            }
            let d = dists[c];
            if d < 1e-12 {
                continue; // coincident descriptors: zero subgradient
            }
            let p1 = &sample.kps1.points[i];
            let p2 = &sample.kps2.points[j];
            let dir: Vec<f64> = desc1[i]
                .iter()
                .zip(&desc2[j])
                .map(|(a, b)| (a - b) / d)
                .collect();
            let d_u1: Vec<f64> = dir.iter().map(|v| g_dist[c] * v).collect();
            let d_u2: Vec<f64> = dir.iter().map(|v| -g_dist[c] * v).collect();
            descriptor_at_backward(&field1, p1.x as f64, p1.y as f64, &d_u1, &mut d_field1)?;
            descriptor_at_backward(&field2, p2.x as f64, p2.y as f64, &d_u2, &mut d_field2)?;
        }
    }

    let mut grads = backward_scalar(params, &cache1, &g_log_heat1, &d_field1)?;
    let g2 = backward_scalar(params, &cache2, &g_log_heat2, &d_field2)?;
    grads.add_assign(&g2);
    Ok(grads)
}

/// Default black-box task: 5-point RANSAC against the pair's ground truth.
fn default_task<'a>(
    pair: &'a PairSample,
    base: &'a RansacConfig,
) -> impl FnMut(&[NormalizedPoint2], &[NormalizedPoint2], &[(usize, usize)], u64) -> EpisodeOutcome + 'a
{
    move |kps1, kps2, matches, seed| {
        let cfg = RansacConfig { seed, ..*base };
        let result = run_task(kps1, kps2, matches, &pair.gt_pose, &cfg);
        EpisodeOutcome {
            clamped_loss: result.clamped_loss,
            raw_error_deg: result.raw_error_deg,
            failed: result.failed,
        }
    }
}

/// One REINFORCE iteration on a pair: sample episodes, assemble the surrogate
/// and return its gradient, the mean episode loss, and the episode records.
pub fn run_training_iteration(
    pair: &PairSample,
    params: &ModelParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Grads, f64, Vec<EpisodeRecord>), TrainError> {
    if cfg.n_keypoint_samples * cfg.n_match_samples == 1
        && cfg.baseline != BaselineMode::None
    {
        log::warn!(
            "single-episode iteration with a mean baseline has identically zero gradient"
        );
    }
    let mut task = default_task(pair, &cfg.ransac);
    let frozen = sample_episodes(pair, params, cfg, rng, &mut task)?;
    let grads = surrogate_gradient(pair, params, &frozen)?;
    let mean = frozen.mean_loss();
    Ok((grads, mean, frozen.records))
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_loss: f64,
    /// Mean raw pose error over the iteration's non-failed episodes
    /// (infinite when every episode failed).
    pub mean_raw_error_deg: f64,
}

/// Writes the loss curve as `iteration<TAB>mean_loss<TAB>mean_raw_error_deg`.
pub fn write_curve(out: &mut impl std::io::Write, curve: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "iteration\tmean_loss\tmean_raw_error_deg")?;
    for p in curve {
        writeln!(out, "{}\t{}\t{}", p.iteration, p.mean_loss, p.mean_raw_error_deg)?;
    }
    Ok(())
}

fn curve_point(iteration: usize, mean_loss: f64, records: &[EpisodeRecord]) -> CurvePoint {
    let successes: Vec<f64> = records
        .iter()
        .filter(|r| !r.failed)
        .map(|r| r.raw_error_deg)
        .collect();
    let mean_raw = if successes.is_empty() {
        f64::INFINITY
    } else {
        successes.iter().sum::<f64>() / successes.len() as f64
    };
    CurvePoint {
        iteration,
        mean_loss,
        mean_raw_error_deg: mean_raw,
    }
}

/// Full training loop over a dataset in a fixed shuffled order.
///
/// The observer runs every `checkpoint_every` iterations (and is never called
/// when that is zero); errors inside it abort training.
pub fn train_with_observer(
    dataset: &[PairSample],
    params: ModelParams,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &ModelParams) -> Result<(), TrainError>,
) -> Result<(ModelParams, Vec<CurvePoint>), TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !params.all_finite() {
        return Err(TrainError::Config("non-finite initial parameters".into()));
    }
    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut curve = Vec::with_capacity(cfg.iterations);

    // Fixed shuffled pair order derived from the seed.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.gen_range(0..=i);
        order.swap(i, j);
    }

    for iteration in 0..cfg.iterations {
        let pair = &dataset[order[iteration % order.len()]];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1 + iteration as u64));
        let (grads, mean_loss, records) = run_training_iteration(pair, &params, cfg, &mut rng)?;
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
        curve.push(curve_point(iteration, mean_loss, &records));
        if cfg.checkpoint_every > 0 && (iteration + 1) % cfg.checkpoint_every == 0 {
            observer(iteration, &params)?;
        }
    }
    Ok((params, curve))
}

/// [`train_with_observer`] without checkpointing.
pub fn train(
    dataset: &[PairSample],
    params: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<CurvePoint>), TrainError> {
    train_with_observer(dataset, params, cfg, &mut |_, _| Ok(()))
}
