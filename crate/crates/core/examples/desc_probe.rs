use featpose::model::{descriptor_at, forward, ModelConfig, ModelParams};
use featpose::sampling::{extract_keypoints_test, mutual_nn_candidates, ExtractConfig};
use featpose::synthdata::{generate_dataset, SceneConfig};
use featpose::trainer::{pretrain, PretrainConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = SceneConfig::default();
    let train_set = generate_dataset(&scene, 150, 42).unwrap();
    let test_set = generate_dataset(&scene, 30, 4242).unwrap();
    let params = ModelParams::init(ModelConfig::default(), 1234);
    let pre_cfg = PretrainConfig {
        iterations: 2000,
        seed: 11,
        triplet_weight: 8.0,
        max_triplets: 64,
        ..Default::default()
    };
    let (params, _) = pretrain(&train_set, params, &pre_cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stats = [(0usize, 0usize); 3]; // (correct, total) for exact/jittered/extracted-align
    let mut loc_err_sum = 0.0;
    let mut loc_n = 0usize;
    for pair in &test_set {
        let (h, w) = (pair.image1.h, pair.image1.w);
        let (heat1, f1, _) = forward(&pair.image1.to_f64(), h, w, &params).unwrap();
        let (_heat2, f2, _) = forward(&pair.image2.to_f64(), h, w, &params).unwrap();

        for (mode, jitter) in [(0usize, 0.0f64), (1, 1.0)] {
            let d1: Vec<Vec<f64>> = pair.gt_keypoints1.iter()
                .map(|&(x, y)| {
                    let (jx, jy) = (x + rng.gen_range(-jitter..=jitter), y + rng.gen_range(-jitter..=jitter));
                    descriptor_at(&f1, jx.clamp(0.0, (w-1) as f64), jy.clamp(0.0, (h-1) as f64)).unwrap()
                }).collect();
            let d2: Vec<Vec<f64>> = pair.gt_keypoints2.iter()
                .map(|&(x, y)| {
                    let (jx, jy) = (x + rng.gen_range(-jitter..=jitter), y + rng.gen_range(-jitter..=jitter));
                    descriptor_at(&f2, jx.clamp(0.0, (w-1) as f64), jy.clamp(0.0, (h-1) as f64)).unwrap()
                }).collect();
            let cands = mutual_nn_candidates(&d1, &d2);
            let gt: std::collections::BTreeSet<(usize, usize)> = pair.gt_correspondences.iter().cloned().collect();
            stats[mode].0 += cands.iter().filter(|&&(i, j, _)| gt.contains(&(i, j))).count();
            stats[mode].1 += cands.len();
        }

        // Extraction localization: distance from each extracted keypoint to
        // the nearest gt center.
        let kps = extract_keypoints_test(&heat1, &ExtractConfig::desk_scale());
        for p in &kps.points {
            let best = pair.gt_keypoints1.iter()
                .map(|&(gx, gy)| ((p.x as f64 - gx).powi(2) + (p.y as f64 - gy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            loc_err_sum += best.min(5.0);
            loc_n += 1;
        }
    }
    println!("desc precision @gt exact:    {:.3} ({} cands)", stats[0].0 as f64 / stats[0].1 as f64, stats[0].1);
    println!("desc precision @gt jitter1:  {:.3} ({} cands)", stats[1].0 as f64 / stats[1].1 as f64, stats[1].1);
    println!("extracted keypoint -> nearest gt: mean {:.2} px over {} kps", loc_err_sum / loc_n as f64, loc_n);
}
