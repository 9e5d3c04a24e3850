use featpose::eval::{
    evaluate_pose, EvalConfig, NetworkExtractor, OracleExtractor,
};
use featpose::model::{ModelConfig, ModelParams};
use featpose::robust::RansacConfig;
use featpose::sampling::ExtractConfig;
use featpose::synthdata::{generate_dataset, SceneConfig};
use featpose::trainer::{pretrain, train, BaselineMode, PretrainConfig, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_iters: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(600);
    let rl_iters: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(1500);
    let rl_lr: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(3e-4);
    let n_train: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(200);
    let n_test: usize = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(100);

    let t0 = Instant::now();
    let scene = SceneConfig::default();
    let train_set = generate_dataset(&scene, n_train, 42).unwrap();
    let test_set = generate_dataset(&scene, n_test, 4242).unwrap();
    println!("[{:?}] datasets ready ({} train / {} test)", t0.elapsed(), n_train, n_test);

    let eval_cfg = EvalConfig {
        ransac: RansacConfig { max_iterations: 1000, inlier_threshold: 0.0135, ..Default::default() },
        auc_thresholds_deg: vec![5.0, 10.0, 20.0],
        seed: 7,
    };
    let oracle = evaluate_pose(&test_set, &OracleExtractor, &eval_cfg).unwrap();
    println!("oracle AUC: {:?}", oracle.auc);

    let params = ModelParams::init(ModelConfig::default(), 1234);
    let pre_cfg = PretrainConfig { iterations: pre_iters, seed: 11, triplet_weight: 8.0, max_triplets: 64, ..Default::default() };
    let t1 = Instant::now();
    let (pre_params, pre_curve) = pretrain(&train_set, params, &pre_cfg).unwrap();
    println!("[{:?}] pretrain done; first loss {:.3}, last {:.3}",
        t1.elapsed(), pre_curve.first().unwrap().mean_loss, pre_curve.last().unwrap().mean_loss);

    let extract = ExtractConfig::desk_scale();
    let ex_pre = NetworkExtractor { params: &pre_params, extract };
    let t2 = Instant::now();
    let pre_report = evaluate_pose(&test_set, &ex_pre, &eval_cfg).unwrap();
    println!("[{:?}] pretrained AUC: {:?}", t2.elapsed(), pre_report.auc);
    println!("  stats: {:?}", pre_report.stats);

    let train_cfg = TrainConfig {
        n_keypoint_samples: 3,
        n_match_samples: 3,
        keypoints_per_image: 128,
        match_fraction: 0.5,
        learning_rate: rl_lr,
        iterations: rl_iters,
        seed: 42,
        baseline: BaselineMode::GlobalMean,
        checkpoint_every: 0,
        ransac: RansacConfig { max_iterations: 100, seed: 9, inlier_threshold: 0.0135, ..Default::default() },
    };
    let t3 = Instant::now();
    let (rl_params, curve) = train(&train_set, pre_params.clone(), &train_cfg).unwrap();
    let w = (rl_iters / 20).max(1);
    let head: f64 = curve[..w].iter().map(|p| p.mean_loss).sum::<f64>() / w as f64;
    let tail: f64 = curve[rl_iters - w..].iter().map(|p| p.mean_loss).sum::<f64>() / w as f64;
    println!("[{:?}] reinforce done; loss head {head:.3} tail {tail:.3} drop {:.1}%",
        t3.elapsed(), 100.0 * (1.0 - tail / head));

    let ex_rl = NetworkExtractor { params: &rl_params, extract };
    let rl_report = evaluate_pose(&test_set, &ex_rl, &eval_cfg).unwrap();
    let quantiles = |r: &featpose::eval::EvalReport| -> Vec<f64> {
        let e = r.curve.errors();
        [0.1, 0.25, 0.5, 0.75, 0.9].iter().map(|q| e[((e.len() - 1) as f64 * q) as usize]).collect()
    };
    println!("pre error quantiles: {:?}", quantiles(&pre_report));
    println!("rl  error quantiles: {:?}", quantiles(&rl_report));
    println!("trained AUC: {:?}", rl_report.auc);
    println!("  stats: {:?}", rl_report.stats);
    let pre10 = pre_report.auc[1].1;
    let rl10 = rl_report.auc[1].1;
    println!("AUC@10 relative gain: {:.1}%  (pre {pre10:.4} -> rl {rl10:.4})",
        100.0 * (rl10 - pre10) / pre10.max(1e-9));
    println!("inlier ratios est {:.4} -> {:.4}, gt {:.4} -> {:.4}",
        pre_report.stats.estimated_inlier_ratio, rl_report.stats.estimated_inlier_ratio,
        pre_report.stats.gt_inlier_ratio, rl_report.stats.gt_inlier_ratio);
    println!("total {:?}", t0.elapsed());
}
