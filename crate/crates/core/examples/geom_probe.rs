use featpose::eval::{
    evaluate_pose, EvalConfig, EvalError, FeatureExtractor, Features, ImageSide, OracleExtractor,
};
use featpose::robust::RansacConfig;
use featpose::synthdata::{generate_dataset, PairSample, SceneConfig};

/// Oracle keypoints rounded to integer pixels: isolates the quantization
/// floor of the pose error from matching quality.
struct QuantizedOracle;

impl FeatureExtractor for QuantizedOracle {
    fn features(&self, pair: &PairSample, side: ImageSide) -> Result<Features, EvalError> {
        let (mut kps, descs) = OracleExtractor.features(pair, side)?;
        for p in kps.iter_mut() {
            *p = (p.0.round(), p.1.round());
        }
        Ok((kps, descs))
    }
}

fn run(name: &str, cfg: &SceneConfig, threshold: f64) {
    let dataset = generate_dataset(cfg, 60, 4242).unwrap();
    let eval_cfg = EvalConfig {
        ransac: RansacConfig {
            max_iterations: 1000,
            inlier_threshold: threshold,
            ..Default::default()
        },
        auc_thresholds_deg: vec![5.0, 10.0, 20.0],
        seed: 7,
    };
    for (label, ex) in [
        ("exact", &OracleExtractor as &dyn FeatureExtractor),
        ("quantized", &QuantizedOracle as &dyn FeatureExtractor),
    ] {
        let report = evaluate_pose(&dataset, ex, &eval_cfg).unwrap();
        let e = report.curve.errors();
        let q = |f: f64| e[((e.len() - 1) as f64 * f) as usize];
        println!(
            "{name}/{label}: AUC10 {:.3} | err q25 {:.2} q50 {:.2} q75 {:.2} | matches {:.0}",
            report.auc[1].1,
            q(0.25),
            q(0.5),
            q(0.75),
            report.stats.mean_matches_per_pair
        );
    }
}

fn main() {
    run("default-96", &SceneConfig::default(), 1.3 / 96.0);
}
