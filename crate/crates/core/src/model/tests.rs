use super::*;
use rand::Rng;

fn tiny_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn constant_image_gives_uniform_heatmap() {
    let params = ModelParams::init(ModelConfig::tiny(), 1);
    let (h, w) = (16, 12);
    let image = vec![0.0; h * w];
    let (heat, _, _) = forward(&image, h, w, &params).unwrap();
    let uniform = 1.0 / (h * w) as f64;
    for &v in heat.values() {
        assert!((v - uniform).abs() < 1e-6 * uniform, "value {v}");
    }
}

#[test]
fn heatmap_sums_to_one_and_descriptors_unit_norm() {
    let params = ModelParams::init(ModelConfig::default(), 2);
    let (h, w) = (16, 16);
    let image = tiny_image(h, w, 3);
    let (heat, field, _) = forward(&image, h, w, &params).unwrap();
    assert!(heat.is_valid_distribution());
    let sum: f64 = heat.values().iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
    for (x, y) in [(0.0, 0.0), (3.7, 8.2), (15.0, 15.0)] {
        let d = descriptor_at(&field, x, y).unwrap();
        let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn forward_rejects_bad_shapes() {
    let params = ModelParams::init(ModelConfig::tiny(), 1);
    assert!(matches!(
        forward(&[0.0; 10], 5, 2, &params),
        Err(ModelError::ShapeMismatch(_))
    ));
    assert!(matches!(
        forward(&[0.0; 16], 2, 8, &params),
        Err(ModelError::ShapeMismatch(_))
    ));
}

#[test]
fn forward_deterministic_within_process() {
    let params = ModelParams::init(ModelConfig::tiny(), 5);
    let image = tiny_image(8, 8, 6);
    let (h1, f1, _) = forward(&image, 8, 8, &params).unwrap();
    let (h2, f2, _) = forward(&image, 8, 8, &params).unwrap();
    assert_eq!(h1.values(), h2.values());
    assert_eq!(f1.data(), f2.data());
}

#[test]
fn forward_golden_regression() {
    // Frozen values from the first build of this network; guards against
    // accidental changes to the architecture or the math.
    let params = ModelParams::init(ModelConfig::tiny(), 7);
    let (h, w) = (8, 8);
    let image: Vec<f64> = (0..h * w).map(|i| (i % 11) as f64 / 10.0).collect();
    let (heat, field, _) = forward(&image, h, w, &params).unwrap();
    let golden_heat = [
        (0usize, 1.56352744353311195e-2),
        (27, 1.56260078536251054e-2),
        (63, 1.56313588962144791e-2),
    ];
    for (idx, expected) in golden_heat {
        assert!(
            (heat.values()[idx] - expected).abs() < 1e-12,
            "heat[{idx}] = {:.17} expected {expected:.17}",
            heat.values()[idx]
        );
    }
    let golden_field = [
        (0usize, 2.18963085012823384e-4),
        (50, -1.85477193387589704e-3),
        (191, -3.71221455338323564e-3),
    ];
    for (idx, expected) in golden_field {
        assert!(
            (field.data()[idx] - expected).abs() < 1e-12,
            "field[{idx}] = {:.17} expected {expected:.17}",
            field.data()[idx]
        );
    }
}

#[test]
fn descriptor_at_grid_node_matches_node_value() {
    let params = ModelParams::init(ModelConfig::tiny(), 8);
    let image = tiny_image(8, 8, 9);
    let (_, field, _) = forward(&image, 8, 8, &params).unwrap();
    let d = descriptor_at(&field, 3.0, 5.0).unwrap();
    let raw = field.node(3, 5);
    let n: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (a, b) in d.iter().zip(raw) {
        assert!((a - b / n).abs() < 1e-12);
    }
}

#[test]
fn descriptor_at_midpoint_averages_nodes() {
    let field = DescriptorField::new(
        1,
        2,
        2,
        vec![
            1.0, 0.0, // node (0,0)
            0.0, 2.0, // node (1,0)
        ],
    );
    let d = descriptor_at(&field, 0.5, 0.0).unwrap();
    // Mean is (0.5, 1.0); normalized.
    let n = (0.25f64 + 1.0).sqrt();
    assert!((d[0] - 0.5 / n).abs() < 1e-12);
    assert!((d[1] - 1.0 / n).abs() < 1e-12);
}

#[test]
fn descriptor_at_matches_bruteforce_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (h, w, dim) = (6, 5, 4);
    let data: Vec<f64> = (0..h * w * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let field = DescriptorField::new(h, w, dim, data.clone());
    for _ in 0..50 {
        let x = rng.gen_range(0.0..(w - 1) as f64);
        let y = rng.gen_range(0.0..(h - 1) as f64);
        // Independent re-implementation of bilinear interpolation.
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize, c: usize| data[(yy * w + xx) * dim + c];
        let mut expected = vec![0.0; dim];
        for (c, e) in expected.iter_mut().enumerate() {
            let top = (1.0 - fx) * at(x0, y0, c) + fx * at(x0 + 1, y0, c);
            let bot = (1.0 - fx) * at(x0, y0 + 1, c) + fx * at(x0 + 1, y0 + 1, c);
            *e = (1.0 - fy) * top + fy * bot;
        }
        let norm: f64 = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        let got = descriptor_at(&field, x, y).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e / norm).abs() < 1e-12);
        }
    }
}

#[test]
fn descriptor_at_out_of_bounds() {
    let field = DescriptorField::new(4, 4, 2, vec![1.0; 32]);
    assert!(matches!(
        descriptor_at(&field, -0.1, 0.0),
        Err(ModelError::OutOfBounds { .. })
    ));
    assert!(matches!(
        descriptor_at(&field, 0.0, 3.5),
        Err(ModelError::OutOfBounds { .. })
    ));
}

#[test]
fn descriptor_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scaled: Vec<f64> = data.iter().map(|v| v * 17.3).collect();
    let f1 = DescriptorField::new(4, 4, 3, data);
    let f2 = DescriptorField::new(4, 4, 3, scaled);
    for _ in 0..20 {
        let x = rng.gen_range(0.0..3.0);
        let y = rng.gen_range(0.0..3.0);
        let a = descriptor_at(&f1, x, y).unwrap();
        let b = descriptor_at(&f2, x, y).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn descriptor_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (h, w, dim) = (4, 4, 3);
    let data: Vec<f64> = (0..h * w * dim).map(|_| rng.gen_range(0.2..1.0)).collect();
    let field = DescriptorField::new(h, w, dim, data.clone());
    let x = 1.3;
    let y = 2.6;
    let coeff: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut acc = vec![0.0; data.len()];
    descriptor_at_backward(&field, x, y, &coeff, &mut acc).unwrap();
    let objective = |d: &[f64]| -> f64 {
        let f = DescriptorField::new(h, w, dim, d.to_vec());
        descriptor_at(&f, x, y)
            .unwrap()
            .iter()
            .zip(&coeff)
            .map(|(a, b)| a * b)
            .sum()
    };
    let eps = 1e-6;
    for k in 0..data.len() {
        let mut dp = data.clone();
        dp[k] += eps;
        let mut dm = data.clone();
        dm[k] -= eps;
        let fd = (objective(&dp) - objective(&dm)) / (2.0 * eps);
        assert!(
            (fd - acc[k]).abs() < 1e-6,
            "field grad {k}: fd {fd} analytic {}",
            acc[k]
        );
    }
}

#[test]
fn softmax_log_backward_matches_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (probs, _) = spatial_softmax(&logits);
    // One-hot upstream at pixel p: gradient at logit q must be δ_pq − softmax_q.
    for p in 0..6 {
        let mut one_hot = vec![0.0; 6];
        one_hot[p] = 1.0;
        let grad = softmax_log_backward(&one_hot, &probs);
        for q in 0..6 {
            let expected = if p == q { 1.0 - probs[q] } else { -probs[q] };
            assert!((grad[q] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_gradient_sums_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let logits: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (probs, _) = spatial_softmax(&logits);
    let upstream: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad = softmax_log_backward(&upstream, &probs);
    let total: f64 = grad.iter().sum();
    assert!(total.abs() < 1e-8, "gradient sum {total}");
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let params = ModelParams::init(ModelConfig::tiny(), 15);
    let (h, w) = (8, 8);
    let image = tiny_image(h, w, 16);
    let (_, _, cache) = forward(&image, h, w, &params).unwrap();
    let grads = backward_scalar(
        &params,
        &cache,
        &vec![0.0; h * w],
        &vec![0.0; h * w * params.config().desc_dim],
    )
    .unwrap();
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn stale_cache_detected() {
    let mut params = ModelParams::init(ModelConfig::tiny(), 17);
    let (h, w) = (8, 8);
    let image = tiny_image(h, w, 18);
    let (_, _, cache) = forward(&image, h, w, &params).unwrap();
    let mut state = AdamState::new(&params);
    let grads = Grads::zeros_like(&params);
    adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
    let d = params.config().desc_dim;
    assert!(matches!(
        backward_scalar(&params, &cache, &vec![0.0; h * w], &vec![0.0; h * w * d]),
        Err(ModelError::StaleCache)
    ));
}

/// Full-network finite-difference check on a linear functional of the two
/// outputs: S = Σ g·log_heat + Σ q·field.
#[test]
fn backward_matches_finite_differences() {
    let cfg = ModelConfig::tiny();
    let mut params = ModelParams::init(cfg, 19);
    let (h, w) = (8, 8);
    let image = tiny_image(h, w, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g_heat: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g_field: Vec<f64> = (0..h * w * cfg.desc_dim)
        .map(|_| rng.gen_range(-0.2..0.2))
        .collect();

    let (_, _, cache) = forward(&image, h, w, &params).unwrap();
    let analytic = backward_scalar(&params, &cache, &g_heat, &g_field).unwrap();
    let analytic = analytic.flat();

    let objective = |p: &ModelParams| -> f64 {
        let (heat, field, _) = forward(&image, h, w, p).unwrap();
        let s1: f64 = heat
            .log_values()
            .iter()
            .zip(&g_heat)
            .map(|(a, b)| a * b)
            .sum();
        let s2: f64 = field.data().iter().zip(&g_field).map(|(a, b)| a * b).sum();
        s1 + s2
    };

    let eps = 1e-4;
    let n = params.num_scalars();
    let mut worst: (f64, usize) = (0.0, 0);
    for k in 0..n {
        let orig = params.get_scalar(k);
        params.set_scalar(k, orig + eps);
        let plus = objective(&params);
        params.set_scalar(k, orig - eps);
        let minus = objective(&params);
        params.set_scalar(k, orig);
        let fd = (plus - minus) / (2.0 * eps);
        let a = analytic[k];
        if a.abs() > 1e-10 {
            let rel = (fd - a).abs() / a.abs().max(fd.abs());
            if rel > worst.0 {
                worst = (rel, k);
            }
        }
    }
    assert!(
        worst.0 < 1e-3,
        "worst relative error {} at parameter {}",
        worst.0,
        worst.1
    );
}

#[test]
fn adam_first_step_matches_closed_form() {
    let mut params = ModelParams::init(ModelConfig::tiny(), 22);
    let before = params.tensor(Layer::Enc1W).data[0];
    let mut grads = Grads::zeros_like(&params);
    grads.tensors[0][0] = 1.0;
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
    let delta = params.tensor(Layer::Enc1W).data[0] - before;
    // Bias-corrected first step: −lr · 1 / (1 + eps).
    let expected = -0.1 / (1.0 + 1e-8);
    assert!((delta - expected).abs() < 1e-15, "delta {delta}");
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut params = ModelParams::init(ModelConfig::tiny(), 23);
    let snapshot: Vec<f64> = params.tensors().iter().flat_map(|t| t.data.clone()).collect();
    let grads = Grads::zeros_like(&params);
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
    let after: Vec<f64> = params.tensors().iter().flat_map(|t| t.data.clone()).collect();
    assert_eq!(snapshot, after);
}

#[test]
fn adam_two_steps_match_hand_computed_moments() {
    let mut params = ModelParams::init(ModelConfig::tiny(), 24);
    let x0 = params.tensor(Layer::Enc1B).data[0];
    let g = 0.5;
    let mut grads = Grads::zeros_like(&params);
    grads.tensors[Layer::Enc1B as usize][0] = g;
    let mut state = AdamState::new(&params);
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    adam_step(&mut params, &grads, &mut state, lr, b1, b2, eps).unwrap();
    adam_step(&mut params, &grads, &mut state, lr, b1, b2, eps).unwrap();

    // Hand recursion with constant gradient.
    let mut m = 0.0;
    let mut v = 0.0;
    let mut x = x0;
    for t in 1..=2 {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= lr * mh / (vh.sqrt() + eps);
    }
    let got = params.tensor(Layer::Enc1B).data[0];
    assert!((got - x).abs() < 1e-15, "got {got}, expected {x}");
}
