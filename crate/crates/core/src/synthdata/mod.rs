//! Synthetic two-view scenes with exact ground truth.
//!
//! Scenes are clouds of 3D points seen by a camera pair with a known relative
//! pose. Each point renders as an anisotropic Gaussian blob whose intensity,
//! scale and orientation come from a per-point appearance seed, over a
//! low-frequency background with per-image gain and pixel noise. Projected
//! blob centers are the ground-truth interest points and co-visible points
//! give exact correspondences, so every stage of the matching pipeline can be
//! scored against the generator.

mod io;

pub use io::{read_dataset, write_dataset};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Pixels scaled to `[0, 1]` for the network.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Scene generation parameters.
#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    pub n_points_range: (usize, usize),
    /// Maximum rotation angle in degrees (at most 30).
    pub rot_max_deg: f64,
    /// Metric baseline length range.
    pub baseline_range: (f64, f64),
    /// Fixes the baseline direction instead of sampling it.
    pub fixed_baseline: Option<[f64; 3]>,
    pub depth_range: (f64, f64),
    /// Put all points on the fronto-parallel plane `z = plane_depth`.
    pub planar: bool,
    pub plane_depth: f64,
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub noise_sigma: f64,
    pub gain_range: (f64, f64),
    pub min_covisible: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points_range: (50, 110),
            rot_max_deg: 20.0,
            baseline_range: (0.8, 1.5),
            fixed_baseline: None,
            depth_range: (3.5, 4.5),
            planar: false,
            plane_depth: 4.0,
            height: 96,
            width: 96,
            focal: 96.0,
            noise_sigma: 0.01,
            gain_range: (0.8, 1.2),
            min_covisible: 30,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_points_range.0 < 8 || self.n_points_range.0 > self.n_points_range.1 {
            return Err(SynthError::InvalidConfig(
                "point count range must be ordered with at least 8 points".into(),
            ));
        }
        if !(0.0..=30.0).contains(&self.rot_max_deg) {
            return Err(SynthError::InvalidConfig(
                "rotation magnitude must lie in [0, 30] degrees".into(),
            ));
        }
        if self.baseline_range.0 <= 0.0 || self.baseline_range.0 > self.baseline_range.1 {
            return Err(SynthError::InvalidConfig("bad baseline range".into()));
        }
        if self.depth_range.0 <= 0.0 || self.depth_range.0 > self.depth_range.1 {
            return Err(SynthError::InvalidConfig("bad depth range".into()));
        }
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(SynthError::InvalidConfig(
                "image sides must be positive multiples of 4".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("negative noise sigma".into()));
        }
        if self.gain_range.0 <= 0.0 || self.gain_range.0 > self.gain_range.1 {
            return Err(SynthError::InvalidConfig("bad gain range".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            focal: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }
}

/// A generated 3D scene and camera pair.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Points in the first camera frame; all have positive depth in both
    /// cameras.
    pub points: Vec<Vector3<f64>>,
    /// Per-point appearance seed (blob intensity, scale, orientation).
    pub appearance_seeds: Vec<u64>,
    pub rotation: Matrix3<f64>,
    /// Metric translation: `x₂ = R·x₁ + t`.
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
    /// Plane `(n, d)` with `n·X = d` when the scene is planar.
    pub plane: Option<(Vector3<f64>, f64)>,
    /// Seed for background, gain and noise.
    pub render_seed: u64,
    /// Pixel noise level applied at render time.
    pub noise_sigma: f64,
    pub gain_range: (f64, f64),
    pub height: usize,
    pub width: usize,
}

impl Scene {
    /// Ground-truth relative pose (unit-norm translation direction).
    pub fn gt_pose(&self) -> Pose {
        Pose::new_normalized(self.rotation, self.translation).expect("generator emits valid poses")
    }

    fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            p.x / p.z * self.intrinsics.focal + self.intrinsics.cx,
            p.y / p.z * self.intrinsics.focal + self.intrinsics.cy,
        )
    }
}

/// One rendered image pair with ground truth.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub id: u64,
    pub image1: GrayImage,
    pub image2: GrayImage,
    pub gt_pose: Pose,
    pub intrinsics: Intrinsics,
    /// Projected blob centers visible in each image (pixel coordinates).
    pub gt_keypoints1: Vec<(f64, f64)>,
    pub gt_keypoints2: Vec<(f64, f64)>,
    /// Pairs `(index into gt_keypoints1, index into gt_keypoints2)` of
    /// co-visible points.
    pub gt_correspondences: Vec<(usize, usize)>,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Samples a scene satisfying the visibility invariants, rejecting and
/// retrying up to 100 times.
pub fn generate_scene(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let intr = cfg.intrinsics();
    let u_max = cfg.width as f64 / 2.0 / cfg.focal;
    let v_max = cfg.height as f64 / 2.0 / cfg.focal;
    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        let angle = if cfg.rot_max_deg > 0.0 {
            rng.gen_range(0.0..cfg.rot_max_deg.to_radians())
        } else {
            0.0
        };
        let axis = Unit::new_normalize(random_unit(rng));
        let rotation = *Rotation3::from_axis_angle(&axis, angle).matrix();
        let direction = match cfg.fixed_baseline {
            Some(d) => {
                let v = Vector3::new(d[0], d[1], d[2]);
                let n = v.norm();
                if n <= 0.0 {
                    return Err(SynthError::InvalidConfig("zero fixed baseline".into()));
                }
                v / n
            }
            None => random_unit(rng),
        };
        let translation = direction * sample_range(rng, cfg.baseline_range);

        let n_points = rng.gen_range(cfg.n_points_range.0..=cfg.n_points_range.1);
        let mut points = Vec::with_capacity(n_points);
        let mut appearance_seeds = Vec::with_capacity(n_points);
        let mut ok = true;
        for _ in 0..n_points {
            let mut placed = false;
            for _ in 0..50 {
                let z = if cfg.planar {
                    cfg.plane_depth
                } else {
                    sample_range(rng, cfg.depth_range)
                };
                let u = rng.gen_range(-0.9 * u_max..0.9 * u_max);
                let v = rng.gen_range(-0.9 * v_max..0.9 * v_max);
                let p = Vector3::new(u * z, v * z, z);
                let q = rotation * p + translation;
                if q.z > 0.2 {
                    points.push(p);
                    appearance_seeds.push(rng.gen::<u64>());
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }

        let scene = Scene {
            points,
            appearance_seeds,
            rotation,
            translation,
            intrinsics: intr,
            plane: if cfg.planar {
                Some((Vector3::new(0.0, 0.0, 1.0), cfg.plane_depth))
            } else {
                None
            },
            render_seed: rng.gen::<u64>(),
            noise_sigma: cfg.noise_sigma,
            gain_range: cfg.gain_range,
            height: cfg.height,
            width: cfg.width,
        };
        let covisible = scene
            .points
            .iter()
            .filter(|p| {
                let (x1, y1) = scene.project(p);
                let q = scene.rotation * *p + scene.translation;
                let (x2, y2) = scene.project(&q);
                inside(x1, y1, cfg.width, cfg.height) && inside(x2, y2, cfg.width, cfg.height)
            })
            .count();
        if covisible >= cfg.min_covisible {
            return Ok(scene);
        }
    }
    Err(SynthError::GenerationFailed(MAX_ATTEMPTS))
}

fn inside(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// Blob appearance derived from a point's seed; identical in both views.
struct Blob {
    intensity: f64,
    inv_cov: [f64; 3], // (a, b, c) of [[a, b], [b, c]]
    radius: f64,
}

fn blob_from_seed(seed: u64) -> Blob {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = rng.gen_range(0.4..0.95);
    let sigma = rng.gen_range(0.8..2.2);
    let aspect = rng.gen_range(1.0..2.5);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    // A fraction of the points are dark dips instead of bright spots, which
    // makes individual blobs easier to tell apart.
    let intensity = if rng.gen_range(0.0..1.0) < 0.3 {
        -0.27 * magnitude / 0.95
    } else {
        magnitude
    };
    let (s1, s2) = (sigma, sigma / aspect);
    let (c, s) = (theta.cos(), theta.sin());
    // Inverse of R·diag(s1², s2²)·Rᵀ.
    let (i1, i2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    let a = c * c * i1 + s * s * i2;
    let b = c * s * (i1 - i2);
    let cc = s * s * i1 + c * c * i2;
    Blob {
        intensity,
        inv_cov: [a, b, cc],
        radius: 3.5 * s1,
    }
}

#[allow(clippy::too_many_arguments)]
fn render_image(
    scene: &Scene,
    h: usize,
    w: usize,
    centers: &[(f64, f64)],
    bg_seed: u64,
    gain: f64,
    noise_seed: u64,
) -> GrayImage {
    let mut img = vec![0.0f64; h * w];

    // Low-frequency background: a few random cosine waves.
    let mut bg_rng = ChaCha8Rng::seed_from_u64(bg_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                bg_rng.gen_range(0.5..2.5) / w as f64,
                bg_rng.gen_range(0.5..2.5) / h as f64,
                bg_rng.gen_range(0.0..std::f64::consts::TAU),
                bg_rng.gen_range(0.015..0.04),
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.28;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).cos();
            }
            img[y * w + x] = v;
        }
    }

    for (p_idx, &(cx, cy)) in centers.iter().enumerate() {
        let blob = blob_from_seed(scene.appearance_seeds[p_idx]);
        if cx < -blob.radius
            || cy < -blob.radius
            || cx > (w - 1) as f64 + blob.radius
            || cy > (h - 1) as f64 + blob.radius
        {
            continue;
        }
        let x0 = ((cx - blob.radius).floor().max(0.0)) as usize;
        let x1 = ((cx + blob.radius).ceil().min((w - 1) as f64)) as usize;
        let y0 = ((cy - blob.radius).floor().max(0.0)) as usize;
        let y1 = ((cy + blob.radius).ceil().min((h - 1) as f64)) as usize;
        let [a, b, c] = blob.inv_cov;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if q < 25.0 {
                    img[y * w + x] += blob.intensity * (-0.5 * q).exp();
                }
            }
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sigma = scene.noise_sigma;
    let pixels = img
        .iter()
        .map(|&v| {
            let noisy = (v * gain + sigma * normal.sample(&mut noise_rng)).clamp(0.0, 1.0);
            (noisy * 255.0).round() as u8
        })
        .collect();
    GrayImage { h, w, pixels }
}

/// Renders the two views of a scene.
///
/// Deterministic: the same scene always produces byte-identical images.
pub fn render_pair(scene: &Scene, h: usize, w: usize) -> PairSample {
    let mut kp1 = Vec::new();
    let mut kp2 = Vec::new();
    let mut idx1 = vec![None; scene.points.len()];
    let mut idx2 = vec![None; scene.points.len()];
    let mut centers1 = Vec::with_capacity(scene.points.len());
    let mut centers2 = Vec::with_capacity(scene.points.len());
    for (k, p) in scene.points.iter().enumerate() {
        let (x1, y1) = scene.project(p);
        let q = scene.rotation * p + scene.translation;
        let (x2, y2) = scene.project(&q);
        centers1.push((x1, y1));
        centers2.push((x2, y2));
        if inside(x1, y1, w, h) {
            idx1[k] = Some(kp1.len());
            kp1.push((x1, y1));
        }
        if inside(x2, y2, w, h) {
            idx2[k] = Some(kp2.len());
            kp2.push((x2, y2));
        }
    }
    let correspondences: Vec<(usize, usize)> = (0..scene.points.len())
        .filter_map(|k| match (idx1[k], idx2[k]) {
            (Some(i), Some(j)) => Some((i, j)),
            _ => None,
        })
        .collect();

    let mut seed_rng = ChaCha8Rng::seed_from_u64(scene.render_seed);
    let bg1 = seed_rng.gen::<u64>();
    let bg2 = seed_rng.gen::<u64>();
    let noise1 = seed_rng.gen::<u64>();
    let noise2 = seed_rng.gen::<u64>();
    let gain1 = sample_range(&mut seed_rng, scene.gain_range);
    let gain2 = sample_range(&mut seed_rng, scene.gain_range);

    let image1 = render_image(scene, h, w, &centers1, bg1, gain1, noise1);
    let image2 = render_image(scene, h, w, &centers2, bg2, gain2, noise2);

    PairSample {
        id: 0,
        image1,
        image2,
        gt_pose: scene.gt_pose(),
        intrinsics: scene.intrinsics,
        gt_keypoints1: kp1,
        gt_keypoints2: kp2,
        gt_correspondences: correspondences,
    }
}

/// Generates and renders one pair with the given id.
pub fn generate_pair(
    cfg: &SceneConfig,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Scene, PairSample), SynthError> {
    let scene = generate_scene(cfg, rng)?;
    let mut pair = render_pair(&scene, cfg.height, cfg.width);
    pair.id = id;
    Ok((scene, pair))
}

/// Generates a dataset of `n` pairs with per-pair derived seeds.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n: usize,
    base_seed: u64,
) -> Result<Vec<PairSample>, SynthError> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, i as u64));
            generate_pair(cfg, i as u64, &mut rng).map(|(_, pair)| pair)
        })
        .collect()
}

/// Pixel-space homography `K·(R + t·nᵀ/d)·K⁻¹` of a planar scene.
pub fn pixel_homography(scene: &Scene) -> Option<Matrix3<f64>> {
    let (n, d) = scene.plane?;
    let hn = scene.rotation + scene.translation * n.transpose() / d;
    let f = scene.intrinsics.focal;
    let (cx, cy) = (scene.intrinsics.cx, scene.intrinsics.cy);
    let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
    let k_inv = Matrix3::new(
        1.0 / f,
        0.0,
        -cx / f,
        0.0,
        1.0 / f,
        -cy / f,
        0.0,
        0.0,
        1.0,
    );
    Some(k * hn * k_inv)
}

/// Applies a homography to a pixel coordinate.
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let v = h * Vector3::new(x, y, 1.0);
    (v.x / v.z, v.y / v.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_pose_error;
    use crate::geometry::{epipolar_line_distance, essential_from_pose};
    use crate::robust::{ransac_essential, RansacConfig};

    fn small_cfg() -> SceneConfig {
        SceneConfig {
            n_points_range: (40, 80),
            ..Default::default()
        }
    }

    #[test]
    fn zero_rotation_range_gives_identity() {
        let cfg = SceneConfig {
            rot_max_deg: 0.0,
            fixed_baseline: Some([1.0, 0.0, 0.0]),
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = generate_scene(&cfg, &mut rng).unwrap();
        assert_eq!(scene.rotation, Matrix3::identity());
        let t = scene.translation / scene.translation.norm();
        assert!((t - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn scenes_satisfy_depth_and_visibility_invariants() {
        let cfg = small_cfg();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = generate_scene(&cfg, &mut rng).unwrap();
            let mut covisible = 0;
            for p in &scene.points {
                assert!(p.z > 0.0);
                let q = scene.rotation * p + scene.translation;
                assert!(q.z > 0.0, "point behind second camera");
                let (x1, y1) = scene.project(p);
                let (x2, y2) = scene.project(&q);
                if inside(x1, y1, cfg.width, cfg.height) && inside(x2, y2, cfg.width, cfg.height) {
                    covisible += 1;
                }
            }
            assert!(covisible >= cfg.min_covisible);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let mut r1 = ChaCha8Rng::seed_from_u64(33);
        let mut r2 = ChaCha8Rng::seed_from_u64(33);
        let s1 = generate_scene(&cfg, &mut r1).unwrap();
        let s2 = generate_scene(&cfg, &mut r2).unwrap();
        assert_eq!(s1.points, s2.points);
        assert_eq!(s1.appearance_seeds, s2.appearance_seeds);
        assert_eq!(s1.render_seed, s2.render_seed);
        let p1 = render_pair(&s1, cfg.height, cfg.width);
        let p2 = render_pair(&s2, cfg.height, cfg.width);
        assert_eq!(p1.image1.pixels, p2.image1.pixels);
        assert_eq!(p1.image2.pixels, p2.image2.pixels);
    }

    #[test]
    fn single_point_blob_is_brightest_near_projection() {
        let cfg = SceneConfig {
            n_points_range: (40, 40),
            min_covisible: 30,
            rot_max_deg: 0.0,
            fixed_baseline: Some([0.6, 0.0, 0.0]),
            baseline_range: (0.6, 0.6),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut scene = generate_scene(&cfg, &mut rng).unwrap();
        // Keep a single point projecting near the image center in view one
        // and safely inside view two.
        let target = Vector3::new(0.0, 0.0, 4.0);
        scene.points = vec![target];
        scene.appearance_seeds = vec![57];
        let pair = render_pair(&scene, cfg.height, cfg.width);
        let (ex1, ey1) = scene.project(&target);
        let q = scene.rotation * target + scene.translation;
        let (ex2, ey2) = scene.project(&q);
        for (img, (ex, ey)) in [(&pair.image1, (ex1, ey1)), (&pair.image2, (ex2, ey2))] {
            let mut best = (0usize, 0usize, 0u8);
            for y in 0..img.h {
                for x in 0..img.w {
                    let v = img.pixels[y * img.w + x];
                    if v > best.2 {
                        best = (x, y, v);
                    }
                }
            }
            let dist = ((best.0 as f64 - ex).powi(2) + (best.1 as f64 - ey).powi(2)).sqrt();
            assert!(dist <= 1.0 + 1e-9, "brightest pixel {dist} px from center");
        }
    }

    #[test]
    fn gt_correspondences_satisfy_epipolar_constraint() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, pair) = generate_pair(&cfg, 0, &mut rng).unwrap();
        let e = essential_from_pose(&pair.gt_pose);
        let mut max_residual = 0.0f64;
        for &(i, j) in &pair.gt_correspondences {
            let (x1, y1) = pair.gt_keypoints1[i];
            let (x2, y2) = pair.gt_keypoints2[j];
            let a = pair.intrinsics.calibrate(x1, y1).unwrap();
            let b = pair.intrinsics.calibrate(x2, y2).unwrap();
            let r = epipolar_line_distance(&e, &a, &b).unwrap();
            max_residual = max_residual.max(r);
        }
        assert!(max_residual < 1e-9, "max residual {max_residual}");
    }

    #[test]
    fn gt_matches_recover_pose_with_ransac() {
        let cfg = small_cfg();
        let mut failures = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (_, pair) = generate_pair(&cfg, seed, &mut rng).unwrap();
            let matches: Vec<_> = pair
                .gt_correspondences
                .iter()
                .map(|&(i, j)| {
                    let (x1, y1) = pair.gt_keypoints1[i];
                    let (x2, y2) = pair.gt_keypoints2[j];
                    (
                        pair.intrinsics.calibrate(x1, y1).unwrap(),
                        pair.intrinsics.calibrate(x2, y2).unwrap(),
                    )
                })
                .collect();
            // Noise-free data: a tight threshold keeps sloppy hypotheses from
            // reaching full consensus and stopping the search early.
            let ransac = RansacConfig {
                seed,
                inlier_threshold: 1e-6,
                ..Default::default()
            };
            let ok = match ransac_essential(&matches, &ransac, None) {
                Ok((e, mask, _)) => {
                    let inliers: Vec<_> = matches
                        .iter()
                        .zip(&mask)
                        .filter(|(_, &m)| m)
                        .map(|(p, _)| *p)
                        .collect();
                    crate::geometry::decompose_essential(&e, &inliers)
                        .map(|est| angular_pose_error(&est, &pair.gt_pose) < 0.1)
                        .unwrap_or(false)
                }
                Err(_) => false,
            };
            if !ok {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures}/50 pairs failed");
    }

    #[test]
    fn planar_homography_maps_correspondences() {
        let cfg = SceneConfig {
            planar: true,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (scene, pair) = generate_pair(&cfg, 0, &mut rng).unwrap();
        let h = pixel_homography(&scene).unwrap();
        for &(i, j) in &pair.gt_correspondences {
            let (x1, y1) = pair.gt_keypoints1[i];
            let (x2, y2) = pair.gt_keypoints2[j];
            let (mx, my) = apply_homography(&h, x1, y1);
            let err = ((mx - x2).powi(2) + (my - y2).powi(2)).sqrt();
            assert!(err < 1e-9, "homography reprojection error {err}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad_rot = SceneConfig {
            rot_max_deg: 45.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&bad_rot, &mut rng),
            Err(SynthError::InvalidConfig(_))
        ));
        let bad_points = SceneConfig {
            n_points_range: (4, 10),
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&bad_points, &mut rng),
            Err(SynthError::InvalidConfig(_))
        ));
    }
}
