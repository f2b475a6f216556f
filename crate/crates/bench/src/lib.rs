//! Shared fixtures for the benchmark targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rtnerf_core::geometry::Camera;
use rtnerf_core::math::Vec3;
use rtnerf_core::scene::{generate_synthetic_scene, Scene, SceneGenConfig};
use rtnerf_core::Matrix;

pub fn bench_scene() -> Scene {
    generate_synthetic_scene(&SceneGenConfig {
        resolution: [32, 32, 32],
        target_occupancy: 0.02,
        rank: 2,
        channels: 3,
        seed: 42,
        ..Default::default()
    })
    .unwrap()
}

pub fn bench_camera(width: u32, height: u32) -> Camera {
    Camera::look_at(
        Vec3::new(0.5, 0.5, -2.5),
        Vec3::splat(0.5),
        Vec3::new(0.0, 1.0, 0.0),
        24.0,
        width,
        height,
    )
    .unwrap()
}

/// Random matrix with an exact zero count, mirroring the factor generator.
pub fn sparse_matrix(rows: usize, cols: usize, sparsity: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut data: Vec<f32> = (0..n).map(|_| 0.5 + rng.random::<f32>()).collect();
    let zeros = (sparsity * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..zeros.min(n) {
        let j = i + (rng.random::<u64>() as usize) % (n - i);
        idx.swap(i, j);
        data[idx[i]] = 0.0;
    }
    Matrix::from_vec(rows, cols, data)
}
