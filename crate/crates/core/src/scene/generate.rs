//! Deterministic synthetic scene generation.
//!
//! Occupied cells grow as a handful of seeded blobs so that rays see real
//! occlusion; factor entries are non-negative with an exact per-factor zero
//! fraction taken round-robin from a configurable sparsity list.

use super::{AppearanceHead, OccupancyGrid, Scene, VmDecomposition, VmFactors};
use crate::math::{Aabb, Vec3};
use crate::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SceneGenError {
    #[error("resolution must be at least 8 per axis, got {0}x{1}x{2}")]
    ResolutionTooSmall(usize, usize, usize),
    #[error("target occupancy must be in (0, 1], got {0}")]
    InvalidOccupancy(f64),
    #[error("occupancy target {target} rounds to zero cells at resolution {cells}")]
    UnreachableOccupancy { target: f64, cells: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("channel count must be at least 1")]
    ZeroChannels,
    #[error("factor sparsity list must be non-empty with values in [0, 1]")]
    InvalidSparsityList,
}

#[derive(Debug, Clone)]
pub struct SceneGenConfig {
    pub resolution: [usize; 3],
    pub target_occupancy: f64,
    pub rank: usize,
    pub channels: usize,
    pub seed: u64,
    /// Per-factor zero fractions, assigned round-robin over the factors in
    /// serialization order.
    pub factor_sparsity: Vec<f64>,
    /// Scales density factor entries; raise it to build opaque occluders.
    pub density_scale: f64,
    /// Frequency octaves of the direction encoding fed to the head.
    pub direction_degree: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            resolution: [64, 64, 64],
            target_occupancy: 0.01,
            rank: 4,
            channels: 3,
            seed: 0,
            factor_sparsity: vec![0.04, 0.46, 0.88, 0.92],
            density_scale: 1.0,
            direction_degree: 2,
        }
    }
}

const HIDDEN_WIDTH: usize = 64;
const HIDDEN_LAYERS: usize = 2;

/// Density factor entries are kept small so that per-sample optical depths
/// stay well below 1 at default scale; see `SceneGenConfig::density_scale`.
const DENSITY_LO: f64 = 0.1;
const DENSITY_HI: f64 = 0.5;
const APPEARANCE_LO: f64 = 0.2;
const APPEARANCE_HI: f64 = 1.0;

pub fn generate_synthetic_scene(cfg: &SceneGenConfig) -> Result<Scene, SceneGenError> {
    let [nx, ny, nz] = cfg.resolution;
    if nx < 8 || ny < 8 || nz < 8 {
        return Err(SceneGenError::ResolutionTooSmall(nx, ny, nz));
    }
    if !(cfg.target_occupancy > 0.0 && cfg.target_occupancy <= 1.0) {
        return Err(SceneGenError::InvalidOccupancy(cfg.target_occupancy));
    }
    if cfg.rank == 0 {
        return Err(SceneGenError::ZeroRank);
    }
    if cfg.channels == 0 {
        return Err(SceneGenError::ZeroChannels);
    }
    if cfg.factor_sparsity.is_empty()
        || cfg.factor_sparsity.iter().any(|s| !(0.0..=1.0).contains(s))
    {
        return Err(SceneGenError::InvalidSparsityList);
    }

    let total = nx * ny * nz;
    let target_cells = (cfg.target_occupancy * total as f64).round() as usize;
    if target_cells == 0 {
        return Err(SceneGenError::UnreachableOccupancy {
            target: cfg.target_occupancy,
            cells: total,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let bounds = Aabb::new(Vec3::ZERO, Vec3::splat(1.0));
    let bits = grow_blobs(cfg.resolution, target_cells, &mut rng);
    let grid = OccupancyGrid::new(cfg.resolution, bounds, &bits).expect("generated grid valid");

    let mut sparsity_cursor = 0usize;
    let mut next_sparsity = || {
        let s = cfg.factor_sparsity[sparsity_cursor % cfg.factor_sparsity.len()];
        sparsity_cursor += 1;
        s
    };

    let mut density = Vec::with_capacity(cfg.rank);
    for _ in 0..cfg.rank {
        density.push(gen_factors(
            cfg.resolution,
            DENSITY_LO * cfg.density_scale,
            DENSITY_HI * cfg.density_scale,
            &mut next_sparsity,
            &mut rng,
        ));
    }
    let mut appearance = Vec::with_capacity(cfg.rank * cfg.channels);
    for _ in 0..cfg.rank * cfg.channels {
        appearance.push(gen_factors(
            cfg.resolution,
            APPEARANCE_LO,
            APPEARANCE_HI,
            &mut next_sparsity,
            &mut rng,
        ));
    }
    let decomp = VmDecomposition {
        resolution: cfg.resolution,
        rank: cfg.rank,
        channels: cfg.channels,
        density,
        appearance,
    };

    let head = gen_head(&decomp, cfg.direction_degree, &mut rng);
    let scene = Scene {
        grid,
        decomp,
        head,
        seed: cfg.seed,
    };
    scene.validate().expect("generated scene valid");
    Ok(scene)
}

/// Pick `target` cells as the union of a few roughly-spherical blobs:
/// every cell is keyed by its weighted distance to the nearest seed and the
/// closest `target` cells win. Ties break on the linear index.
fn grow_blobs(res: [usize; 3], target: usize, rng: &mut ChaCha12Rng) -> Vec<bool> {
    let [nx, ny, nz] = res;
    let total = nx * ny * nz;
    let mut bits = vec![false; total];
    if target >= total {
        bits.fill(true);
        return bits;
    }

    let blob_count = 3 + (rng.random::<u32>() % 3) as usize; // 3..=5 blobs
    let mut seeds = Vec::with_capacity(blob_count);
    for _ in 0..blob_count {
        // keep seeds away from the walls so blobs stay mostly interior
        let pick = |n: usize, rng: &mut ChaCha12Rng| {
            let lo = n / 6;
            let hi = n - n / 6;
            lo as f64 + rng.random::<f64>() * (hi - lo) as f64
        };
        let c = Vec3::new(pick(nx, rng), pick(ny, rng), pick(nz, rng));
        let w = 0.8 + rng.random::<f64>() * 0.4;
        seeds.push((c, w));
    }

    let mut keyed: Vec<(f64, u32)> = Vec::with_capacity(total);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
                let key = seeds
                    .iter()
                    .map(|(c, w)| (p - *c).norm() / *w)
                    .fold(f64::INFINITY, f64::min);
                keyed.push((key, (x + nx * (y + ny * z)) as u32));
            }
        }
    }
    keyed.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, idx) in keyed.iter().take(target) {
        bits[idx as usize] = true;
    }
    bits
}

fn gen_factors(
    res: [usize; 3],
    lo: f64,
    hi: f64,
    next_sparsity: &mut impl FnMut() -> f64,
    rng: &mut ChaCha12Rng,
) -> VmFactors {
    let mut vec_factor = |n: usize| gen_entries(n, lo, hi, next_sparsity(), rng);
    let vx = vec_factor(res[0]);
    let vy = vec_factor(res[1]);
    let vz = vec_factor(res[2]);
    let myz = Matrix::from_vec(
        res[1],
        res[2],
        gen_entries(res[1] * res[2], lo, hi, next_sparsity(), rng),
    );
    let mxz = Matrix::from_vec(
        res[0],
        res[2],
        gen_entries(res[0] * res[2], lo, hi, next_sparsity(), rng),
    );
    let mxy = Matrix::from_vec(
        res[0],
        res[1],
        gen_entries(res[0] * res[1], lo, hi, next_sparsity(), rng),
    );
    VmFactors {
        vx,
        vy,
        vz,
        myz,
        mxz,
        mxy,
    }
}

/// Non-negative entries with an exact count of zeros placed by a seeded
/// partial Fisher-Yates shuffle.
fn gen_entries(n: usize, lo: f64, hi: f64, sparsity: f64, rng: &mut ChaCha12Rng) -> Vec<f32> {
    let mut data: Vec<f32> = (0..n)
        .map(|_| (lo + rng.random::<f64>() * (hi - lo)) as f32)
        .collect();
    let zeros = (sparsity * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..zeros.min(n) {
        let j = i + (rng.random::<u64>() as usize) % (n - i);
        idx.swap(i, j);
        data[idx[i]] = 0.0;
    }
    data
}

fn gen_head(decomp: &VmDecomposition, degree: usize, rng: &mut ChaCha12Rng) -> AppearanceHead {
    let input =
        decomp.appearance_feature_width() + AppearanceHead::direction_encoding_width(degree);
    let mut widths = vec![input];
    widths.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
    widths.push(decomp.channels);

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let a = (3.0 / fan_in as f64).sqrt();
        let data: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * a) as f32)
            .collect();
        weights.push(Matrix::from_vec(fan_out, fan_in, data));
        biases.push(
            (0..fan_out)
                .map(|_| (rng.random::<f64>() - 0.5) as f32)
                .collect(),
        );
    }
    AppearanceHead {
        widths,
        weights,
        biases,
        direction_degree: degree,
    }
}
