//! Scene model: occupancy grid, decomposed feature factors, and the
//! view-dependent appearance head, plus synthesis and serialization.

mod generate;
mod io;

pub use generate::{generate_synthetic_scene, SceneGenConfig, SceneGenError};
pub use io::{load_scene, save_scene, SceneIoError};

use crate::math::{Aabb, Vec3};
use crate::matrix::Matrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("bounds must be strictly increasing per axis")]
    DegenerateBounds,
    #[error("grid resolution must be positive in every axis")]
    ZeroResolution,
    #[error("occupancy bit length {got} does not match resolution product {expected}")]
    BitLengthMismatch { got: usize, expected: usize },
    #[error("factor {label} has {got} elements, expected {expected}")]
    FactorShape {
        label: String,
        got: usize,
        expected: usize,
    },
    #[error("appearance head layer {layer} expects input width {expected}, got {got}")]
    HeadShape {
        layer: usize,
        expected: usize,
        got: usize,
    },
}

/// Binary occupancy grid over world-space bounds. Immutable after
/// construction; the list of occupied cell indices is precomputed so callers
/// can loop over non-zero cubes without scanning the dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: [usize; 3],
    bounds: Aabb,
    words: Vec<u64>,
    occupied: Vec<u32>,
}

impl OccupancyGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, bits: &[bool]) -> Result<Self, SceneError> {
        if resolution.contains(&0) {
            return Err(SceneError::ZeroResolution);
        }
        let ext = bounds.extent();
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
            return Err(SceneError::DegenerateBounds);
        }
        let n = resolution[0] * resolution[1] * resolution[2];
        if bits.len() != n {
            return Err(SceneError::BitLengthMismatch {
                got: bits.len(),
                expected: n,
            });
        }
        let mut words = vec![0u64; n.div_ceil(64)];
        let mut occupied = Vec::new();
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1u64 << (i % 64);
                occupied.push(i as u32);
            }
        }
        Ok(OccupancyGrid {
            resolution,
            bounds,
            words,
            occupied,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Linear index with x fastest: `x + nx * (y + ny * z)`.
    pub fn linear_index(&self, cell: [usize; 3]) -> usize {
        cell[0] + self.resolution[0] * (cell[1] + self.resolution[1] * cell[2])
    }

    pub fn cell_of_linear(&self, idx: u32) -> [usize; 3] {
        let idx = idx as usize;
        let nx = self.resolution[0];
        let ny = self.resolution[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn bit(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn is_occupied(&self, cell: [usize; 3]) -> bool {
        self.bit(self.linear_index(cell))
    }

    pub fn popcount(&self) -> usize {
        self.occupied.len()
    }

    /// Occupied linear indices in ascending (x-fastest) order.
    pub fn occupied_cells(&self) -> &[u32] {
        &self.occupied
    }

    pub fn occupancy_ratio(&self) -> f64 {
        self.popcount() as f64 / self.len() as f64
    }

    /// Per-axis world-space cell side lengths.
    pub fn cell_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    pub fn cell_center(&self, cell: [usize; 3]) -> Vec3 {
        let s = self.cell_size();
        self.bounds.min
            + Vec3::new(
                (cell[0] as f64 + 0.5) * s.x,
                (cell[1] as f64 + 0.5) * s.y,
                (cell[2] as f64 + 0.5) * s.z,
            )
    }

    /// Quantize a world point to its containing cell, or None outside bounds.
    pub fn quantize(&self, p: Vec3) -> Option<[usize; 3]> {
        let s = self.cell_size();
        let rel = p - self.bounds.min;
        let fx = rel.x / s.x;
        let fy = rel.y / s.y;
        let fz = rel.z / s.z;
        if fx < 0.0 || fy < 0.0 || fz < 0.0 {
            return None;
        }
        let cell = [
            fx.floor() as usize,
            fy.floor() as usize,
            fz.floor() as usize,
        ];
        if cell[0] >= self.resolution[0]
            || cell[1] >= self.resolution[1]
            || cell[2] >= self.resolution[2]
        {
            return None;
        }
        Some(cell)
    }

    /// Raw bitset bytes, LSB-first, x-fastest (the on-disk layout).
    pub fn pack_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = vec![0u8; n.div_ceil(8)];
        for i in 0..n {
            if self.bit(i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_packed_bytes(
        resolution: [usize; 3],
        bounds: Aabb,
        bytes: &[u8],
    ) -> Result<Self, SceneError> {
        let n = resolution[0] * resolution[1] * resolution[2];
        let bits: Vec<bool> = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        OccupancyGrid::new(resolution, bounds, &bits)
    }
}

/// One matrix-vector factor set for a single rank (and, for appearance, a
/// single channel): three plane matrices plus the three axis vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VmFactors {
    pub vx: Vec<f32>,
    pub vy: Vec<f32>,
    pub vz: Vec<f32>,
    pub myz: Matrix,
    pub mxz: Matrix,
    pub mxy: Matrix,
}

impl VmFactors {
    pub fn zeros(res: [usize; 3]) -> Self {
        VmFactors {
            vx: vec![0.0; res[0]],
            vy: vec![0.0; res[1]],
            vz: vec![0.0; res[2]],
            myz: Matrix::zeros(res[1], res[2]),
            mxz: Matrix::zeros(res[0], res[2]),
            mxy: Matrix::zeros(res[0], res[1]),
        }
    }

    fn check(&self, res: [usize; 3], label: &str) -> Result<(), SceneError> {
        let want = |got: usize, expected: usize, what: &str| {
            if got == expected {
                Ok(())
            } else {
                Err(SceneError::FactorShape {
                    label: format!("{label}.{what}"),
                    got,
                    expected,
                })
            }
        };
        want(self.vx.len(), res[0], "vx")?;
        want(self.vy.len(), res[1], "vy")?;
        want(self.vz.len(), res[2], "vz")?;
        want(self.myz.rows() * self.myz.cols(), res[1] * res[2], "myz")?;
        want(self.mxz.rows() * self.mxz.cols(), res[0] * res[2], "mxz")?;
        want(self.mxy.rows() * self.mxy.cols(), res[0] * res[1], "mxy")?;
        Ok(())
    }
}

/// Read-only view of one factor for census/codec purposes; vectors are
/// exposed as 1 x n.
#[derive(Debug, Clone, Copy)]
pub struct FactorView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

const FACTOR_NAMES: [&str; 6] = ["vx", "vy", "vz", "myz", "mxz", "mxy"];

/// Vector-matrix decomposition of the density and appearance grids. The
/// density grid decomposes into `rank` factor sets; appearance carries
/// `channels` sets per rank (rank-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct VmDecomposition {
    pub resolution: [usize; 3],
    pub rank: usize,
    pub channels: usize,
    pub density: Vec<VmFactors>,
    pub appearance: Vec<VmFactors>,
}

impl VmDecomposition {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (r, f) in self.density.iter().enumerate() {
            f.check(self.resolution, &format!("density.r{r}"))?;
        }
        for (i, f) in self.appearance.iter().enumerate() {
            let (r, c) = (i / self.channels, i % self.channels);
            f.check(self.resolution, &format!("appearance.r{r}c{c}"))?;
        }
        if self.rank == 0 || self.density.len() != self.rank {
            return Err(SceneError::FactorShape {
                label: "density rank".into(),
                got: self.density.len(),
                expected: self.rank,
            });
        }
        if self.appearance.len() != self.rank * self.channels {
            return Err(SceneError::FactorShape {
                label: "appearance rank*channels".into(),
                got: self.appearance.len(),
                expected: self.rank * self.channels,
            });
        }
        Ok(())
    }

    /// Width of the pre-MLP appearance feature vector: one scalar product per
    /// (rank, mode, channel).
    pub fn appearance_feature_width(&self) -> usize {
        self.rank * 3 * self.channels
    }

    /// All factors with stable labels, density first, in serialization order.
    pub fn labeled_factors(&self) -> Vec<(String, FactorView<'_>)> {
        let mut out = Vec::new();
        for (r, f) in self.density.iter().enumerate() {
            for (name, view) in Self::views(f) {
                out.push((format!("density.r{r}.{name}"), view));
            }
        }
        for (i, f) in self.appearance.iter().enumerate() {
            let (r, c) = (i / self.channels, i % self.channels);
            for (name, view) in Self::views(f) {
                out.push((format!("appearance.r{r}c{c}.{name}"), view));
            }
        }
        out
    }

    fn views(f: &VmFactors) -> [(&'static str, FactorView<'_>); 6] {
        fn vec_view(data: &[f32]) -> FactorView<'_> {
            FactorView {
                rows: 1,
                cols: data.len(),
                data,
            }
        }
        fn mat_view(m: &Matrix) -> FactorView<'_> {
            FactorView {
                rows: m.rows(),
                cols: m.cols(),
                data: m.data(),
            }
        }
        [
            (FACTOR_NAMES[0], vec_view(&f.vx)),
            (FACTOR_NAMES[1], vec_view(&f.vy)),
            (FACTOR_NAMES[2], vec_view(&f.vz)),
            (FACTOR_NAMES[3], mat_view(&f.myz)),
            (FACTOR_NAMES[4], mat_view(&f.mxz)),
            (FACTOR_NAMES[5], mat_view(&f.mxy)),
        ]
    }
}

/// Small MLP mapping (appearance features ++ encoded direction) to colors.
/// Hidden activations are tanh, outputs are sigmoid-squashed per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceHead {
    pub widths: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f32>>,
    pub direction_degree: usize,
}

impl AppearanceHead {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.widths.len() < 2
            || self.weights.len() != self.widths.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(SceneError::HeadShape {
                layer: 0,
                expected: self.widths.len().saturating_sub(1),
                got: self.weights.len(),
            });
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.rows() != self.widths[l + 1] || w.cols() != self.widths[l] {
                return Err(SceneError::HeadShape {
                    layer: l,
                    expected: self.widths[l],
                    got: w.cols(),
                });
            }
            if self.biases[l].len() != self.widths[l + 1] {
                return Err(SceneError::HeadShape {
                    layer: l,
                    expected: self.widths[l + 1],
                    got: self.biases[l].len(),
                });
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Encoded-direction width for a given degree: sin/cos per component per
    /// frequency octave.
    pub fn direction_encoding_width(degree: usize) -> usize {
        6 * degree
    }

    /// Total multiply-accumulate count of one forward pass.
    pub fn macs_per_eval(&self) -> u64 {
        self.widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
    }
}

/// Immutable scene: occupancy + decomposition + appearance head.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: OccupancyGrid,
    pub decomp: VmDecomposition,
    pub head: AppearanceHead,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.decomp.resolution != self.grid.resolution() {
            return Err(SceneError::FactorShape {
                label: "decomposition resolution".into(),
                got: self.decomp.resolution.iter().product(),
                expected: self.grid.len(),
            });
        }
        self.decomp.validate()?;
        self.head.validate()?;
        let expected_in = self.decomp.appearance_feature_width()
            + AppearanceHead::direction_encoding_width(self.head.direction_degree);
        if self.head.input_width() != expected_in {
            return Err(SceneError::HeadShape {
                layer: 0,
                expected: expected_in,
                got: self.head.input_width(),
            });
        }
        if self.head.output_width() != self.decomp.channels {
            return Err(SceneError::HeadShape {
                layer: self.widths_last_layer(),
                expected: self.decomp.channels,
                got: self.head.output_width(),
            });
        }
        Ok(())
    }

    fn widths_last_layer(&self) -> usize {
        self.head.widths.len() - 2
    }
}
