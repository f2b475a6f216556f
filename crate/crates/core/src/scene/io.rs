//! Versioned binary scene container.
//!
//! Layout (little-endian):
//!   magic "RTNF" | u32 version | u32 nx,ny,nz | u32 rank | u32 channels |
//!   u64 seed | f64 bounds min/max (6) | occupancy bitset (LSB-first,
//!   x-fastest) | density factors (per rank: vx vy vz myz mxz mxy) |
//!   appearance factors (rank-major, then channel) | head (u32 degree,
//!   u32 layer count, u32 widths, then per layer weights row-major + bias).
//! All factor and head payloads are f32.

use super::{AppearanceHead, OccupancyGrid, Scene, SceneError, VmDecomposition, VmFactors};
use crate::math::{Aabb, Vec3};
use crate::matrix::Matrix;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const SCENE_MAGIC: [u8; 4] = *b"RTNF";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"RTNF\"")]
    BadMagic,
    #[error("unsupported scene file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("dimension inconsistency in {field}: {detail}")]
    DimensionMismatch { field: &'static str, detail: String },
    #[error("trailing bytes after scene payload")]
    TrailingBytes,
    #[error(transparent)]
    Invalid(#[from] SceneError),
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneIoError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&SCENE_MAGIC);
    put_u32(&mut buf, SCENE_VERSION);
    let res = scene.grid.resolution();
    for r in res {
        put_u32(&mut buf, r as u32);
    }
    put_u32(&mut buf, scene.decomp.rank as u32);
    put_u32(&mut buf, scene.decomp.channels as u32);
    buf.extend_from_slice(&scene.seed.to_le_bytes());
    let b = scene.grid.bounds();
    for v in [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&scene.grid.pack_bytes());
    for f in &scene.decomp.density {
        put_factors(&mut buf, f);
    }
    for f in &scene.decomp.appearance {
        put_factors(&mut buf, f);
    }
    let head = &scene.head;
    put_u32(&mut buf, head.direction_degree as u32);
    put_u32(&mut buf, head.weights.len() as u32);
    for w in &head.widths {
        put_u32(&mut buf, *w as u32);
    }
    for (w, bias) in head.weights.iter().zip(&head.biases) {
        put_f32s(&mut buf, w.data());
        put_f32s(&mut buf, bias);
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneIoError> {
    let bytes = fs::read(path)?;
    let mut rd = Reader {
        bytes: &bytes,
        pos: 0,
    };

    let magic = rd.take(4, "magic")?;
    if magic != SCENE_MAGIC {
        return Err(SceneIoError::BadMagic);
    }
    let version = rd.u32("version")?;
    if version != SCENE_VERSION {
        return Err(SceneIoError::UnsupportedVersion(version));
    }
    let nx = rd.u32("resolution.x")? as usize;
    let ny = rd.u32("resolution.y")? as usize;
    let nz = rd.u32("resolution.z")? as usize;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(SceneIoError::DimensionMismatch {
            field: "resolution",
            detail: format!("{nx}x{ny}x{nz} contains a zero axis"),
        });
    }
    let rank = rd.u32("rank")? as usize;
    let channels = rd.u32("channels")? as usize;
    if rank == 0 || channels == 0 {
        return Err(SceneIoError::DimensionMismatch {
            field: "rank/channels",
            detail: format!("rank {rank}, channels {channels}"),
        });
    }
    let seed = rd.u64("seed")?;
    let mut b = [0.0f64; 6];
    for v in &mut b {
        *v = rd.f64("bounds")?;
    }
    let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));

    let res = [nx, ny, nz];
    let n_cells = nx * ny * nz;
    let grid_bytes = rd.take(n_cells.div_ceil(8), "occupancy bitset")?;
    let grid = OccupancyGrid::from_packed_bytes(res, bounds, grid_bytes)?;

    let mut density = Vec::with_capacity(rank);
    for _ in 0..rank {
        density.push(read_factors(&mut rd, res)?);
    }
    let mut appearance = Vec::with_capacity(rank * channels);
    for _ in 0..rank * channels {
        appearance.push(read_factors(&mut rd, res)?);
    }
    let decomp = VmDecomposition {
        resolution: res,
        rank,
        channels,
        density,
        appearance,
    };

    let degree = rd.u32("head.direction_degree")? as usize;
    let n_layers = rd.u32("head.layer_count")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(SceneIoError::DimensionMismatch {
            field: "head.layer_count",
            detail: n_layers.to_string(),
        });
    }
    let mut widths = Vec::with_capacity(n_layers + 1);
    for _ in 0..=n_layers {
        widths.push(rd.u32("head.widths")? as usize);
    }
    if widths.contains(&0) {
        return Err(SceneIoError::DimensionMismatch {
            field: "head.widths",
            detail: format!("{widths:?} contains a zero width"),
        });
    }
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let data = rd.f32s(fan_in * fan_out, "head.weights")?;
        weights.push(Matrix::from_vec(fan_out, fan_in, data));
        biases.push(rd.f32s(fan_out, "head.biases")?);
    }
    let head = AppearanceHead {
        widths,
        weights,
        biases,
        direction_degree: degree,
    };

    if rd.pos != bytes.len() {
        return Err(SceneIoError::TrailingBytes);
    }

    let scene = Scene {
        grid,
        decomp,
        head,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_factors(buf: &mut Vec<u8>, f: &VmFactors) {
    put_f32s(buf, &f.vx);
    put_f32s(buf, &f.vy);
    put_f32s(buf, &f.vz);
    put_f32s(buf, f.myz.data());
    put_f32s(buf, f.mxz.data());
    put_f32s(buf, f.mxy.data());
}

fn read_factors(rd: &mut Reader<'_>, res: [usize; 3]) -> Result<VmFactors, SceneIoError> {
    let vx = rd.f32s(res[0], "factor.vx")?;
    let vy = rd.f32s(res[1], "factor.vy")?;
    let vz = rd.f32s(res[2], "factor.vz")?;
    let myz = Matrix::from_vec(res[1], res[2], rd.f32s(res[1] * res[2], "factor.myz")?);
    let mxz = Matrix::from_vec(res[0], res[2], rd.f32s(res[0] * res[2], "factor.mxz")?);
    let mxy = Matrix::from_vec(res[0], res[1], rd.f32s(res[0] * res[1], "factor.mxy")?);
    Ok(VmFactors {
        vx,
        vy,
        vz,
        myz,
        mxz,
        mxy,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], SceneIoError> {
        if self.pos + n > self.bytes.len() {
            return Err(SceneIoError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, SceneIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, SceneIoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, SceneIoError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, SceneIoError> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
