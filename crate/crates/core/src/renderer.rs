//! The two end-to-end rendering pipelines with full instrumentation.
//!
//! The uniform pipeline samples every ray at fixed count N and pays exactly
//! H*W*N occupancy queries. The geometry-driven pipeline loops over occupied
//! cubes instead: each cube becomes a ball, the ball projects to a pixel
//! region, and per-member-pixel line-sphere intersection yields the sample
//! segments, so occupancy accesses scale with the popcount of the grid.
//! Octant-ordered shading carries per-pixel composite state so rays can
//! terminate early before distant cells are even sampled.

use crate::features::{
    self, encode_direction, head_forward, CompositeState, TransmittanceConvention,
};
use crate::geometry::{
    cube_to_ball, octant_box, octant_order, pixel_to_ray, project_ball, ray_sphere_intersect,
    BallProjection, Camera, Ray,
};
use crate::math::{Aabb, Vec3};
use crate::matrix::Matrix;
use crate::scene::{OccupancyGrid, Scene, VmFactors};
use crate::sparse::{self, HybridEncoding};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Counts of geometry primitives executed on the serial units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GeometryPrimitives {
    pub ray_gen: u64,
    pub ball_approx: u64,
    pub projection: u64,
    pub intersection: u64,
    pub grid_query: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepSeconds {
    pub step1: f64,
    pub step2_1: f64,
    pub step2_2_grid: f64,
    pub step2_2_mlp: f64,
    pub step3: f64,
}

/// Cycle histograms of codec queries issued during shading, split by format.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodecCycles {
    pub bitmap: BTreeMap<u32, u64>,
    pub coo: BTreeMap<u32, u64>,
}

impl CodecCycles {
    pub fn total_queries(&self) -> u64 {
        self.bitmap.values().sum::<u64>() + self.coo.values().sum::<u64>()
    }

    pub fn total_cycles(&self) -> u64 {
        self.bitmap.iter().map(|(c, n)| *c as u64 * n).sum::<u64>()
            + self.coo.iter().map(|(c, n)| *c as u64 * n).sum::<u64>()
    }

    pub fn is_empty(&self) -> bool {
        self.bitmap.is_empty() && self.coo.is_empty()
    }
}

/// Instrumented operation counts for one render. Logical counters are
/// deterministic; `step_seconds` uses a monotonic clock and is excluded from
/// all determinism guarantees.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTrace {
    pub occupancy_accesses: u64,
    pub embedding_element_reads: u64,
    pub embedding_bytes: u64,
    pub multiplies: u64,
    pub adds: u64,
    pub mlp_macs: u64,
    pub sparse_queries: u64,
    pub composite_ops: u64,
    pub points_located: u64,
    pub points_shaded: u64,
    pub step_seconds: StepSeconds,
    pub geometry_primitives: GeometryPrimitives,
    #[serde(default)]
    pub codec_cycles: CodecCycles,
}

/// H x W x C image with values in [0, 1], row-major, channel-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn black(width: u32, height: u32, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &self.data[i..i + self.channels]
    }

    fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Binary PPM (P6, 8-bit). Images with fewer than three channels repeat
    /// the last channel; extra channels beyond three are dropped.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for y in 0..self.height {
            for x in 0..self.width {
                let px = self.pixel(x, y);
                for c in 0..3 {
                    let v = px[c.min(self.channels - 1)];
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }
}

/// One located sample: distance, segment length, and the source cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub delta: f64,
    pub cell: [usize; 3],
    pub cell_linear: u32,
}

/// Per-pixel ordered sample lists for a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<Vec<SamplePoint>>,
}

impl RaySampleBatch {
    fn empty(width: u32, height: u32) -> Self {
        RaySampleBatch {
            width,
            height,
            samples: vec![Vec::new(); width as usize * height as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[SamplePoint] {
        &self.samples[y as usize * self.width as usize + x as usize]
    }

    pub fn total_samples(&self) -> u64 {
        self.samples.iter().map(|s| s.len() as u64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Uniform,
    Rt,
}

/// How the geometry-driven pipeline schedules shading. Octant ordering is the
/// default; the global sort exists to show the schedule is math-neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    OctantOrdered,
    GlobalSort,
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub pipeline: Pipeline,
    /// Clip per-ray segments to the cube (slab test) instead of keeping the
    /// circumscribed-ball segment.
    pub exact_mode: bool,
    /// Early-termination threshold on accumulated transmittance.
    pub tau: f64,
    /// Samples per ray for the uniform pipeline.
    pub n_samples: usize,
    pub convention: TransmittanceConvention,
    /// Evaluate factors through the hybrid sparse codec, recording query
    /// cycle histograms in the trace.
    pub use_codec: bool,
    pub schedule: Schedule,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            pipeline: Pipeline::Rt,
            exact_mode: true,
            tau: 1e-4,
            n_samples: 128,
            convention: TransmittanceConvention::Printed,
            use_codec: false,
            schedule: Schedule::OctantOrdered,
        }
    }
}

fn precompute_rays(cam: &Camera, trace: &mut StepTrace) -> Vec<Ray> {
    let clock = Instant::now();
    let mut rays = Vec::with_capacity(cam.width as usize * cam.height as usize);
    for py in 0..cam.height {
        for px in 0..cam.width {
            rays.push(pixel_to_ray(cam, px as f64, py as f64).expect("pixel in range"));
        }
    }
    trace.geometry_primitives.ray_gen += rays.len() as u64;
    trace.step_seconds.step1 += clock.elapsed().as_secs_f64();
    rays
}

/// Uniform point location: N samples per ray over the ray's chord through the
/// scene bounds; the occupancy grid is queried for every candidate, so the
/// access count is exactly H*W*N no matter what the grid holds.
pub fn locate_points_uniform(
    cam: &Camera,
    grid: &OccupancyGrid,
    n_samples: usize,
) -> (RaySampleBatch, StepTrace) {
    assert!(n_samples >= 1);
    let mut trace = StepTrace::default();
    let rays = precompute_rays(cam, &mut trace);
    let clock = Instant::now();
    let mut batch = RaySampleBatch::empty(cam.width, cam.height);
    let bounds = grid.bounds();
    for (i, ray) in rays.iter().enumerate() {
        trace.occupancy_accesses += n_samples as u64;
        trace.geometry_primitives.grid_query += n_samples as u64;
        let Some((enter, exit)) = bounds.ray_range(ray.origin, ray.dir) else {
            continue;
        };
        let t0 = enter.max(0.0);
        if exit <= t0 {
            continue;
        }
        let spacing = (exit - t0) / n_samples as f64;
        let samples = &mut batch.samples[i];
        for k in 0..n_samples {
            let t = t0 + (k as f64 + 0.5) * spacing;
            let Some(cell) = grid.quantize(ray.at(t)) else {
                continue;
            };
            if grid.is_occupied(cell) {
                samples.push(SamplePoint {
                    t,
                    delta: spacing,
                    cell,
                    cell_linear: grid.linear_index(cell) as u32,
                });
            }
        }
        trace.points_located += samples.len() as u64;
    }
    trace.step_seconds.step2_1 += clock.elapsed().as_secs_f64();
    (batch, trace)
}

/// Split the occupied cells into the eight octant sub-spaces by cell center.
fn partition_octants(grid: &OccupancyGrid) -> [Vec<u32>; 8] {
    let mid = grid.bounds().center();
    let mut parts: [Vec<u32>; 8] = Default::default();
    for &idx in grid.occupied_cells() {
        let c = grid.cell_center(grid.cell_of_linear(idx));
        let k = (c.x >= mid.x) as usize
            | ((c.y >= mid.y) as usize) << 1
            | ((c.z >= mid.z) as usize) << 2;
        parts[k].push(idx);
    }
    parts
}

fn cell_aabb(grid: &OccupancyGrid, cell: [usize; 3]) -> Aabb {
    let s = grid.cell_size();
    let min = grid.bounds().min
        + Vec3::new(
            cell[0] as f64 * s.x,
            cell[1] as f64 * s.y,
            cell[2] as f64 * s.z,
        );
    Aabb::new(min, min + s)
}

/// Sample segment [t0, t1] of one cell at spacing <= half of the smallest
/// cell side: the segment is cut into equal midpoint-sampled pieces so the
/// deltas sum exactly to the segment length. Grazing segments get one sample;
/// zero-length contacts are dropped.
fn segment_samples(
    pix: u32,
    t0: f64,
    t1: f64,
    cell: [usize; 3],
    cell_linear: u32,
    half_side: f64,
    out: &mut Vec<(u32, SamplePoint)>,
) -> u64 {
    let len = t1 - t0;
    if len <= 0.0 {
        return 0;
    }
    let n = ((len / half_side).ceil() as usize).max(1);
    let h = len / n as f64;
    for i in 0..n {
        out.push((
            pix,
            SamplePoint {
                t: t0 + (i as f64 + 0.5) * h,
                delta: h,
                cell,
                cell_linear,
            },
        ));
    }
    n as u64
}

/// Locate samples contributed by one occupied cell: ball approximation,
/// projection, membership test, intersection, and segment sampling. Pixels
/// flagged in `skip` (terminated rays) are not touched.
#[allow(clippy::too_many_arguments)]
fn visit_cell(
    cam: &Camera,
    grid: &OccupancyGrid,
    rays: &[Ray],
    cell_linear: u32,
    exact_mode: bool,
    skip: Option<&[bool]>,
    trace: &mut StepTrace,
    out: &mut Vec<(u32, SamplePoint)>,
) {
    let cell = grid.cell_of_linear(cell_linear);
    let ball = cube_to_ball(grid, cell).expect("occupied cell");
    trace.geometry_primitives.ball_approx += 1;
    let proj = project_ball(cam, &ball);
    trace.geometry_primitives.projection += 1;
    let (px0, px1, py0, py1, region) = match proj {
        BallProjection::NotVisible => return,
        BallProjection::AllPixels => (0, cam.width - 1, 0, cam.height - 1, None),
        BallProjection::Oval(r) => (r.px0, r.px1, r.py0, r.py1, Some(r)),
    };
    let s = grid.cell_size();
    let half_side = 0.5 * s.x.min(s.y).min(s.z);
    let cell_box = cell_aabb(grid, cell);
    for py in py0..=py1 {
        for px in px0..=px1 {
            let pix = py as usize * cam.width as usize + px as usize;
            if skip.is_some_and(|sk| sk[pix]) {
                continue;
            }
            let ray = &rays[pix];
            if let Some(r) = &region {
                if !r.member(ray.dir) {
                    continue;
                }
            }
            trace.geometry_primitives.intersection += 1;
            let Some((bt0, bt1)) = ray_sphere_intersect(ray, &ball) else {
                continue;
            };
            let (t0, t1) = if exact_mode {
                match cell_box.ray_range(ray.origin, ray.dir) {
                    Some((e0, e1)) => (e0.max(0.0), e1),
                    None => continue,
                }
            } else {
                (bt0, bt1)
            };
            trace.points_located +=
                segment_samples(pix as u32, t0, t1, cell, cell_linear, half_side, out);
        }
    }
}

/// Geometry-driven point location over all octants, without shading.
pub fn locate_points_rt(
    cam: &Camera,
    grid: &OccupancyGrid,
    exact_mode: bool,
) -> (RaySampleBatch, StepTrace) {
    let mut trace = StepTrace::default();
    let rays = precompute_rays(cam, &mut trace);
    let mut batch = RaySampleBatch::empty(cam.width, cam.height);
    if grid.is_empty() {
        return (batch, trace);
    }
    let clock = Instant::now();
    let parts = partition_octants(grid);
    let order = octant_order(grid.bounds(), cam.origin);
    let mut located = Vec::new();
    for k in order {
        trace.occupancy_accesses += 1; // octant bookkeeping
        for &cell_linear in &parts[k] {
            trace.occupancy_accesses += 1;
            visit_cell(
                cam,
                grid,
                &rays,
                cell_linear,
                exact_mode,
                None,
                &mut trace,
                &mut located,
            );
        }
    }
    for (pix, s) in located {
        batch.samples[pix as usize].push(s);
    }
    for samples in &mut batch.samples {
        samples.sort_by(sample_order);
    }
    trace.step_seconds.step2_1 += clock.elapsed().as_secs_f64();
    (batch, trace)
}

fn sample_order(a: &SamplePoint, b: &SamplePoint) -> std::cmp::Ordering {
    a.t.partial_cmp(&b.t)
        .unwrap()
        .then(a.cell_linear.cmp(&b.cell_linear))
}

/// Factor evaluation path: plain arrays, or queries through per-factor
/// hybrid encodings with cycle accounting.
enum FactorPath {
    Dense,
    Encoded {
        density: Vec<[HybridEncoding; 6]>,
        appearance: Vec<[HybridEncoding; 6]>,
    },
}

/// Amortized metadata traffic per codec query: one presence bit plus the
/// row-pointer share rounds up to about a byte.
const CODEC_METADATA_BYTES_PER_QUERY: u64 = 1;

struct Shader<'a> {
    scene: &'a Scene,
    path: FactorPath,
    feature_buf: Vec<f64>,
    input_buf: Vec<f64>,
}

impl<'a> Shader<'a> {
    fn new(scene: &'a Scene, use_codec: bool) -> Self {
        let path = if use_codec {
            let encode_set = |f: &VmFactors| {
                [
                    sparse::encode(&Matrix::from_row(f.vx.clone())).unwrap(),
                    sparse::encode(&Matrix::from_row(f.vy.clone())).unwrap(),
                    sparse::encode(&Matrix::from_row(f.vz.clone())).unwrap(),
                    sparse::encode(&f.myz.clone()).unwrap(),
                    sparse::encode(&f.mxz.clone()).unwrap(),
                    sparse::encode(&f.mxy.clone()).unwrap(),
                ]
            };
            FactorPath::Encoded {
                density: scene.decomp.density.iter().map(encode_set).collect(),
                appearance: scene.decomp.appearance.iter().map(encode_set).collect(),
            }
        } else {
            FactorPath::Dense
        };
        Shader {
            scene,
            path,
            feature_buf: Vec::new(),
            input_buf: Vec::new(),
        }
    }

    fn query(enc: &HybridEncoding, x: usize, y: usize, trace: &mut StepTrace) -> f64 {
        let q = enc.query(x, y).expect("index in range");
        trace.sparse_queries += 1;
        trace.embedding_element_reads += 1;
        trace.embedding_bytes +=
            CODEC_METADATA_BYTES_PER_QUERY + if q.value != 0.0 { 4 } else { 0 };
        let hist = match enc.variant {
            sparse::Variant::Bitmap => &mut trace.codec_cycles.bitmap,
            sparse::Variant::Coo => &mut trace.codec_cycles.coo,
        };
        *hist.entry(q.cycles).or_insert(0) += 1;
        q.value as f64
    }

    /// Raw three-mode density sum with operation accounting; identical
    /// arithmetic order on both paths.
    fn density_raw(&mut self, cell: [usize; 3], trace: &mut StepTrace) -> f64 {
        let [x, y, z] = cell;
        match &self.path {
            FactorPath::Dense => {
                let d = &self.scene.decomp;
                let r = d.rank as u64;
                trace.embedding_element_reads += 6 * r;
                trace.embedding_bytes += 6 * r * 4;
                trace.multiplies += 3 * r;
                trace.adds += 3 * r;
                features::density_raw(d, cell).expect("cell in range")
            }
            FactorPath::Encoded { density, .. } => {
                let mut acc = 0.0f64;
                for set in density {
                    let terms = [
                        (&set[0], (0, x), &set[3], (y, z)),
                        (&set[1], (0, y), &set[4], (x, z)),
                        (&set[2], (0, z), &set[5], (x, y)),
                    ];
                    for (venc, vi, menc, mi) in terms {
                        let v = Self::query(venc, vi.0, vi.1, trace);
                        let m = Self::query(menc, mi.0, mi.1, trace);
                        if v != 0.0 && m != 0.0 {
                            trace.multiplies += 1;
                            trace.adds += 1;
                            acc += v * m;
                        }
                    }
                }
                acc
            }
        }
    }

    /// Appearance feature vector (rank-major, mode X/Y/Z, channel) written
    /// into the internal buffer.
    fn appearance_features(&mut self, cell: [usize; 3], trace: &mut StepTrace) {
        let [x, y, z] = cell;
        match &self.path {
            FactorPath::Dense => {
                let d = &self.scene.decomp;
                let width = d.appearance_feature_width();
                let reads = 2 * width as u64;
                trace.embedding_element_reads += reads;
                trace.embedding_bytes += reads * 4;
                trace.multiplies += width as u64;
                self.feature_buf = features::appearance_features(d, cell).expect("cell in range");
            }
            FactorPath::Encoded { appearance, .. } => {
                let mut buf = std::mem::take(&mut self.feature_buf);
                buf.clear();
                let d = &self.scene.decomp;
                for r in 0..d.rank {
                    for mode in 0..3 {
                        for ch in 0..d.channels {
                            let set = &appearance[r * d.channels + ch];
                            let (venc, vi, menc, mi) = match mode {
                                0 => (&set[0], (0, x), &set[3], (y, z)),
                                1 => (&set[1], (0, y), &set[4], (x, z)),
                                _ => (&set[2], (0, z), &set[5], (x, y)),
                            };
                            let v = Self::query(venc, vi.0, vi.1, trace);
                            let m = Self::query(menc, mi.0, mi.1, trace);
                            if v != 0.0 && m != 0.0 {
                                trace.multiplies += 1;
                                buf.push(v * m);
                            } else {
                                buf.push(0.0);
                            }
                        }
                    }
                }
                self.feature_buf = buf;
            }
        }
    }
}

#[derive(Default)]
struct ShadeTimers {
    grid: f64,
    mlp: f64,
    fold: f64,
}

/// Shade and fold one pixel's ordered samples into its composite state,
/// stopping at early termination.
#[allow(clippy::too_many_arguments)]
fn shade_samples(
    samples: &[SamplePoint],
    encoded_dir: &[f64],
    shader: &mut Shader<'_>,
    state: &mut CompositeState,
    tau: f64,
    convention: TransmittanceConvention,
    trace: &mut StepTrace,
    timers: &mut ShadeTimers,
) {
    for s in samples {
        if state.terminated() {
            break;
        }
        let clock = Instant::now();
        let sigma = features::density_transfer(shader.density_raw(s.cell, trace));
        shader.appearance_features(s.cell, trace);
        timers.grid += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut input = std::mem::take(&mut shader.input_buf);
        input.clear();
        input.extend_from_slice(&shader.feature_buf);
        input.extend_from_slice(encoded_dir);
        let color = head_forward(&shader.scene.head, &input);
        shader.input_buf = input;
        trace.mlp_macs += shader.scene.head.macs_per_eval();
        timers.mlp += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        state.fold(sigma, s.delta, &color, tau, convention);
        trace.composite_ops += 1;
        trace.points_shaded += 1;
        timers.fold += clock.elapsed().as_secs_f64();
    }
}

/// Render a scene. Returns the image and the instrumented trace.
pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> (Image, StepTrace) {
    let channels = scene.decomp.channels;
    let mut image = Image::black(cam.width, cam.height, channels);
    let mut shader = Shader::new(scene, opts.use_codec);
    let mut timers = ShadeTimers::default();

    let (states, mut trace) = match (opts.pipeline, opts.schedule) {
        (Pipeline::Uniform, _) => {
            let (batch, trace) = locate_points_uniform(cam, &scene.grid, opts.n_samples);
            shade_batch(scene, cam, &batch, &mut shader, opts, trace, &mut timers)
        }
        (Pipeline::Rt, Schedule::GlobalSort) => {
            let (batch, trace) = locate_points_rt(cam, &scene.grid, opts.exact_mode);
            shade_batch(scene, cam, &batch, &mut shader, opts, trace, &mut timers)
        }
        (Pipeline::Rt, Schedule::OctantOrdered) => {
            render_rt_octants(scene, cam, &mut shader, opts, &mut timers)
        }
    };

    for (pix, state) in states.iter().enumerate() {
        let (px, py) = (
            (pix % cam.width as usize) as u32,
            (pix / cam.width as usize) as u32,
        );
        for (c, v) in image.pixel_mut(px, py).iter_mut().zip(state.color()) {
            *c = *v as f32;
        }
    }
    trace.step_seconds.step2_2_grid += timers.grid;
    trace.step_seconds.step2_2_mlp += timers.mlp;
    trace.step_seconds.step3 += timers.fold;
    (image, trace)
}

/// Single-pass shading over a pre-located batch: per pixel, fold the globally
/// sorted samples with early termination.
fn shade_batch(
    scene: &Scene,
    cam: &Camera,
    batch: &RaySampleBatch,
    shader: &mut Shader<'_>,
    opts: &RenderOptions,
    mut trace: StepTrace,
    timers: &mut ShadeTimers,
) -> (Vec<CompositeState>, StepTrace) {
    let channels = scene.decomp.channels;
    let mut states = Vec::with_capacity(batch.samples.len());
    for py in 0..cam.height {
        for px in 0..cam.width {
            let pix = py as usize * cam.width as usize + px as usize;
            let mut state = CompositeState::new(channels);
            let samples = &batch.samples[pix];
            if !samples.is_empty() {
                let ray = pixel_to_ray(cam, px as f64, py as f64).expect("in range");
                let enc_dir = encode_direction(ray.dir, scene.head.direction_degree);
                shade_samples(
                    samples,
                    &enc_dir,
                    shader,
                    &mut state,
                    opts.tau,
                    opts.convention,
                    &mut trace,
                    timers,
                );
            }
            states.push(state);
        }
    }
    (states, trace)
}

/// Octant-ordered locate + shade with carried per-pixel state. Samples fold
/// only once no later octant can produce a smaller t for the ray: cells
/// straddle octant planes by up to the ball radius, so the safe threshold is
/// the next octant's distance minus that padding. For tau = 0 the fold
/// sequence equals the globally sorted single pass bit for bit.
fn render_rt_octants(
    scene: &Scene,
    cam: &Camera,
    shader: &mut Shader<'_>,
    opts: &RenderOptions,
    timers: &mut ShadeTimers,
) -> (Vec<CompositeState>, StepTrace) {
    let channels = scene.decomp.channels;
    let grid = &scene.grid;
    let n_pixels = cam.width as usize * cam.height as usize;
    let mut trace = StepTrace::default();
    let rays = precompute_rays(cam, &mut trace);
    let mut states: Vec<CompositeState> = (0..n_pixels)
        .map(|_| CompositeState::new(channels))
        .collect();
    if grid.is_empty() {
        return (states, trace);
    }

    let mut pending: Vec<Vec<SamplePoint>> = vec![Vec::new(); n_pixels];
    let mut terminated = vec![false; n_pixels];
    let mut encoded_dirs: Vec<Option<Vec<f64>>> = vec![None; n_pixels];
    let pad = 0.5 * grid.cell_size().norm();

    let parts = partition_octants(grid);
    let order = octant_order(grid.bounds(), cam.origin);
    let octant_dist: Vec<f64> = order
        .iter()
        .map(|&k| octant_box(grid.bounds(), k).distance_to_point(cam.origin))
        .collect();
    let mut located = Vec::new();

    for (i, &k) in order.iter().enumerate() {
        let clock = Instant::now();
        trace.occupancy_accesses += 1;
        for &cell_linear in &parts[k] {
            trace.occupancy_accesses += 1;
            visit_cell(
                cam,
                grid,
                &rays,
                cell_linear,
                opts.exact_mode,
                Some(&terminated),
                &mut trace,
                &mut located,
            );
        }
        for (pix, s) in located.drain(..) {
            pending[pix as usize].push(s);
        }
        trace.step_seconds.step2_1 += clock.elapsed().as_secs_f64();

        let safe_t = if i + 1 < 8 {
            octant_dist[i + 1] - pad
        } else {
            f64::INFINITY
        };
        for pixu in 0..n_pixels {
            if pending[pixu].is_empty() {
                continue;
            }
            if terminated[pixu] {
                pending[pixu].clear();
                continue;
            }
            pending[pixu].sort_by(sample_order);
            let cut = pending[pixu].partition_point(|s| s.t <= safe_t);
            if cut == 0 {
                continue;
            }
            let ready: Vec<SamplePoint> = pending[pixu].drain(..cut).collect();
            let enc_dir = encoded_dirs[pixu]
                .get_or_insert_with(|| {
                    encode_direction(rays[pixu].dir, scene.head.direction_degree)
                })
                .clone();
            shade_samples(
                &ready,
                &enc_dir,
                shader,
                &mut states[pixu],
                opts.tau,
                opts.convention,
                &mut trace,
                timers,
            );
            if states[pixu].terminated() {
                terminated[pixu] = true;
                pending[pixu].clear();
            }
        }
    }
    debug_assert!(pending
        .iter()
        .enumerate()
        .all(|(p, b)| b.is_empty() || terminated[p]));
    (states, trace)
}

/// Access-count comparison between the two point-location strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessReport {
    pub width: u32,
    pub height: u32,
    pub n_samples: usize,
    pub popcount: u64,
    pub uniform_accesses: u64,
    pub rt_accesses: u64,
    /// uniform / rt; None (JSON null) when the grid is empty and the ratio
    /// is unbounded.
    pub ratio: Option<f64>,
    pub unbounded: bool,
}

pub fn compare_access_counts(scene: &Scene, cam: &Camera, n_uniform: usize) -> AccessReport {
    let (_, uniform_trace) = locate_points_uniform(cam, &scene.grid, n_uniform);
    let (_, rt_trace) = locate_points_rt(cam, &scene.grid, true);
    let (u, r) = (
        uniform_trace.occupancy_accesses,
        rt_trace.occupancy_accesses,
    );
    AccessReport {
        width: cam.width,
        height: cam.height,
        n_samples: n_uniform,
        popcount: scene.grid.popcount() as u64,
        uniform_accesses: u,
        rt_accesses: r,
        ratio: if r == 0 {
            None
        } else {
            Some(u as f64 / r as f64)
        },
        unbounded: r == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneGenConfig};

    fn test_scene(seed: u64) -> Scene {
        generate_synthetic_scene(&SceneGenConfig {
            resolution: [32, 32, 32],
            target_occupancy: 0.02,
            rank: 2,
            channels: 3,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn test_camera(w: u32, h: u32) -> Camera {
        Camera::look_at(
            Vec3::new(0.5, 0.5, -2.5),
            Vec3::splat(0.5),
            Vec3::new(0.0, 1.0, 0.0),
            24.0,
            w,
            h,
        )
        .unwrap()
    }

    #[test]
    fn uniform_access_count_is_fixed() {
        let scene = test_scene(1);
        let cam = test_camera(16, 16);
        let (_, trace) = locate_points_uniform(&cam, &scene.grid, 64);
        assert_eq!(trace.occupancy_accesses, 16 * 16 * 64);

        let empty = OccupancyGrid::new(
            [32, 32, 32],
            scene.grid.bounds(),
            &vec![false; 32 * 32 * 32],
        )
        .unwrap();
        let (batch, trace) = locate_points_uniform(&cam, &empty, 64);
        assert_eq!(trace.occupancy_accesses, 16 * 16 * 64);
        assert_eq!(batch.total_samples(), 0);
    }

    #[test]
    fn uniform_samples_quantize_to_the_single_occupied_cell() {
        let mut bits = vec![false; 32 * 32 * 32];
        bits[16 + 32 * (16 + 32 * 16)] = true;
        let grid = OccupancyGrid::new([32, 32, 32], Aabb::new(Vec3::ZERO, Vec3::splat(1.0)), &bits)
            .unwrap();
        let cam = test_camera(32, 32);
        let (batch, _) = locate_points_uniform(&cam, &grid, 256);
        assert!(batch.total_samples() > 0);
        for samples in &batch.samples {
            for s in samples {
                assert_eq!(s.cell, [16, 16, 16]);
            }
            for w in samples.windows(2) {
                assert!(w[0].t < w[1].t);
            }
        }
    }

    #[test]
    fn rt_access_count_is_popcount_plus_octants() {
        let scene = test_scene(2);
        let cam = test_camera(16, 16);
        let (_, trace) = locate_points_rt(&cam, &scene.grid, true);
        assert_eq!(trace.occupancy_accesses, scene.grid.popcount() as u64 + 8);

        let empty = OccupancyGrid::new(
            [32, 32, 32],
            scene.grid.bounds(),
            &vec![false; 32 * 32 * 32],
        )
        .unwrap();
        let (batch, trace) = locate_points_rt(&cam, &empty, true);
        assert_eq!(trace.occupancy_accesses, 0);
        assert_eq!(batch.total_samples(), 0);
    }

    #[test]
    fn rt_cell_sets_cover_uniform_cell_sets() {
        // uniform catches a cell only when a lattice point lands inside the
        // chord; the geometry-driven locator must never miss such a cell, and
        // any extra cells it reports must be grazing crossings shorter than
        // the uniform step
        let scene = test_scene(3);
        let cam = test_camera(24, 24);
        let n = 256; // step <= half cell side for this camera
        let (ubatch, _) = locate_points_uniform(&cam, &scene.grid, n);
        let (rbatch, _) = locate_points_rt(&cam, &scene.grid, true);
        for py in 0..24 {
            for px in 0..24 {
                let upix: std::collections::BTreeSet<u32> =
                    ubatch.pixel(px, py).iter().map(|s| s.cell_linear).collect();
                let rpix: std::collections::BTreeSet<u32> =
                    rbatch.pixel(px, py).iter().map(|s| s.cell_linear).collect();
                assert!(
                    upix.is_subset(&rpix),
                    "pixel ({px},{py}): uniform found cells the rt locator missed: {:?}",
                    upix.difference(&rpix).collect::<Vec<_>>()
                );
                // cells only rt found must have chords shorter than the step
                let ray = pixel_to_ray(&cam, px as f64, py as f64).unwrap();
                let (enter, exit) = match scene.grid.bounds().ray_range(ray.origin, ray.dir) {
                    Some(r) => r,
                    None => continue,
                };
                let step = (exit - enter.max(0.0)) / n as f64;
                for cell_linear in rpix.difference(&upix) {
                    let cell = scene.grid.cell_of_linear(*cell_linear);
                    let (c0, c1) = cell_aabb(&scene.grid, cell)
                        .ray_range(ray.origin, ray.dir)
                        .expect("rt-located cell must intersect");
                    let chord = c1 - c0.max(0.0);
                    assert!(
                        chord < step,
                        "pixel ({px},{py}) cell {cell:?}: chord {chord} >= step {step}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_density_scene_renders_black() {
        let mut scene = test_scene(4);
        for f in &mut scene.decomp.density {
            f.vx.fill(0.0);
            f.vy.fill(0.0);
            f.vz.fill(0.0);
            f.myz.data_mut().fill(0.0);
            f.mxz.data_mut().fill(0.0);
            f.mxy.data_mut().fill(0.0);
        }
        let cam = test_camera(16, 16);
        for pipeline in [Pipeline::Uniform, Pipeline::Rt] {
            let opts = RenderOptions {
                pipeline,
                ..Default::default()
            };
            let (image, _) = render(&scene, &cam, &opts);
            assert!(image.data.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn octant_schedule_is_bit_identical_to_global_sort_at_tau_zero() {
        let scene = test_scene(5);
        let cam = test_camera(24, 24);
        let octant = RenderOptions {
            tau: 0.0,
            ..Default::default()
        };
        let global = RenderOptions {
            tau: 0.0,
            schedule: Schedule::GlobalSort,
            ..Default::default()
        };
        let (img_a, trace_a) = render(&scene, &cam, &octant);
        let (img_b, trace_b) = render(&scene, &cam, &global);
        assert_eq!(img_a.data, img_b.data);
        assert_eq!(trace_a.points_shaded, trace_b.points_shaded);
        assert_eq!(trace_a.composite_ops, trace_b.composite_ops);
    }

    #[test]
    fn early_termination_shades_fewer_points() {
        let scene = occluder_scene();
        let cam = test_camera(24, 24);
        let with_tau = RenderOptions {
            tau: 1e-4,
            ..Default::default()
        };
        let without = RenderOptions {
            tau: 0.0,
            ..Default::default()
        };
        let (img_t, trace_t) = render(&scene, &cam, &with_tau);
        let (img_0, trace_0) = render(&scene, &cam, &without);
        assert!(trace_t.points_shaded < trace_0.points_shaded);
        for (a, b) in img_t.data.iter().zip(&img_0.data) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    /// A dense opaque wall in front of a second blob, camera looking along +z.
    pub(crate) fn occluder_scene() -> Scene {
        let mut scene = generate_synthetic_scene(&SceneGenConfig {
            resolution: [32, 32, 32],
            target_occupancy: 0.05,
            rank: 2,
            channels: 3,
            seed: 9,
            factor_sparsity: vec![0.0],
            ..Default::default()
        })
        .unwrap();
        let mut bits = vec![false; 32 * 32 * 32];
        for z in 6..10 {
            for y in 8..24 {
                for x in 8..24 {
                    bits[x + 32 * (y + 32 * z)] = true;
                }
            }
        }
        for z in 20..26 {
            for y in 12..20 {
                for x in 12..20 {
                    bits[x + 32 * (y + 32 * z)] = true;
                }
            }
        }
        scene.grid =
            OccupancyGrid::new([32, 32, 32], Aabb::new(Vec3::ZERO, Vec3::splat(1.0)), &bits)
                .unwrap();
        // crank the first-rank factors into an opaque regime
        for f in &mut scene.decomp.density {
            for v in f.vx.iter_mut().chain(&mut f.vy).chain(&mut f.vz) {
                *v = 4.0;
            }
            for m in [&mut f.myz, &mut f.mxz, &mut f.mxy] {
                m.data_mut().fill(4.0);
            }
        }
        scene
    }

    #[test]
    fn codec_render_matches_dense_render() {
        let scene = test_scene(6);
        let cam = test_camera(16, 16);
        let dense = RenderOptions::default();
        let codec = RenderOptions {
            use_codec: true,
            ..Default::default()
        };
        let (img_a, trace_a) = render(&scene, &cam, &dense);
        let (img_b, trace_b) = render(&scene, &cam, &codec);
        assert_eq!(img_a.data, img_b.data);
        assert_eq!(trace_a.sparse_queries, 0);
        assert!(trace_b.sparse_queries > 0);
        assert!(!trace_b.codec_cycles.is_empty());
        for c in trace_b.codec_cycles.bitmap.keys() {
            assert!(*c == 1 || *c == 3);
        }
        // zero-valued reads skip their multiply on the codec path
        assert!(trace_b.multiplies <= trace_a.multiplies);
    }

    #[test]
    fn access_ratio_report() {
        let scene = test_scene(7);
        let cam = test_camera(32, 32);
        let report = compare_access_counts(&scene, &cam, 64);
        assert_eq!(report.uniform_accesses, 32 * 32 * 64);
        assert_eq!(report.rt_accesses, report.popcount + 8);
        let want = report.uniform_accesses as f64 / report.rt_accesses as f64;
        assert_eq!(report.ratio, Some(want));
        assert!(!report.unbounded);

        let mut empty_scene = scene;
        empty_scene.grid = OccupancyGrid::new(
            [32, 32, 32],
            empty_scene.grid.bounds(),
            &vec![false; 32 * 32 * 32],
        )
        .unwrap();
        let report = compare_access_counts(&empty_scene, &cam, 64);
        assert_eq!(report.rt_accesses, 0);
        assert_eq!(report.ratio, None);
        assert!(report.unbounded);
    }

    #[test]
    fn access_ratio_on_full_occupancy_is_cell_bound() {
        // with every cell occupied the rt locator still only pays per cell:
        // 64*64*64 uniform accesses over 32^3 + 8 rt accesses is almost 8x
        let mut scene = test_scene(11);
        scene.grid =
            OccupancyGrid::new([32, 32, 32], scene.grid.bounds(), &vec![true; 32 * 32 * 32])
                .unwrap();
        let cam = test_camera(64, 64);
        let report = compare_access_counts(&scene, &cam, 64);
        assert_eq!(report.rt_accesses, 32 * 32 * 32 + 8);
        let ratio = report.ratio.unwrap();
        assert!((ratio - 8.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn trace_json_has_fixed_keys() {
        let scene = test_scene(8);
        let cam = test_camera(8, 8);
        let (_, trace) = render(&scene, &cam, &RenderOptions::default());
        let doc = serde_json::to_value(&trace).unwrap();
        for key in [
            "occupancy_accesses",
            "embedding_element_reads",
            "embedding_bytes",
            "multiplies",
            "adds",
            "mlp_macs",
            "sparse_queries",
            "composite_ops",
            "points_located",
            "points_shaded",
            "step_seconds",
            "geometry_primitives",
        ] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
        for key in ["step1", "step2_1", "step2_2_grid", "step2_2_mlp", "step3"] {
            assert!(
                doc["step_seconds"].get(key).is_some(),
                "missing step key {key}"
            );
        }
    }

    #[test]
    fn points_shaded_never_exceeds_points_located() {
        let scene = test_scene(10);
        let cam = test_camera(16, 16);
        for pipeline in [Pipeline::Uniform, Pipeline::Rt] {
            let (_, trace) = render(
                &scene,
                &cam,
                &RenderOptions {
                    pipeline,
                    ..Default::default()
                },
            );
            assert!(trace.points_shaded <= trace.points_located);
        }
    }
}
