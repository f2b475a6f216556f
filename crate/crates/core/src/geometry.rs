//! Ray, camera, and sphere math for the geometry-driven point location
//! pipeline: pixel-to-ray mapping, cube-to-ball approximation, projection of
//! balls to conservative pixel regions, analytic line-sphere intersection,
//! and view-dependent octant ordering.

use crate::math::{Aabb, Mat3, Vec3};
use crate::scene::OccupancyGrid;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({px}, {py}) outside image {w}x{h}")]
    PixelOutOfImage { px: f64, py: f64, w: u32, h: u32 },
    #[error("camera rotation is not orthonormal (error {0:.3e})")]
    BadRotation(f64),
    #[error("camera intrinsics must be positive")]
    BadIntrinsics,
    #[error("cell {0:?} is not occupied")]
    CellNotOccupied([usize; 3]),
}

/// Pinhole camera. `rotation` maps camera coordinates to world coordinates;
/// its columns are (image-right, image-down, forward) in world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub origin: Vec3,
    pub rotation: Mat3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        origin: Vec3,
        rotation: Mat3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let err = rotation.orthonormality_error();
        if err > 1e-6 {
            return Err(GeometryError::BadRotation(err));
        }
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(GeometryError::BadIntrinsics);
        }
        Ok(Camera {
            origin,
            rotation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `origin` looking at `target`, with a symmetric horizontal
    /// field of view in degrees and the principal point at the image center.
    pub fn look_at(
        origin: Vec3,
        target: Vec3,
        up: Vec3,
        fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - origin).normalized();
        let right = forward.cross(up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::BadIntrinsics);
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_cols(right, down, forward);
        let fov = fov_deg.to_radians();
        if !(fov > 0.0 && fov < std::f64::consts::PI) {
            return Err(GeometryError::BadIntrinsics);
        }
        let fx = width as f64 * 0.5 / (fov * 0.5).tan();
        Camera::new(
            origin,
            rotation,
            fx,
            fx,
            width as f64 * 0.5,
            height as f64 * 0.5,
            width,
            height,
        )
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.cols[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Ray through the center of pixel (px, py). Fractional pixel coordinates are
/// accepted; the pre-condition is `0 <= px < W`, `0 <= py < H`.
pub fn pixel_to_ray(cam: &Camera, px: f64, py: f64) -> Result<Ray, GeometryError> {
    if !(px >= 0.0 && px < cam.width as f64 && py >= 0.0 && py < cam.height as f64) {
        return Err(GeometryError::PixelOutOfImage {
            px,
            py,
            w: cam.width,
            h: cam.height,
        });
    }
    let dir_cam = Vec3::new(
        (px + 0.5 - cam.cx) / cam.fx,
        (py + 0.5 - cam.cy) / cam.fy,
        1.0,
    );
    let dir = cam.rotation.mul_vec(dir_cam).normalized();
    Ok(Ray {
        origin: cam.origin,
        dir,
    })
}

/// Ball circumscribing one occupied grid cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
    pub source_cell: [usize; 3],
}

/// Approximate an occupied cube as its circumscribed ball: the radius is half
/// the diagonal, so no point of the cube falls outside the ball.
pub fn cube_to_ball(grid: &OccupancyGrid, cell: [usize; 3]) -> Result<Ball, GeometryError> {
    if !grid.is_occupied(cell) {
        return Err(GeometryError::CellNotOccupied(cell));
    }
    let s = grid.cell_size();
    Ok(Ball {
        center: grid.cell_center(cell),
        radius: 0.5 * s.norm(),
        source_cell: cell,
    })
}

/// Conservative pixel region of a projected ball: an inclusive pixel box plus
/// the cone-membership predicate (axis and cosine threshold).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRegion {
    pub px0: u32,
    pub px1: u32,
    pub py0: u32,
    pub py1: u32,
    /// Unit vector from the camera origin toward the ball center (world).
    pub axis: Vec3,
    /// Pixel is a member iff dot(ray dir, axis) >= cos_min.
    pub cos_min: f64,
}

impl PixelRegion {
    pub fn member(&self, dir: Vec3) -> bool {
        dir.dot(self.axis) >= self.cos_min
    }

    pub fn pixel_count(&self) -> u64 {
        (self.px1 - self.px0 + 1) as u64 * (self.py1 - self.py0 + 1) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BallProjection {
    /// No pixel ray can hit the ball.
    NotVisible,
    /// The camera origin is inside the ball: every pixel is a member.
    AllPixels,
    Oval(PixelRegion),
}

/// Guard subtracted from the cosine threshold so that rounding differences
/// against the analytic intersection test cannot produce false negatives.
const COS_GUARD: f64 = 1e-12;

/// Project a ball to the image. The membership predicate is exact for sphere
/// visibility (cone-angle test); the bounding box is tight up to a one-pixel
/// guard band and never under-approximates.
pub fn project_ball(cam: &Camera, ball: &Ball) -> BallProjection {
    let co = ball.center - cam.origin;
    let dist_sq = co.norm_squared();
    let r_sq = ball.radius * ball.radius;
    if dist_sq <= r_sq {
        return BallProjection::AllPixels;
    }
    let dist = dist_sq.sqrt();
    let axis_world = co / dist;
    let sin_t = (ball.radius / dist).clamp(0.0, 1.0);
    let cos_t = (1.0 - sin_t * sin_t).max(0.0).sqrt();
    let theta = sin_t.asin();

    // cone axis in camera coordinates
    let a = cam.rotation.transpose_mul_vec(axis_world);
    let alpha = a.z.clamp(-1.0, 1.0).acos();

    // every direction of the cone points away from the image plane
    if alpha - theta >= FRAC_PI_2 {
        return BallProjection::NotVisible;
    }

    let region_from_ranges = |xr: (f64, f64), yr: (f64, f64)| -> BallProjection {
        // pixel center x = (px + 0.5 - cx) / fx, one-pixel guard each side
        let px0 = (cam.fx * xr.0 + cam.cx - 0.5).floor() - 1.0;
        let px1 = (cam.fx * xr.1 + cam.cx - 0.5).ceil() + 1.0;
        let py0 = (cam.fy * yr.0 + cam.cy - 0.5).floor() - 1.0;
        let py1 = (cam.fy * yr.1 + cam.cy - 0.5).ceil() + 1.0;
        if px1 < 0.0 || py1 < 0.0 || px0 > cam.width as f64 - 1.0 || py0 > cam.height as f64 - 1.0 {
            return BallProjection::NotVisible;
        }
        BallProjection::Oval(PixelRegion {
            px0: px0.max(0.0) as u32,
            px1: px1.min(cam.width as f64 - 1.0) as u32,
            py0: py0.max(0.0) as u32,
            py1: py1.min(cam.height as f64 - 1.0) as u32,
            axis: axis_world,
            cos_min: cos_t - COS_GUARD,
        })
    };

    if alpha + theta >= FRAC_PI_2 - 1e-9 {
        // the cone grazes or crosses the image plane: its projection is
        // unbounded, fall back to the whole image as a conservative box
        let w = cam.width as f64;
        let h = cam.height as f64;
        let full_x = (
            (0.5 - cam.cx - 1.0) / cam.fx,
            (w - 0.5 - cam.cx + 1.0) / cam.fx,
        );
        let full_y = (
            (0.5 - cam.cy - 1.0) / cam.fy,
            (h - 0.5 - cam.cy + 1.0) / cam.fy,
        );
        return region_from_ranges(full_x, full_y);
    }

    // Extremes of the projected ellipse on the plane z=1. The silhouette
    // boundary satisfies (a . p)^2 = cos^2(theta) |p|^2 for p = (x, y, 1);
    // eliminating one variable gives a quadratic whos roots are the extremes:
    //   (a1^2 - k) x^2 + 2 a1 a3 x + (a3^2 - k) = 0,  k = cos^2 - a2^2
    // with discriminant k sin^2(theta) (non-negative for a forward cone).
    let cos_sq = cos_t * cos_t;
    let extremes = |a_par: f64, a_perp: f64, a_fwd: f64| -> (f64, f64) {
        let k = cos_sq - a_perp * a_perp;
        let denom = a_par * a_par - k;
        let root = (k.max(0.0)).sqrt() * sin_t;
        let e0 = (-a_par * a_fwd + root) / denom;
        let e1 = (-a_par * a_fwd - root) / denom;
        (e0.min(e1), e0.max(e1))
    };
    let xr = extremes(a.x, a.y, a.z);
    let yr = extremes(a.y, a.x, a.z);
    region_from_ranges(xr, yr)
}

/// Analytic line-sphere intersection. Returns `(t_near, t_far)` with `t_near`
/// clamped to zero when the origin is inside the ball; `None` when the ray
/// misses or the ball lies entirely behind the origin.
pub fn ray_sphere_intersect(ray: &Ray, ball: &Ball) -> Option<(f64, f64)> {
    let co = ball.center - ray.origin;
    let m = ray.dir.dot(co);
    let q = co.norm_squared() - ball.radius * ball.radius;
    let disc = m * m - q;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t_far = m + s;
    if t_far < 0.0 {
        return None;
    }
    Some(((m - s).max(0.0), t_far))
}

/// Corner box `k` of `bounds` split at its midpoint; bit 0/1/2 of `k` selects
/// the high half along x/y/z.
pub fn octant_box(bounds: Aabb, k: usize) -> Aabb {
    let mid = bounds.center();
    let pick = |bit: bool, lo: f64, m: f64, hi: f64| if bit { (m, hi) } else { (lo, m) };
    let (x0, x1) = pick(k & 1 != 0, bounds.min.x, mid.x, bounds.max.x);
    let (y0, y1) = pick(k & 2 != 0, bounds.min.y, mid.y, bounds.max.y);
    let (z0, z1) = pick(k & 4 != 0, bounds.min.z, mid.z, bounds.max.z);
    Aabb::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1))
}

/// The eight octant indices ordered by ascending distance from `view_origin`
/// to the octant's closest point, ties broken by index.
pub fn octant_order(bounds: Aabb, view_origin: Vec3) -> [usize; 8] {
    let mut order: Vec<usize> = (0..8).collect();
    let dist: Vec<f64> = (0..8)
        .map(|k| octant_box(bounds, k).distance_to_point(view_origin))
        .collect();
    order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)));
    order.try_into().unwrap()
}
