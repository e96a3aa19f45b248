//! Virtual pinhole camera facing a bounding box: the rotation that turns the
//! real camera towards the box, the induced homography, image warping and
//! the matching change of rotation labels.

use image::{ImageBuffer, Pixel};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::RotationMatrix;

pub const DEFAULT_OUTPUT_SIZE: u32 = 224;
/// Up to this many points the cap is found by exhaustive support-set search.
pub const EXHAUSTIVE_CAP_POINTS: usize = 8;
const CAP_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::validation(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::validation("principal point must be finite"));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Square-pixel camera of an `s × s` image with the principal point at its center.
    pub fn ideal(f: f64, s: u32) -> Result<Self> {
        let c = s as f64 / 2.0;
        Self::new(f, f, c, c)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Pixel of a camera-frame direction with positive depth.
    pub fn project(&self, v: &Vector3<f64>) -> [f64; 2] {
        [self.fx * v.x / v.z + self.cx, self.fy * v.y / v.z + self.cy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) || x_min >= x_max || y_min >= y_max {
            return Err(Error::validation(format!("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")));
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [[self.x_min, self.y_min], [self.x_max, self.y_min], [self.x_max, self.y_max], [self.x_min, self.y_max]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpResult {
    /// Maps real-image pixels to virtual-image pixels.
    pub homography: Matrix3<f64>,
    pub virtual_intrinsics: CameraIntrinsics,
    /// Real camera frame to virtual camera frame.
    pub cam_rotation: RotationMatrix,
    pub output_size: u32,
    pub cap_center: Vector3<f64>,
    pub cap_radius: f64,
}

pub fn backproject_to_sphere(p: [f64; 2], intr: &CameraIntrinsics) -> Vector3<f64> {
    (intr.inverse() * Vector3::new(p[0], p[1], 1.0)).normalize()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cap {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Cap {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        self.center.dot(p) >= self.radius.cos() - CAP_SLACK
    }

    fn point(p: &Vector3<f64>) -> Cap {
        Cap { center: *p, radius: 0.0 }
    }

    fn two(a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Cap> {
        let m = a + b;
        (m.norm() > 1e-12).then(|| Cap { center: m.normalize(), radius: angle(a, b) / 2.0 })
    }

    /// Cap whose boundary passes through all three points, on the side the points face.
    fn three(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Cap> {
        let n = (b - a).cross(&(c - a));
        if n.norm() < 1e-14 {
            return None;
        }
        let mut center = n.normalize();
        if center.dot(a) < 0.0 {
            center = -center;
        }
        Some(Cap { center, radius: center.dot(a).clamp(-1.0, 1.0).acos() })
    }
}

fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Smallest cap among those spanned by 1, 2 or 3 input points that contains every point.
pub fn min_enclosing_cap_exhaustive(points: &[Vector3<f64>]) -> Result<Cap> {
    let n = points.len();
    let all = |c: &Cap| points.iter().all(|p| c.contains(p));
    let mut best: Option<Cap> = None;
    let mut offer = |c: Option<Cap>| {
        if let Some(c) = c {
            if c.radius < std::f64::consts::FRAC_PI_2 && best.is_none_or(|b| c.radius < b.radius) && all(&c) {
                best = Some(c);
            }
        }
    };
    for i in 0..n {
        offer(Some(Cap::point(&points[i])));
        for j in i + 1..n {
            offer(Cap::two(&points[i], &points[j]));
            for k in j + 1..n {
                offer(Cap::three(&points[i], &points[j], &points[k]));
            }
        }
    }
    best.ok_or(Error::UnsupportedFieldOfView)
}

/// Incremental Welzl order: rebuild the cap on the first point outside it,
/// with that point on the boundary.
pub fn min_enclosing_cap_welzl(points: &[Vector3<f64>]) -> Result<Cap> {
    let fallback = |a: &Vector3<f64>, b: &Vector3<f64>| Cap::two(a, b).ok_or(Error::UnsupportedFieldOfView);
    let mut cap = Cap::point(&points[0]);
    for i in 1..points.len() {
        if cap.contains(&points[i]) {
            continue;
        }
        cap = Cap::point(&points[i]);
        for j in 0..i {
            if cap.contains(&points[j]) {
                continue;
            }
            cap = fallback(&points[i], &points[j])?;
            for k in 0..j {
                if cap.contains(&points[k]) {
                    continue;
                }
                cap = match Cap::three(&points[i], &points[j], &points[k]) {
                    Some(c) => c,
                    None => {
                        // Three points on one great circle: the widest pair spans them.
                        let pairs = [(i, j), (i, k), (j, k)];
                        let (a, b) = pairs
                            .into_iter()
                            .max_by(|x, y| angle(&points[x.0], &points[x.1]).total_cmp(&angle(&points[y.0], &points[y.1])))
                            .expect("three pairs");
                        fallback(&points[a], &points[b])?
                    }
                };
            }
        }
    }
    Ok(cap)
}

/// Smallest spherical cap containing unit vectors that lie in an open hemisphere.
pub fn min_enclosing_cap(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, f64)> {
    if points.is_empty() {
        return Err(Error::validation("no points"));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite()) || (p.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::validation("cap points must be unit vectors"));
    }
    let cap = if points.len() <= EXHAUSTIVE_CAP_POINTS {
        min_enclosing_cap_exhaustive(points)?
    } else {
        min_enclosing_cap_welzl(points)?
    };
    if cap.radius >= std::f64::consts::FRAC_PI_2 || !points.iter().all(|p| cap.contains(p)) {
        return Err(Error::UnsupportedFieldOfView);
    }
    Ok((cap.center, cap.radius))
}

/// Rotation whose third row is `center` and whose second row is, up to
/// normalization, the real camera's `+y` axis projected orthogonally to
/// `center`. The virtual image keeps the real image's vertical direction.
pub fn facing_rotation(center: &Vector3<f64>) -> Result<RotationMatrix> {
    let x = Vector3::y().cross(center);
    if x.norm() < 1e-9 {
        return Err(Error::UnsupportedFieldOfView);
    }
    let x = x.normalize();
    let y = center.cross(&x);
    let m = Matrix3::from_rows(&[x.transpose(), y.transpose(), center.transpose()]);
    RotationMatrix::new_projected(m, 1e-9)
}

pub fn virtual_camera(bbox: &BBox, intr_real: &CameraIntrinsics, s: u32) -> Result<WarpResult> {
    if s == 0 {
        return Err(Error::validation("output size must be positive"));
    }
    let corners: Vec<Vector3<f64>> = bbox.corners().iter().map(|c| backproject_to_sphere(*c, intr_real)).collect();
    let (center, radius) = min_enclosing_cap(&corners)?;
    let rot = facing_rotation(&center)?;
    let half = s as f64 / 2.0;
    let mut f = f64::INFINITY;
    for c in &corners {
        let v = rot.apply(c);
        if v.z <= 0.0 {
            return Err(Error::UnsupportedFieldOfView);
        }
        let reach = (v.x / v.z).abs().max((v.y / v.z).abs());
        if reach > 0.0 {
            f = f.min(half / reach);
        }
    }
    if !f.is_finite() {
        return Err(Error::validation("bounding box has no extent"));
    }
    let virtual_intrinsics = CameraIntrinsics::ideal(f, s)?;
    let homography = virtual_intrinsics.matrix() * rot.matrix() * intr_real.inverse();
    Ok(WarpResult { homography, virtual_intrinsics, cam_rotation: rot, output_size: s, cap_center: center, cap_radius: radius })
}

/// A rotation label expressed in the virtual camera.
pub fn adjust_rotation_label(r_label: &RotationMatrix, w: &WarpResult) -> RotationMatrix {
    w.cam_rotation * *r_label
}

/// Inverse of [`adjust_rotation_label`].
pub fn restore_rotation_label(r_virtual: &RotationMatrix, w: &WarpResult) -> RotationMatrix {
    w.cam_rotation.transpose() * *r_virtual
}

/// Warps into an `s × s` image through the inverse homography with bilinear
/// interpolation. Pixel `(i, j)` has its center at `(i + ½, j + ½)`; samples
/// more than half a pixel outside the source are black.
pub fn warp_with_homography<P>(img: &ImageBuffer<P, Vec<u8>>, h: &Matrix3<f64>, s: u32) -> Result<ImageBuffer<P, Vec<u8>>>
where
    P: Pixel<Subpixel = u8>,
{
    let inv = h.try_inverse().ok_or_else(|| Error::validation("homography is singular"))?;
    let (w, ht) = img.dimensions();
    let mut out = ImageBuffer::<P, Vec<u8>>::new(s, s);
    if w == 0 || ht == 0 {
        return Ok(out);
    }
    let channels = P::CHANNEL_COUNT as usize;
    let raw = img.as_raw();
    let at = |x: usize, y: usize, c: usize| raw[(y * w as usize + x) * channels + c] as f64;
    for v in 0..s {
        for u in 0..s {
            let p = inv * Vector3::new(u as f64 + 0.5, v as f64 + 0.5, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let x = p.x / p.z - 0.5;
            let y = p.y / p.z - 0.5;
            if !(x >= -0.5 && y >= -0.5 && x <= w as f64 - 0.5 && y <= ht as f64 - 0.5) {
                continue;
            }
            let x = x.clamp(0.0, (w - 1) as f64);
            let y = y.clamp(0.0, (ht - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w as usize - 1), (y0 + 1).min(ht as usize - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let px = out.get_pixel_mut(u, v).channels_mut();
            for (c, slot) in px.iter_mut().enumerate() {
                let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
                let bottom = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
                *slot = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

pub fn warp_image<P>(img: &ImageBuffer<P, Vec<u8>>, w: &WarpResult) -> Result<ImageBuffer<P, Vec<u8>>>
where
    P: Pixel<Subpixel = u8>,
{
    warp_with_homography(img, &w.homography, w.output_size)
}
