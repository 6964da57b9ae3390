//! Integral-image formation over an unstructured light-field capture.
//!
//! Every virtual pixel is back-projected onto the synthetic focal plane, the
//! plane point is re-projected into each recorded view, and the in-bounds
//! bilinear samples are averaged. Out-of-focus occluders spread over the
//! closed-form footprint given by [`blur_footprint`] while content on the
//! focal plane stays registered.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    Camera, CameraIntrinsics, CaptureGeometry, GeometryError, Plane, Pose, PoseRecord,
    intersect_plane, rotation_about_axis,
};
use crate::image::{HdrImage, ImageError};

const MAX_TILT_DEG: f64 = 45.0;
/// Sharpness spread below which a focus search is considered signal-free.
const FLAT_OBJECTIVE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LightFieldError {
    #[error("capture must contain at least one view")]
    EmptyCapture,
    #[error("view {0}: image size does not match capture intrinsics")]
    ViewSizeMismatch(u32),
    #[error("duplicate view id {0}")]
    DuplicateViewId(u32),
    #[error("focal-plane tilt must stay below {MAX_TILT_DEG} degrees")]
    TiltOutOfRange,
    #[error("focal plane does not lie in front of the virtual camera")]
    PlaneBehindCamera,
    #[error("integral image has no valid pixels")]
    NoValidPixels,
    #[error(
        "focus objective is flat across the search grid; scene has no focusable heat sources"
    )]
    NoFocusSignal,
    #[error("invalid focus search: {0}")]
    InvalidSearch(String),
    #[error("footprint arguments require 0 <= o < h and non-negative sizes, got {0}")]
    InvalidFootprint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// One recorded single image and the pose it was taken from.
#[derive(Debug, Clone)]
pub struct View {
    pub id: u32,
    pub image: HdrImage,
    pub pose: Pose,
}

/// The set of single images recorded over one synthetic aperture.
///
/// Views are kept sorted by id so that per-pixel accumulation order is
/// independent of the order they were supplied in.
#[derive(Debug, Clone)]
pub struct LightFieldCapture {
    intrinsics: CameraIntrinsics,
    views: Vec<View>,
    aperture_size: f64,
}

impl LightFieldCapture {
    pub fn new(intrinsics: CameraIntrinsics, mut views: Vec<View>) -> Result<Self, LightFieldError> {
        if views.is_empty() {
            return Err(LightFieldError::EmptyCapture);
        }
        for view in &views {
            if view.image.width() != intrinsics.image_width
                || view.image.height() != intrinsics.image_height
            {
                return Err(LightFieldError::ViewSizeMismatch(view.id));
            }
        }
        views.sort_by_key(|v| v.id);
        if let Some(w) = views.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(LightFieldError::DuplicateViewId(w[0].id));
        }
        let aperture_size = Self::position_extent(&views);
        Ok(Self {
            intrinsics,
            views,
            aperture_size,
        })
    }

    /// Maximum horizontal extent of the view positions, per axis.
    fn position_extent(views: &[View]) -> f64 {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for v in views {
            min = min.inf(&v.pose.position);
            max = max.sup(&v.pose.position);
        }
        (max.x - min.x).max(max.y - min.y)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    /// Synthetic aperture size `a` in meters.
    pub fn aperture_size(&self) -> f64 {
        self.aperture_size
    }

    /// Writes views as `view_NNNN.pfm` plus a `poses.json` geometry document.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), LightFieldError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(ImageError::Io)?;
        let geometry = CaptureGeometry {
            intrinsics: self.intrinsics.clone(),
            poses: self
                .views
                .iter()
                .map(|v| PoseRecord::from_pose(v.id, &v.pose))
                .collect(),
        };
        let json = serde_json::to_string_pretty(&geometry).expect("geometry serializes");
        std::fs::write(dir.join("poses.json"), json).map_err(ImageError::Io)?;
        for view in &self.views {
            view.image
                .write_pfm(dir.join(format!("view_{:04}.pfm", view.id)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, LightFieldError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("poses.json")).map_err(ImageError::Io)?;
        let geometry: CaptureGeometry = serde_json::from_str(&text)
            .map_err(|e| ImageError::Format(format!("poses.json: {e}")))?;
        let mut views = Vec::with_capacity(geometry.poses.len());
        for rec in &geometry.poses {
            let image = HdrImage::read_pfm(dir.join(format!("view_{:04}.pfm", rec.id)))?;
            views.push(View {
                id: rec.id,
                image,
                pose: rec.to_pose()?,
            });
        }
        Self::new(geometry.intrinsics, views)
    }
}

/// Synthetic focal plane: a signed altitude offset from `z = 0` plus two tilt
/// angles about the virtual camera's horizontal and vertical image axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalPlane {
    /// Altitude of the plane where it crosses the virtual optical axis, m.
    pub altitude_offset: f64,
    /// Rotation about the virtual camera's horizontal image axis, degrees.
    #[serde(default)]
    pub tilt_x: f64,
    /// Rotation about the virtual camera's vertical image axis, degrees.
    #[serde(default)]
    pub tilt_y: f64,
}

impl FocalPlane {
    pub fn level(altitude_offset: f64) -> Self {
        Self {
            altitude_offset,
            tilt_x: 0.0,
            tilt_y: 0.0,
        }
    }

    pub fn new(altitude_offset: f64, tilt_x: f64, tilt_y: f64) -> Self {
        Self {
            altitude_offset,
            tilt_x,
            tilt_y,
        }
    }

    /// Offsets the plane by augmentation deltas.
    pub fn perturbed(&self, d_altitude: f64, d_tilt_x: f64, d_tilt_y: f64) -> Self {
        Self {
            altitude_offset: self.altitude_offset + d_altitude,
            tilt_x: self.tilt_x + d_tilt_x,
            tilt_y: self.tilt_y + d_tilt_y,
        }
    }

    /// Realizes the plane in world space. The pivot point is where the
    /// virtual camera's optical axis crosses `z = altitude_offset`; tilts
    /// rotate the plane normal about the camera's image axes through that
    /// point.
    pub fn to_plane(&self, virtual_pose: &Pose) -> Result<Plane, LightFieldError> {
        if self.tilt_x.abs() >= MAX_TILT_DEG || self.tilt_y.abs() >= MAX_TILT_DEG {
            return Err(LightFieldError::TiltOutOfRange);
        }
        let forward = virtual_pose.forward();
        if forward.z.abs() < 1e-12 {
            return Err(LightFieldError::PlaneBehindCamera);
        }
        let t = (self.altitude_offset - virtual_pose.position.z) / forward.z;
        if t <= 0.0 {
            return Err(LightFieldError::PlaneBehindCamera);
        }
        let pivot = virtual_pose.position + forward * t;
        let axis_x = virtual_pose.rotation.column(0).into_owned();
        let axis_y = virtual_pose.rotation.column(1).into_owned();
        let normal = rotation_about_axis(&axis_y, self.tilt_y)
            * rotation_about_axis(&axis_x, self.tilt_x)
            * Vector3::new(0.0, 0.0, 1.0);
        Ok(Plane::new(pivot, normal)?)
    }
}

/// Result of registering and averaging all views onto one focal plane.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    pub image: HdrImage,
    /// Per-pixel number of views that contributed; 0 marks an invalid pixel.
    pub count_map: Vec<u32>,
    pub virtual_camera: Camera,
    pub plane: FocalPlane,
}

impl IntegralImage {
    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.count_map[(y * self.image.width() + x) as usize] > 0
    }

    pub fn valid_pixels(&self) -> usize {
        self.count_map.iter().filter(|&&c| c > 0).count()
    }

    /// RMS difference against a reference over valid pixels only.
    pub fn rms_diff_valid(&self, reference: &HdrImage) -> f64 {
        assert_eq!(self.image.len(), reference.len());
        let mut sum = 0.0;
        let mut n = 0usize;
        for (idx, (&a, &b)) in self
            .image
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .enumerate()
        {
            if self.count_map[idx] > 0 {
                let d = a as f64 - b as f64;
                sum += d * d;
                n += 1;
            }
        }
        if n == 0 { 0.0 } else { (sum / n as f64).sqrt() }
    }

    pub fn save(&self, pfm_path: impl AsRef<Path>) -> Result<(), LightFieldError> {
        let pfm_path = pfm_path.as_ref();
        self.image.write_pfm(pfm_path)?;
        let count_path = pfm_path.with_extension("count.pgm");
        crate::image::write_count_pgm(
            &count_path,
            self.image.width(),
            self.image.height(),
            &self.count_map,
        )?;
        Ok(())
    }
}

/// Places a virtual camera at the centroid of the view positions, looking
/// straight down, with the image up-direction rotated by `up_angle_deg`
/// about the optical axis. The field of view matches the capture.
pub fn virtual_camera_at_center(capture: &LightFieldCapture, up_angle_deg: f64) -> Camera {
    let n = capture.views().len() as f64;
    let centroid = capture
        .views()
        .iter()
        .fold(Vector3::zeros(), |acc, v| acc + v.pose.position)
        / n;
    Camera::new(
        capture.intrinsics().clone(),
        Pose::nadir(centroid, up_angle_deg),
    )
}

/// Forms the integral image for one synthetic focal plane.
///
/// Per virtual pixel: back-project to the plane, project the plane point
/// into every view, bilinearly sample each view whose projection is
/// in-bounds and in front of its camera, and average. The per-pixel
/// summation order is the view id order, so results do not depend on thread
/// count or input ordering.
pub fn integrate(
    capture: &LightFieldCapture,
    plane: &FocalPlane,
    virtual_camera: &Camera,
) -> Result<IntegralImage, LightFieldError> {
    if capture.views().is_empty() {
        return Err(LightFieldError::EmptyCapture);
    }
    let world_plane = plane.to_plane(&virtual_camera.pose)?;
    let width = virtual_camera.intrinsics.image_width;
    let height = virtual_camera.intrinsics.image_height;

    let view_cameras: Vec<(Camera, &HdrImage)> = capture
        .views()
        .iter()
        .map(|v| {
            (
                Camera::new(capture.intrinsics().clone(), v.pose.clone()),
                &v.image,
            )
        })
        .collect();
    let mut samples = vec![0.0f32; (width * height) as usize];
    let mut counts = vec![0u32; (width * height) as usize];

    samples
        .par_chunks_mut(width as usize)
        .zip(counts.par_chunks_mut(width as usize))
        .enumerate()
        .for_each(|(j, (sample_row, count_row))| {
            for i in 0..width as usize {
                let ray = virtual_camera
                    .pixel_ray(i as f64 + 0.5, j as f64 + 0.5)
                    .expect("pixel centers are in bounds");
                let Some(hit) = intersect_plane(&ray, &world_plane) else {
                    continue;
                };
                let mut sum = 0.0f64;
                let mut count = 0u32;
                for (camera, image) in &view_cameras {
                    if let Some((px, _)) = camera.project_point(&hit)
                        && let Some(s) = image.sample_bilinear(px.x, px.y)
                    {
                        sum += s as f64;
                        count += 1;
                    }
                }
                if count > 0 {
                    sample_row[i] = (sum / count as f64) as f32;
                    count_row[i] = count;
                }
            }
        });

    Ok(IntegralImage {
        image: HdrImage::from_samples(width, height, samples)?,
        count_map: counts,
        virtual_camera: virtual_camera.clone(),
        plane: *plane,
    })
}

/// Integrates the capture for each plane in order.
pub fn focal_stack(
    capture: &LightFieldCapture,
    planes: &[FocalPlane],
    virtual_camera: &Camera,
) -> Result<Vec<IntegralImage>, LightFieldError> {
    planes
        .iter()
        .map(|p| integrate(capture, p, virtual_camera))
        .collect()
}

/// Mean squared gradient magnitude over valid pixels (forward differences;
/// a pixel contributes when itself and both forward neighbors are valid).
pub fn sharpness(integral: &IntegralImage) -> Result<f64, LightFieldError> {
    let w = integral.image.width();
    let h = integral.image.height();
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if integral.is_valid(x, y) && integral.is_valid(x + 1, y) && integral.is_valid(x, y + 1)
            {
                let c = integral.image.get(x, y) as f64;
                let gx = integral.image.get(x + 1, y) as f64 - c;
                let gy = integral.image.get(x, y + 1) as f64 - c;
                sum += gx * gx + gy * gy;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(LightFieldError::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Search ranges for [`optimize_focal_plane`]; ranges are symmetric around
/// zero. A zero tilt range searches level planes only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FocusSearch {
    pub dz_range: f64,
    pub dz_step: f64,
    #[serde(default)]
    pub tilt_range: f64,
    #[serde(default)]
    pub tilt_step: f64,
}

impl FocusSearch {
    fn grid(range: f64, step: f64) -> Vec<f64> {
        if range <= 0.0 || step <= 0.0 {
            return vec![0.0];
        }
        let n = (range / step + 1e-9).floor() as i64;
        (-n..=n).map(|k| k as f64 * step).collect()
    }
}

/// Grid search maximizing [`sharpness`], followed by golden-section
/// refinement of the altitude offset down to `dz_step / 10`. Ties on the
/// grid break toward smaller `|dz|`, then smaller total tilt. Deterministic.
pub fn optimize_focal_plane(
    capture: &LightFieldCapture,
    search: &FocusSearch,
    virtual_camera: &Camera,
) -> Result<FocalPlane, LightFieldError> {
    if capture.views().len() < 2 {
        return Err(LightFieldError::InvalidSearch(
            "focus optimization needs at least 2 views".into(),
        ));
    }
    if search.dz_step <= 0.0 || search.dz_range < 0.0 {
        return Err(LightFieldError::InvalidSearch(
            "dz_step must be positive and dz_range non-negative".into(),
        ));
    }

    let evaluate = |plane: &FocalPlane| -> Option<f64> {
        let integral = integrate(capture, plane, virtual_camera).ok()?;
        sharpness(&integral).ok()
    };

    let dz_grid = FocusSearch::grid(search.dz_range, search.dz_step);
    let tilt_grid = FocusSearch::grid(search.tilt_range, search.tilt_step);

    let mut best: Option<(f64, FocalPlane)> = None;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &dz in &dz_grid {
        for &tx in &tilt_grid {
            for &ty in &tilt_grid {
                let plane = FocalPlane::new(dz, tx, ty);
                let Some(s) = evaluate(&plane) else { continue };
                lo = lo.min(s);
                hi = hi.max(s);
                let better = match &best {
                    None => true,
                    Some((bs, bp)) => {
                        s > *bs
                            || (s == *bs
                                && (dz.abs(), tx.abs() + ty.abs())
                                    < (bp.altitude_offset.abs(), bp.tilt_x.abs() + bp.tilt_y.abs()))
                    }
                };
                if better {
                    best = Some((s, plane));
                }
            }
        }
    }

    let (mut best_score, mut best_plane) =
        best.ok_or_else(|| LightFieldError::InvalidSearch("no evaluable plane in range".into()))?;
    if hi - lo < FLAT_OBJECTIVE_TOL {
        return Err(LightFieldError::NoFocusSignal);
    }

    // Golden-section refinement on dz with tilts fixed at the grid optimum.
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let tol = search.dz_step / 10.0;
    let mut a = best_plane.altitude_offset - search.dz_step;
    let mut b = best_plane.altitude_offset + search.dz_step;
    let consider = |dz: f64, best_score: &mut f64, best_plane: &mut FocalPlane| -> f64 {
        let plane = FocalPlane::new(dz, best_plane.tilt_x, best_plane.tilt_y);
        let s = evaluate(&plane).unwrap_or(f64::NEG_INFINITY);
        if s > *best_score || (s == *best_score && dz.abs() < best_plane.altitude_offset.abs()) {
            *best_score = s;
            *best_plane = plane;
        }
        s
    };
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = consider(c, &mut best_score, &mut best_plane);
    let mut fd = consider(d, &mut best_score, &mut best_plane);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = consider(c, &mut best_score, &mut best_plane);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = consider(d, &mut best_score, &mut best_plane);
        }
    }
    Ok(best_plane)
}

/// Shifts each image additively so its mean equals the mean of all image
/// means. Compensates drifting non-radiometric sensor readings between
/// views of one scene.
pub fn normalize_means(images: &[HdrImage]) -> Vec<HdrImage> {
    if images.is_empty() {
        return Vec::new();
    }
    let means: Vec<f64> = images.iter().map(|img| img.mean()).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    images
        .iter()
        .zip(&means)
        .map(|(img, &m)| {
            let offset = (grand - m) as f32;
            let mut out = img.clone();
            for s in out.as_mut_slice() {
                *s += offset;
            }
            out
        })
        .collect()
}

/// Ground footprint diameter of a hypothetical point occluder at altitude
/// `o`, seen through a synthetic aperture of size `a` at altitude `h`:
/// `b = o * a / (h - o)`.
pub fn blur_footprint(o: f64, a: f64, h: f64) -> Result<f64, LightFieldError> {
    if !(o >= 0.0 && o < h) || a < 0.0 {
        return Err(LightFieldError::InvalidFootprint(format!(
            "o={o}, a={a}, h={h}"
        )));
    }
    Ok(o * a / (h - o))
}

/// Footprint of an occluder of physical size `w`, adding its projection onto
/// the focal plane: `b' = (o * a + w * h) / (h - o)`.
pub fn blur_footprint_sized(o: f64, a: f64, h: f64, w: f64) -> Result<f64, LightFieldError> {
    if w < 0.0 {
        return Err(LightFieldError::InvalidFootprint(format!("w={w}")));
    }
    Ok(blur_footprint(o, a, h)? + w * h / (h - o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_intrinsics(size: u32) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(50.82, size, size).unwrap()
    }

    fn checker_image(size: u32) -> HdrImage {
        HdrImage::from_fn(size, size, |x, y| {
            ((x / 3 + y / 5) % 2) as f32 * 4.0 + (x as f32) * 0.01
        })
    }

    fn single_view_capture(size: u32) -> (LightFieldCapture, Camera) {
        let intr = test_intrinsics(size);
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let capture = LightFieldCapture::new(
            intr.clone(),
            vec![View {
                id: 0,
                image: checker_image(size),
                pose: pose.clone(),
            }],
        )
        .unwrap();
        let camera = Camera::new(intr, pose);
        (capture, camera)
    }

    #[test]
    fn footprint_matches_closed_form() {
        let b = blur_footprint(2.0, 30.0, 35.0).unwrap();
        assert!((b - 60.0 / 33.0).abs() < 1e-12);
        assert!((b - 1.8).abs() < 0.02);
        assert_eq!(blur_footprint(0.0, 30.0, 35.0).unwrap(), 0.0);
        assert!((blur_footprint(5.0, 30.0, 35.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn footprint_rejects_occluder_at_or_above_camera() {
        assert!(blur_footprint(35.0, 30.0, 35.0).is_err());
        assert!(blur_footprint(40.0, 30.0, 35.0).is_err());
        assert!(blur_footprint(-1.0, 30.0, 35.0).is_err());
    }

    #[test]
    fn sized_footprint_reduces_to_point_form() {
        let b = blur_footprint(2.0, 30.0, 35.0).unwrap();
        let b0 = blur_footprint_sized(2.0, 30.0, 35.0, 0.0).unwrap();
        assert_eq!(b, b0);
        let b_sized = blur_footprint_sized(2.0, 30.0, 35.0, 0.5).unwrap();
        assert!((b_sized - 77.5 / 33.0).abs() < 1e-12);
        assert!((b_sized - 2.348).abs() < 0.001);
        // In-focus occluder projects at its own size.
        assert!((blur_footprint_sized(0.0, 30.0, 35.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_view_integral_is_resampling_identity() {
        let (capture, camera) = single_view_capture(32);
        let integral = integrate(&capture, &FocalPlane::level(0.0), &camera).unwrap();
        assert_eq!(integral.valid_pixels(), 32 * 32);
        let rms = integral.rms_diff_valid(&capture.views()[0].image);
        assert!(rms < 1e-5, "rms = {rms}");
    }

    #[test]
    fn repeated_views_average_to_the_same_image() {
        let intr = test_intrinsics(32);
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let views = (0..5)
            .map(|id| View {
                id,
                image: checker_image(32),
                pose: pose.clone(),
            })
            .collect();
        let capture = LightFieldCapture::new(intr.clone(), views).unwrap();
        let camera = Camera::new(intr, pose);
        let integral = integrate(&capture, &FocalPlane::level(0.0), &camera).unwrap();
        let rms = integral.rms_diff_valid(&checker_image(32));
        assert!(rms < 1e-5, "rms = {rms}");
        assert!(integral.count_map.iter().all(|&c| c == 5));
    }

    #[test]
    fn integral_counts_drop_where_views_do_not_overlap() {
        let intr = test_intrinsics(32);
        let offset_pose = Pose::nadir(Vector3::new(20.0, 0.0, 35.0), 0.0);
        let capture = LightFieldCapture::new(
            intr.clone(),
            vec![
                View {
                    id: 0,
                    image: checker_image(32),
                    pose: Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0),
                },
                View {
                    id: 1,
                    image: checker_image(32),
                    pose: offset_pose,
                },
            ],
        )
        .unwrap();
        let camera = virtual_camera_at_center(&capture, 0.0);
        let integral = integrate(&capture, &FocalPlane::level(0.0), &camera).unwrap();
        let counts: std::collections::HashSet<u32> = integral.count_map.iter().copied().collect();
        // Two 33 m footprints 20 m apart: some pixels see one view, some two.
        assert!(counts.contains(&1));
        assert!(counts.contains(&2));
    }

    #[test]
    fn integration_is_invariant_to_view_order() {
        let intr = test_intrinsics(24);
        let mk_view = |id: u32, x: f64| View {
            id,
            image: HdrImage::from_fn(24, 24, |i, j| ((i * 7 + j * 3 + id) % 13) as f32 * 0.37),
            pose: Pose::nadir(Vector3::new(x, 0.0, 35.0), 0.0),
        };
        let views_a = vec![mk_view(0, -2.0), mk_view(1, 0.0), mk_view(2, 2.0)];
        let views_b = vec![mk_view(2, 2.0), mk_view(0, -2.0), mk_view(1, 0.0)];
        let cap_a = LightFieldCapture::new(intr.clone(), views_a).unwrap();
        let cap_b = LightFieldCapture::new(intr.clone(), views_b).unwrap();
        let camera = virtual_camera_at_center(&cap_a, 0.0);
        let ia = integrate(&cap_a, &FocalPlane::level(0.0), &camera).unwrap();
        let ib = integrate(&cap_b, &FocalPlane::level(0.0), &camera).unwrap();
        assert_eq!(ia.image.as_slice(), ib.image.as_slice());
        assert_eq!(ia.count_map, ib.count_map);
    }

    #[test]
    fn integration_is_linear_in_image_content() {
        let intr = test_intrinsics(24);
        let pose_of = |x: f64| Pose::nadir(Vector3::new(x, 0.0, 35.0), 0.0);
        let img_a = |id: u32| HdrImage::from_fn(24, 24, |i, j| ((i + j + id) % 7) as f32);
        let img_b = |id: u32| HdrImage::from_fn(24, 24, |i, j| ((i * 2 + j + id) % 5) as f32);
        let (alpha, beta) = (2.0f32, -0.5f32);

        let mk_capture = |f: &dyn Fn(u32) -> HdrImage| {
            LightFieldCapture::new(
                intr.clone(),
                (0..3)
                    .map(|id| View {
                        id,
                        image: f(id),
                        pose: pose_of(id as f64 - 1.0),
                    })
                    .collect(),
            )
            .unwrap()
        };
        let cap_a = mk_capture(&img_a);
        let cap_b = mk_capture(&img_b);
        let cap_mix = mk_capture(&|id| {
            let a = img_a(id);
            let b = img_b(id);
            HdrImage::from_fn(24, 24, |x, y| alpha * a.get(x, y) + beta * b.get(x, y))
        });

        let camera = virtual_camera_at_center(&cap_a, 0.0);
        let plane = FocalPlane::level(0.0);
        let ia = integrate(&cap_a, &plane, &camera).unwrap();
        let ib = integrate(&cap_b, &plane, &camera).unwrap();
        let imix = integrate(&cap_mix, &plane, &camera).unwrap();
        for idx in 0..imix.image.len() {
            let expected =
                alpha as f64 * ia.image.as_slice()[idx] as f64 + beta as f64 * ib.image.as_slice()[idx] as f64;
            let got = imix.image.as_slice()[idx] as f64;
            assert!((got - expected).abs() < 1e-5, "pixel {idx}: {got} vs {expected}");
        }
    }

    #[test]
    fn rotated_up_vector_rotates_the_integral() {
        let (capture, _) = single_view_capture(32);
        let cam0 = virtual_camera_at_center(&capture, 0.0);
        let cam90 = virtual_camera_at_center(&capture, 90.0);
        let plane = FocalPlane::level(0.0);
        let i0 = integrate(&capture, &plane, &cam0).unwrap();
        let i90 = integrate(&capture, &plane, &cam90).unwrap();

        // Pixel (i, j) of the 90-degree render sees the same ground point as
        // a fixed index remap of the 0-degree render.
        let n = 32u32;
        let mut sum = 0.0;
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let (ri, rj) = (n - 1 - j, i);
                if i0.is_valid(i, j) && i90.is_valid(ri, rj) {
                    let d = i0.image.get(i, j) as f64 - i90.image.get(ri, rj) as f64;
                    sum += d * d;
                    count += 1;
                }
            }
        }
        assert!(count > 0);
        assert!((sum / count as f64).sqrt() < 1e-4);
    }

    #[test]
    fn virtual_camera_sits_at_centroid() {
        let intr = test_intrinsics(16);
        let views = [(-15.0, -15.0), (15.0, -15.0), (-15.0, 15.0), (15.0, 15.0)]
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| View {
                id: id as u32,
                image: HdrImage::new(16, 16, 0.0),
                pose: Pose::nadir(Vector3::new(x, y, 35.0), 0.0),
            })
            .collect();
        let capture = LightFieldCapture::new(intr, views).unwrap();
        let camera = virtual_camera_at_center(&capture, 0.0);
        assert!((camera.pose.position - Vector3::new(0.0, 0.0, 35.0)).norm() < 1e-12);
        assert!((camera.pose.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((capture.aperture_size() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn focal_stack_preserves_order_and_handles_empty() {
        let (capture, camera) = single_view_capture(16);
        let planes = vec![
            FocalPlane::level(-0.25),
            FocalPlane::level(0.0),
            FocalPlane::level(0.25),
        ];
        let stack = focal_stack(&capture, &planes, &camera).unwrap();
        assert_eq!(stack.len(), 3);
        for (integral, plane) in stack.iter().zip(&planes) {
            assert_eq!(integral.plane, *plane);
        }
        assert!(focal_stack(&capture, &[], &camera).unwrap().is_empty());
    }

    #[test]
    fn plane_behind_virtual_camera_is_rejected() {
        let (capture, camera) = single_view_capture(16);
        let plane = FocalPlane::level(40.0); // above the 35 m camera
        assert!(matches!(
            integrate(&capture, &plane, &camera),
            Err(LightFieldError::PlaneBehindCamera)
        ));
    }

    #[test]
    fn excessive_tilt_is_rejected() {
        let (capture, camera) = single_view_capture(16);
        let plane = FocalPlane::new(0.0, 50.0, 0.0);
        assert!(matches!(
            integrate(&capture, &plane, &camera),
            Err(LightFieldError::TiltOutOfRange)
        ));
    }

    #[test]
    fn sharpness_zero_for_constant_image() {
        let intr = test_intrinsics(16);
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let capture = LightFieldCapture::new(
            intr.clone(),
            vec![View {
                id: 0,
                image: HdrImage::new(16, 16, 3.5),
                pose: pose.clone(),
            }],
        )
        .unwrap();
        let integral = integrate(&capture, &FocalPlane::level(0.0), &Camera::new(intr, pose)).unwrap();
        assert_eq!(sharpness(&integral).unwrap(), 0.0);
    }

    #[test]
    fn sharpness_needs_valid_pixels() {
        let integral = IntegralImage {
            count_map: vec![0; 16 * 16],
            virtual_camera: Camera::new(
                test_intrinsics(16),
                Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0),
            ),
            plane: FocalPlane::level(0.0),
            image: HdrImage::new(16, 16, 0.0),
        };
        assert!(matches!(
            sharpness(&integral),
            Err(LightFieldError::NoValidPixels)
        ));
    }

    #[test]
    fn sharpness_decreases_under_blur() {
        let step = HdrImage::from_fn(32, 32, |x, _| if x < 16 { 0.0 } else { 1.0 });
        // 5-px horizontal box filter.
        let blurred = HdrImage::from_fn(32, 32, |x, y| {
            let mut acc = 0.0;
            for dx in -2i64..=2 {
                let xi = (x as i64 + dx).clamp(0, 31) as u32;
                acc += step.get(xi, y);
            }
            acc / 5.0
        });
        let wrap = |img: HdrImage| IntegralImage {
            count_map: vec![1; img.len()],
            virtual_camera: Camera::new(
                test_intrinsics(32),
                Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0),
            ),
            plane: FocalPlane::level(0.0),
            image: img,
        };
        let sharp = sharpness(&wrap(step)).unwrap();
        let soft = sharpness(&wrap(blurred)).unwrap();
        assert!(sharp > 0.0);
        assert!(sharp > soft, "sharp={sharp} soft={soft}");
    }

    #[test]
    fn normalize_means_examples() {
        let a = HdrImage::new(4, 4, 0.0);
        let b = HdrImage::new(4, 4, 10.0);
        let out = normalize_means(&[a.clone(), b]);
        assert!(out.iter().all(|img| (img.mean() - 5.0).abs() < 1e-6));
        assert!(out[0].as_slice().iter().all(|&s| (s - 5.0).abs() < 1e-6));

        let unchanged = normalize_means(std::slice::from_ref(&a));
        assert_eq!(unchanged[0], a);

        let identical = normalize_means(&[a.clone(), a.clone()]);
        assert_eq!(identical[0], a);
        assert_eq!(identical[1], a);
    }

    #[test]
    fn capture_rejects_empty_and_duplicate_ids() {
        let intr = test_intrinsics(16);
        assert!(matches!(
            LightFieldCapture::new(intr.clone(), vec![]),
            Err(LightFieldError::EmptyCapture)
        ));
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let v = |id| View {
            id,
            image: HdrImage::new(16, 16, 0.0),
            pose: pose.clone(),
        };
        assert!(matches!(
            LightFieldCapture::new(intr, vec![v(3), v(3)]),
            Err(LightFieldError::DuplicateViewId(3))
        ));
    }

    #[test]
    fn capture_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (capture, _) = single_view_capture(16);
        capture.save_dir(dir.path()).unwrap();
        let back = LightFieldCapture::load_dir(dir.path()).unwrap();
        assert_eq!(back.views().len(), 1);
        assert_eq!(back.views()[0].image, capture.views()[0].image);
        assert!((back.views()[0].pose.position - capture.views()[0].pose.position).norm() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// The point footprint grows strictly with occluder altitude and
            /// aperture size.
            #[test]
            fn footprint_monotonicity(
                o in 0.1..30.0f64,
                a in 0.1..60.0f64,
                h in 31.0..80.0f64,
            ) {
                let b = blur_footprint(o, a, h).unwrap();
                prop_assert!(blur_footprint(o + 0.5, a, h).unwrap() > b);
                prop_assert!(blur_footprint(o, a + 0.5, h).unwrap() > b);
            }
        }
    }
}
