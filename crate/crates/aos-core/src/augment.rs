//! Augmentation over integral and single images, plus 3D-label projection.
//!
//! Integral images are augmented by re-rendering: the virtual camera's
//! up-vector supplies rotation and the focal plane supplies focus jitter, so
//! no blank borders ever appear. Single images are augmented by raster
//! rotation with a border-free center crop. Either path can emit an
//! adaptive-histogram-equalized dual of every output, and everything ends as
//! tone-mapped 8-bit grayscale with per-image label files.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Camera;
use crate::image::{HdrImage, ImageError, LdrImage};
use crate::lightfield::{FocalPlane, LightFieldCapture, LightFieldError, integrate, virtual_camera_at_center};
use crate::simulator::Label3D;

/// Focus-altitude jitter grid, meters.
pub const FOCUS_DZ_GRID: [f64; 3] = [-0.25, 0.0, 0.25];
/// Focal-plane tilt jitter grid, degrees.
pub const FOCUS_TILT_GRID: [f64; 3] = [-2.0, 0.0, 2.0];
/// Histogram bins used for HDR adaptive equalization.
pub const AHE_DEFAULT_BINS: usize = 512;
/// Clipped AABBs smaller than this fraction of their unclipped area are
/// discarded.
pub const MIN_CLIP_FRACTION: f64 = 0.25;

const AHE_TILES: usize = 8;
const AHE_CLIP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("occlusion density must lie in [0, 1], got {0}")]
    InvalidDensity(f64),
    #[error("image is entirely covered by labels; no background values to sample")]
    NoBackgroundSamples,
    #[error(transparent)]
    LightField(#[from] LightFieldError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Option<Self> {
        let b = Self { min, max };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.min[0] < self.max[0] && self.min[1] < self.max[1]
    }

    pub fn from_points(points: impl IntoIterator<Item = [f64; 2]>) -> Option<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for [x, y] in points {
            min[0] = min[0].min(x);
            min[1] = min[1].min(y);
            max[0] = max[0].max(x);
            max[1] = max[1].max(y);
        }
        Self::new(min, max)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }

    /// Intersection with another box, if non-degenerate.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        BoundingBox::new(
            [
                self.min[0].max(other.min[0]),
                self.min[1].max(other.min[1]),
            ],
            [
                self.max[0].min(other.max[0]),
                self.max[1].min(other.max[1]),
            ],
        )
    }

    /// Clips to an image of the given size.
    pub fn clip_to_image(&self, width: u32, height: u32) -> Option<BoundingBox> {
        self.intersection(&BoundingBox {
            min: [0.0, 0.0],
            max: [width as f64, height as f64],
        })
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x < self.max[0] && y >= self.min[1] && y < self.max[1]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.min[0], self.min[1]],
            [self.max[0], self.min[1]],
            [self.max[0], self.max[1]],
            [self.min[0], self.max[1]],
        ]
    }
}

/// A ground-truth box carrying its person identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub bbox: BoundingBox,
    pub person_id: u32,
}

/// One tuple of the augmentation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub up_angle: f64,
    pub dz: f64,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub ahe: bool,
}

/// Whether augmented outputs are emitted plain, equalized, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AheMode {
    Off,
    On,
    Both,
}

impl AheMode {
    fn variants(self) -> &'static [bool] {
        match self {
            AheMode::Off => &[false],
            AheMode::On => &[true],
            AheMode::Both => &[false, true],
        }
    }
}

impl std::str::FromStr for AheMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(AheMode::Off),
            "on" => Ok(AheMode::On),
            "both" => Ok(AheMode::Both),
            other => Err(format!("unknown AHE mode {other:?} (off|on|both)")),
        }
    }
}

/// Uniform random image-up angles in `[0, 360)` degrees.
pub fn random_rotation_angles(count: u32, rng: &mut impl Rng) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(0.0..360.0)).collect()
}

/// Seeded convenience wrapper around [`random_rotation_angles`].
pub fn seeded_rotation_angles(count: u32, seed: u64) -> Vec<f64> {
    random_rotation_angles(count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// The fixed augmentation grid: `rotations` random up-angles crossed with
/// the 27 focus variations (3 altitudes x 3 x-tilts x 3 y-tilts). The same
/// angles are shared across all focus variants, so the default 10 rotations
/// yield exactly 270 tuples.
pub fn generate_augmentation_set(rotations: u32, rng: &mut impl Rng) -> Vec<AugmentationParams> {
    let angles = random_rotation_angles(rotations, rng);
    let mut params = Vec::with_capacity(angles.len() * 27);
    for &up_angle in &angles {
        for &dz in &FOCUS_DZ_GRID {
            for &tilt_x in &FOCUS_TILT_GRID {
                for &tilt_y in &FOCUS_TILT_GRID {
                    params.push(AugmentationParams {
                        up_angle,
                        dz,
                        tilt_x,
                        tilt_y,
                        ahe: false,
                    });
                }
            }
        }
    }
    params
}

/// Doubles a parameter list into plain/AHE pairs (the "540 images" set).
pub fn with_ahe_duals(params: &[AugmentationParams]) -> Vec<AugmentationParams> {
    params
        .iter()
        .flat_map(|p| {
            [
                AugmentationParams { ahe: false, ..*p },
                AugmentationParams { ahe: true, ..*p },
            ]
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization on HDR values.
///
/// 8x8 tile grid, per-tile histograms over `bins` bins spanning the global
/// value range, clip limit 0.01 of the tile pixel count with uniform
/// redistribution, and bilinear interpolation between tile mappings. Output
/// values lie in `[0, 1]`.
pub fn ahe(image: &HdrImage, bins: usize) -> HdrImage {
    let bins = bins.max(2);
    let width = image.width() as usize;
    let height = image.height() as usize;
    let tiles_x = AHE_TILES.min(width);
    let tiles_y = AHE_TILES.min(height);

    let (lo, hi) = image.min_max();
    let range = (hi - lo) as f64;
    let bin_of = |v: f32| -> usize {
        if range <= 0.0 {
            return 0;
        }
        (((v - lo) as f64 / range) * bins as f64)
            .floor()
            .clamp(0.0, (bins - 1) as f64) as usize
    };

    // Tile boundaries by even integer division.
    let x_bound = |i: usize| i * width / tiles_x;
    let y_bound = |j: usize| j * height / tiles_y;

    // Per-tile equalization mapping: bin index -> [0, 1].
    let mut luts = vec![vec![0.0f64; bins]; tiles_x * tiles_y];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (x0, x1) = (x_bound(tx), x_bound(tx + 1));
            let (y0, y1) = (y_bound(ty), y_bound(ty + 1));
            let count = (x1 - x0) * (y1 - y0);
            let mut hist = vec![0u64; bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(image.get(x as u32, y as u32))] += 1;
                }
            }
            // Clip at the average bin fill plus 1% of the tile pixel count,
            // so the limit never undercuts a uniform histogram.
            let clip = (count as u64).div_ceil(bins as u64)
                + (AHE_CLIP_FRACTION * count as f64) as u64;
            clip_histogram(&mut hist, clip.max(1));
            let lut = &mut luts[ty * tiles_x + tx];
            let mut cdf = 0u64;
            for (b, h) in hist.iter().enumerate() {
                cdf += h;
                lut[b] = cdf as f64 / count as f64;
            }
        }
    }

    // Interpolation coordinates between tile centers, clamped at the rim.
    let centers = |bound: &dyn Fn(usize) -> usize, tiles: usize| -> Vec<f64> {
        (0..tiles)
            .map(|i| (bound(i) + bound(i + 1)) as f64 / 2.0)
            .collect()
    };
    let cx = centers(&x_bound, tiles_x);
    let cy = centers(&y_bound, tiles_y);
    let locate = |pos: f64, centers: &[f64]| -> (usize, usize, f64) {
        if pos <= centers[0] {
            return (0, 0, 0.0);
        }
        if pos >= *centers.last().unwrap() {
            let last = centers.len() - 1;
            return (last, last, 0.0);
        }
        let i = centers.partition_point(|&c| c <= pos) - 1;
        let t = (pos - centers[i]) / (centers[i + 1] - centers[i]);
        (i, i + 1, t)
    };

    HdrImage::from_fn(image.width(), image.height(), |x, y| {
        let (ix0, ix1, tx) = locate(x as f64 + 0.5, &cx);
        let (iy0, iy1, ty) = locate(y as f64 + 0.5, &cy);
        let b = bin_of(image.get(x, y));
        let v00 = luts[iy0 * tiles_x + ix0][b];
        let v10 = luts[iy0 * tiles_x + ix1][b];
        let v01 = luts[iy1 * tiles_x + ix0][b];
        let v11 = luts[iy1 * tiles_x + ix1][b];
        let top = v00 + (v10 - v00) * tx;
        let bot = v01 + (v11 - v01) * tx;
        (top + (bot - top) * ty) as f32
    })
}

/// Clips histogram bins at `limit` and redistributes the excess uniformly,
/// spreading any residual round-robin.
fn clip_histogram(hist: &mut [u64], limit: u64) {
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    if excess == 0 {
        return;
    }
    let bins = hist.len() as u64;
    let batch = excess / bins;
    let mut residual = (excess % bins) as usize;
    for h in hist.iter_mut() {
        *h += batch;
    }
    if let Some(step) = hist.len().checked_div(residual) {
        let step = step.max(1);
        let mut i = 0;
        while i < hist.len() && residual > 0 {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
}

/// Linear tone mapping of the full value range to 8 bits, rounding half up.
/// A constant image maps to all zeros.
pub fn tone_map(image: &HdrImage) -> LdrImage {
    let (lo, hi) = image.min_max();
    let range = (hi - lo) as f64;
    let mut out = LdrImage::new(image.width(), image.height(), 0);
    if range <= 0.0 {
        return out;
    }
    let scale = 255.0 / range;
    for (dst, &src) in out.as_mut_slice().iter_mut().zip(image.as_slice()) {
        let v = ((src - lo) as f64 * scale + 0.5).floor();
        *dst = v.clamp(0.0, 255.0) as u8;
    }
    out
}

/// Why a label produced no box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropReason {
    /// At least one contour vertex sits at or behind the camera plane.
    BehindCamera,
    /// The clipped AABB fell below [`MIN_CLIP_FRACTION`] of its full size.
    Clipped { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroppedLabel {
    pub person_id: u32,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default)]
pub struct ProjectedLabels {
    pub boxes: Vec<LabeledBox>,
    pub dropped: Vec<DroppedLabel>,
}

/// Projects 3D polygonal contours into a camera and converts them to
/// axis-aligned boxes: project every vertex, take the AABB, clip to the
/// image, and discard labels whose clipped area is under 25% of the
/// unclipped one. Labels behind the camera are dropped with a warning
/// record rather than an error.
pub fn project_labels(labels: &[Label3D], camera: &Camera) -> ProjectedLabels {
    let mut out = ProjectedLabels::default();
    'labels: for label in labels {
        let mut points = Vec::with_capacity(label.polygon.len());
        for vertex in label.vertices() {
            match camera.project_point(&vertex) {
                Some((px, _)) => points.push([px.x, px.y]),
                None => {
                    out.dropped.push(DroppedLabel {
                        person_id: label.person_id,
                        reason: DropReason::BehindCamera,
                    });
                    continue 'labels;
                }
            }
        }
        let Some(full) = BoundingBox::from_points(points) else {
            out.dropped.push(DroppedLabel {
                person_id: label.person_id,
                reason: DropReason::Clipped { fraction: 0.0 },
            });
            continue;
        };
        let clipped = full.clip_to_image(
            camera.intrinsics.image_width,
            camera.intrinsics.image_height,
        );
        let fraction = clipped.map_or(0.0, |c| c.area() / full.area());
        match clipped {
            Some(c) if fraction >= MIN_CLIP_FRACTION => out.boxes.push(LabeledBox {
                bbox: c,
                person_id: label.person_id,
            }),
            _ => out.dropped.push(DroppedLabel {
                person_id: label.person_id,
                reason: DropReason::Clipped { fraction },
            }),
        }
    }
    out
}

/// Result of occlusion-patch augmentation: the painted image and the pixel
/// fraction actually covered (the loop stops at the first crossing of the
/// target, so the overshoot is bounded by one rectangle).
#[derive(Debug, Clone)]
pub struct OccludedImage {
    pub image: LdrImage,
    pub covered_fraction: f64,
}

/// Paints random background-valued rectangles until the covered pixel
/// fraction reaches `density`. Rectangle sides are uniform in 1..=35 px and
/// fill values are drawn uniformly from pixels outside every label box.
pub fn simulate_occlusion_patch(
    image: &LdrImage,
    labels: &[BoundingBox],
    density: f64,
    rng: &mut impl Rng,
) -> Result<OccludedImage, AugmentError> {
    if !(0.0..=1.0).contains(&density) {
        return Err(AugmentError::InvalidDensity(density));
    }
    let width = image.width();
    let height = image.height();
    let total = (width * height) as usize;

    let mut out = image.clone();
    if density == 0.0 {
        return Ok(OccludedImage {
            image: out,
            covered_fraction: 0.0,
        });
    }

    let background: Vec<u8> = (0..total)
        .filter_map(|idx| {
            let x = (idx as u32 % width) as f64 + 0.5;
            let y = (idx as u32 / width) as f64 + 0.5;
            let labeled = labels.iter().any(|b| b.contains_point(x, y));
            (!labeled).then(|| image.as_slice()[idx])
        })
        .collect();
    if background.is_empty() {
        return Err(AugmentError::NoBackgroundSamples);
    }

    let max_w = width.min(35);
    let max_h = height.min(35);
    let mut mask = vec![false; total];
    let mut covered = 0usize;
    while (covered as f64) < density * total as f64 {
        let w = rng.random_range(1..=max_w);
        let h = rng.random_range(1..=max_h);
        let x0 = rng.random_range(0..=width - w);
        let y0 = rng.random_range(0..=height - h);
        let value = background[rng.random_range(0..background.len())];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let idx = (y * width + x) as usize;
                if !mask[idx] {
                    mask[idx] = true;
                    covered += 1;
                }
                out.set(x, y, value);
            }
        }
    }
    Ok(OccludedImage {
        image: out,
        covered_fraction: covered as f64 / total as f64,
    })
}

/// Forward map of a raster rotation: source pixel coordinates to coordinates
/// in the border-free center crop.
#[derive(Debug, Clone, Copy)]
pub struct RotationTransform {
    pub angle_deg: f64,
    pub src_size: (u32, u32),
    pub crop_size: (u32, u32),
}

impl RotationTransform {
    pub fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        let theta = self.angle_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let cx = self.src_size.0 as f64 / 2.0;
        let cy = self.src_size.1 as f64 / 2.0;
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        [
            c * dx - s * dy + self.crop_size.0 as f64 / 2.0,
            s * dx + c * dy + self.crop_size.1 as f64 / 2.0,
        ]
    }
}

/// Largest axis-aligned rectangle inside a `w x h` rectangle rotated by
/// `angle_deg`, so the crop contains no out-of-frame samples.
fn rotated_crop_size(w: u32, h: u32, angle_deg: f64) -> (u32, u32) {
    let mut theta = angle_deg.to_radians().abs() % std::f64::consts::PI;
    if theta > std::f64::consts::FRAC_PI_2 {
        theta = std::f64::consts::PI - theta;
    }
    let (s, c) = theta.sin_cos();
    if s < 1e-12 {
        return (w, h);
    }
    let (wf, hf) = (w as f64, h as f64);
    let (long, short) = if wf >= hf { (wf, hf) } else { (hf, wf) };
    let (cw, ch) = if short <= 2.0 * s * c * long {
        let x = 0.5 * short;
        if wf >= hf { (x / s, x / c) } else { (x / c, x / s) }
    } else {
        let cos2 = c * c - s * s;
        ((wf * c - hf * s) / cos2, (hf * c - wf * s) / cos2)
    };
    ((cw.floor() as u32).max(1), (ch.floor() as u32).max(1))
}

/// Rotates about the image center with bilinear resampling and crops to the
/// largest centered rectangle free of out-of-frame samples. Multiples of 90
/// degrees on square images are exact index remaps.
pub fn rotate_image(image: &HdrImage, angle_deg: f64) -> (HdrImage, RotationTransform) {
    let w = image.width();
    let h = image.height();
    let norm = angle_deg.rem_euclid(360.0);

    let exact_quarter = (norm % 90.0).abs() < 1e-12 && (w == h || norm % 180.0 == 0.0);
    if exact_quarter {
        let transform = RotationTransform {
            angle_deg: norm,
            src_size: (w, h),
            crop_size: (w, h),
        };
        let quarters = (norm / 90.0).round() as u32 % 4;
        let rotated = HdrImage::from_fn(w, h, |x, y| match quarters {
            0 => image.get(x, y),
            1 => image.get(y, h - 1 - x),
            2 => image.get(w - 1 - x, h - 1 - y),
            _ => image.get(w - 1 - y, x),
        });
        return (rotated, transform);
    }

    let crop_size = rotated_crop_size(w, h, norm);
    let transform = RotationTransform {
        angle_deg: norm,
        src_size: (w, h),
        crop_size,
    };
    let theta = norm.to_radians();
    let (s, c) = theta.sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (ox, oy) = (crop_size.0 as f64 / 2.0, crop_size.1 as f64 / 2.0);
    let rotated = HdrImage::from_fn(crop_size.0, crop_size.1, |x, y| {
        let dx = x as f64 + 0.5 - ox;
        let dy = y as f64 + 0.5 - oy;
        // Inverse rotation back into the source frame.
        let sx = (c * dx + s * dy + cx).clamp(0.0, w as f64);
        let sy = (-s * dx + c * dy + cy).clamp(0.0, h as f64);
        image.sample_bilinear(sx, sy).unwrap_or(0.0)
    });
    (rotated, transform)
}

/// Maps label boxes through a rotation as polygons, recomputes AABBs in the
/// cropped frame, and applies the same clip-or-discard rule as projection.
pub fn transform_labels(transform: &RotationTransform, labels: &[LabeledBox]) -> Vec<LabeledBox> {
    labels
        .iter()
        .filter_map(|label| {
            let full = BoundingBox::from_points(
                label.bbox.corners().map(|c| transform.map_point(c)),
            )?;
            let clipped = full.clip_to_image(transform.crop_size.0, transform.crop_size.1)?;
            (clipped.area() / full.area() >= MIN_CLIP_FRACTION).then_some(LabeledBox {
                bbox: clipped,
                person_id: label.person_id,
            })
        })
        .collect()
}

/// One augmented output: tone-mapped image plus its label boxes.
#[derive(Debug, Clone)]
pub struct AugmentedImage {
    pub name: String,
    pub params: AugmentationParams,
    pub image: LdrImage,
    pub labels: Vec<LabeledBox>,
}

/// Integral-image augmentation: re-renders the capture for every parameter
/// tuple (rotation via the virtual up-vector, focus via plane perturbation),
/// projects the 3D labels through the same virtual camera, and emits
/// tone-mapped outputs with optional AHE duals. Returns the emitted count.
pub fn augment_integral_set(
    capture: &LightFieldCapture,
    base_plane: &FocalPlane,
    labels: &[Label3D],
    rotations: u32,
    ahe_mode: AheMode,
    seed: u64,
    mut emit: impl FnMut(AugmentedImage) -> Result<(), AugmentError>,
) -> Result<usize, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params_list = generate_augmentation_set(rotations, &mut rng);
    let mut emitted = 0usize;
    for (idx, params) in params_list.iter().enumerate() {
        let camera = virtual_camera_at_center(capture, params.up_angle);
        let plane = base_plane.perturbed(params.dz, params.tilt_x, params.tilt_y);
        let integral = integrate(capture, &plane, &camera)?;
        let boxes = project_labels(labels, &camera).boxes;
        for &use_ahe in ahe_mode.variants() {
            let ldr = if use_ahe {
                tone_map(&ahe(&integral.image, AHE_DEFAULT_BINS))
            } else {
                tone_map(&integral.image)
            };
            emit(AugmentedImage {
                name: format!("aug_{idx:03}{}", if use_ahe { "_ahe" } else { "" }),
                params: AugmentationParams {
                    ahe: use_ahe,
                    ..*params
                },
                image: ldr,
                labels: boxes.clone(),
            })?;
            emitted += 1;
        }
    }
    Ok(emitted)
}

/// Single-image augmentation: projects the 3D labels into the view, rotates
/// raster and labels together (focus variations do not apply), then emits
/// tone-mapped outputs with optional AHE duals.
pub fn augment_single_set(
    image: &HdrImage,
    labels: &[Label3D],
    camera: &Camera,
    angles: &[f64],
    ahe_mode: AheMode,
    name_stem: &str,
    mut emit: impl FnMut(AugmentedImage) -> Result<(), AugmentError>,
) -> Result<usize, AugmentError> {
    let projected = project_labels(labels, camera).boxes;
    let mut emitted = 0usize;
    for (idx, &angle) in angles.iter().enumerate() {
        let (rotated, transform) = rotate_image(image, angle);
        let boxes = transform_labels(&transform, &projected);
        for &use_ahe in ahe_mode.variants() {
            let ldr = if use_ahe {
                tone_map(&ahe(&rotated, AHE_DEFAULT_BINS))
            } else {
                tone_map(&rotated)
            };
            emit(AugmentedImage {
                name: format!(
                    "{name_stem}_rot{idx:02}{}",
                    if use_ahe { "_ahe" } else { "" }
                ),
                params: AugmentationParams {
                    up_angle: angle,
                    dz: 0.0,
                    tilt_x: 0.0,
                    tilt_y: 0.0,
                    ahe: use_ahe,
                },
                image: ldr,
                labels: boxes.clone(),
            })?;
            emitted += 1;
        }
    }
    Ok(emitted)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    class: String,
    bbox: [f64; 4],
    person_id: u32,
}

/// Writes label boxes as JSON lines: `{"class": "person", "bbox": [xmin,
/// ymin, xmax, ymax], "person_id": id}`.
pub fn write_labels_jsonl(
    labels: &[LabeledBox],
    writer: &mut impl Write,
) -> Result<(), ImageError> {
    for label in labels {
        let record = LabelRecord {
            class: "person".into(),
            bbox: [
                label.bbox.min[0],
                label.bbox.min[1],
                label.bbox.max[0],
                label.bbox.max[1],
            ],
            person_id: label.person_id,
        };
        let line = serde_json::to_string(&record).expect("label record serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn save_labels_jsonl(labels: &[LabeledBox], path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_labels_jsonl(labels, &mut file)
}

pub fn load_labels_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledBox>, ImageError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut labels = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| ImageError::Format(format!("label line: {e}")))?;
        let bbox = BoundingBox::new([record.bbox[0], record.bbox[1]], [record.bbox[2], record.bbox[3]])
            .ok_or_else(|| ImageError::Format("degenerate label box".into()))?;
        labels.push(LabeledBox {
            bbox,
            person_id: record.person_id,
        });
    }
    Ok(labels)
}
