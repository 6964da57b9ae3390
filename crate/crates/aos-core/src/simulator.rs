//! Procedural occluded-scene generator and per-view thermal renderer.
//!
//! A scene is a flat ground temperature field (ambient plus warm person
//! polygons), an opaque occluder layer at a single altitude, and optional
//! per-pixel sensor noise. Occluder patches are placed by a Poisson process
//! with intensity `-ln(1 - D) / w^2`, the Boolean-model rate that makes the
//! expected uncovered ground fraction exactly `1 - D` including patch
//! overlap. Everything is deterministic given the scene seed.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, CameraIntrinsics, Plane, Pose, intersect_plane};
use crate::image::{HdrImage, ImageError};
use crate::lightfield::{FocalPlane, LightFieldCapture, LightFieldError, View, normalize_means};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("occlusion density must lie in [0, 1), got {0}")]
    InvalidDensity(f64),
    #[error("occluder width must be positive, got {0}")]
    InvalidOccluderWidth(f64),
    #[error("occluder altitude must be non-negative, got {0}")]
    InvalidOccluderAltitude(f64),
    #[error("scene extent must be positive, got {0}")]
    InvalidExtent(f64),
    #[error("person {0}: polygon needs at least 3 vertices")]
    DegeneratePolygon(usize),
    #[error("person {0}: polygon is self-intersecting")]
    SelfIntersectingPolygon(usize),
    #[error("person {0}: polygon leaves the scene extent")]
    PersonOutsideExtent(usize),
    #[error("camera altitude {camera} is not above the occluder layer at {layer}")]
    CameraBelowOccluders { camera: f64, layer: f64 },
    #[error("scan spacings and aperture must be positive")]
    InvalidScan,
    #[error(transparent)]
    LightField(#[from] LightFieldError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Statistical description of the occluder layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccluderLayer {
    /// Target covered ground-area fraction `D` in `[0, 1)`.
    pub density: f64,
    /// Altitude of the layer above ground level, meters.
    pub altitude: f64,
    /// Side length of the square occluder patches, meters.
    pub width: f64,
    /// Mean of the per-patch temperature draw.
    pub temp_mean: f64,
    /// Standard deviation of the per-patch temperature draw.
    pub temp_stddev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonSpec {
    /// Ground-plane polygon vertices, meters.
    pub polygon: Vec<[f64; 2]>,
    pub temperature: f64,
}

/// Procedural ground-truth world description; serializable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Side length of the square ground region centered on the origin.
    pub extent: f64,
    pub ambient_temp: f64,
    /// Altitude of the ground plane; the focal-plane optimizer should
    /// recover this value.
    #[serde(default)]
    pub ground_z: f64,
    pub persons: Vec<PersonSpec>,
    pub occluder_layer: OccluderLayer,
    pub ground_noise_stddev: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, SimulatorError> {
        let text = std::fs::read_to_string(path).map_err(ImageError::Io)?;
        serde_json::from_str(&text)
            .map_err(|e| SimulatorError::Image(ImageError::Format(format!("scene spec: {e}"))))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), SimulatorError> {
        let text = serde_json::to_string_pretty(self).expect("scene spec serializes");
        std::fs::write(path, text).map_err(ImageError::Io)?;
        Ok(())
    }
}

/// One opaque isothermal square patch of the occluder layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderPatch {
    pub center: [f64; 2],
    pub size: f64,
    pub temperature: f64,
}

impl OccluderPatch {
    #[inline]
    fn covers(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= self.size / 2.0 && (y - self.center[1]).abs() <= self.size / 2.0
    }
}

/// All occluder patches of a scene plus a uniform grid index for point
/// queries.
#[derive(Debug, Clone)]
pub struct OccluderField {
    /// Altitude above ground level shared by every patch.
    altitude_agl: f64,
    patches: Vec<OccluderPatch>,
    cell_size: f64,
    grid_min: Vector2<f64>,
    grid_cols: usize,
    grid_rows: usize,
    cells: Vec<Vec<u32>>,
}

impl OccluderField {
    pub fn from_patches(patches: Vec<OccluderPatch>, altitude_agl: f64) -> Self {
        let max_size = patches
            .iter()
            .map(|p| p.size)
            .fold(0.0f64, f64::max)
            .max(1e-6);
        let (mut min, mut max) = (
            Vector2::new(f64::INFINITY, f64::INFINITY),
            Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in &patches {
            min.x = min.x.min(p.center[0]);
            min.y = min.y.min(p.center[1]);
            max.x = max.x.max(p.center[0]);
            max.y = max.y.max(p.center[1]);
        }
        if patches.is_empty() {
            min = Vector2::zeros();
            max = Vector2::zeros();
        }
        let cell_size = max_size;
        let grid_cols = (((max.x - min.x) / cell_size).floor() as usize + 1).max(1);
        let grid_rows = (((max.y - min.y) / cell_size).floor() as usize + 1).max(1);
        let mut cells = vec![Vec::new(); grid_cols * grid_rows];
        for (idx, p) in patches.iter().enumerate() {
            let cx = (((p.center[0] - min.x) / cell_size) as usize).min(grid_cols - 1);
            let cy = (((p.center[1] - min.y) / cell_size) as usize).min(grid_rows - 1);
            cells[cy * grid_cols + cx].push(idx as u32);
        }
        Self {
            altitude_agl,
            patches,
            cell_size,
            grid_min: min,
            grid_cols,
            grid_rows,
            cells,
        }
    }

    pub fn altitude_agl(&self) -> f64 {
        self.altitude_agl
    }

    pub fn patches(&self) -> &[OccluderPatch] {
        &self.patches
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Index of the first patch (in placement order) covering the point at
    /// the layer altitude, if any.
    pub fn covered(&self, x: f64, y: f64) -> Option<&OccluderPatch> {
        if self.patches.is_empty() {
            return None;
        }
        let fx = (x - self.grid_min.x) / self.cell_size;
        let fy = (y - self.grid_min.y) / self.cell_size;
        let cx = fx.floor() as i64;
        let cy = fy.floor() as i64;
        let mut best: Option<u32> = None;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let gx = cx + dx;
                let gy = cy + dy;
                if gx < 0 || gy < 0 || gx as usize >= self.grid_cols || gy as usize >= self.grid_rows
                {
                    continue;
                }
                for &idx in &self.cells[gy as usize * self.grid_cols + gx as usize] {
                    if self.patches[idx as usize].covers(x, y)
                        && best.is_none_or(|b| idx < b)
                    {
                        best = Some(idx);
                    }
                }
            }
        }
        best.map(|idx| &self.patches[idx as usize])
    }
}

/// Ground-truth polygonal contour of one person, lifted to 3D.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Label3D {
    pub person_id: u32,
    /// Vertices in meters; planar on the ground (or focal) plane.
    pub polygon: Vec<[f64; 3]>,
}

impl Label3D {
    pub fn vertices(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.polygon.iter().map(|v| Vector3::from(*v))
    }
}

pub fn save_labels_json(labels: &[Label3D], path: impl AsRef<Path>) -> Result<(), SimulatorError> {
    let text = serde_json::to_string_pretty(labels).expect("labels serialize");
    std::fs::write(path, text).map_err(ImageError::Io)?;
    Ok(())
}

pub fn load_labels_json(path: impl AsRef<Path>) -> Result<Vec<Label3D>, SimulatorError> {
    let text = std::fs::read_to_string(path).map_err(ImageError::Io)?;
    serde_json::from_str(&text)
        .map_err(|e| SimulatorError::Image(ImageError::Format(format!("labels: {e}"))))
}

/// A realized scene: spec plus concrete occluder geometry and labels.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub occluders: OccluderField,
    pub labels: Vec<Label3D>,
    person_aabbs: Vec<(Vector2<f64>, Vector2<f64>)>,
}

impl Scene {
    /// Realizes the statistical occlusion model as concrete patch geometry.
    ///
    /// Patch centers follow a Poisson process over the extent enlarged by one
    /// patch width per side, so coverage is unbiased up to the region edge.
    pub fn build(spec: SceneSpec) -> Result<Self, SimulatorError> {
        validate_spec(&spec)?;
        let layer = &spec.occluder_layer;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let mut patches = Vec::new();
        if layer.density > 0.0 {
            let intensity = -(1.0 - layer.density).ln() / (layer.width * layer.width);
            let half = spec.extent / 2.0 + layer.width;
            let area = (2.0 * half) * (2.0 * half);
            let count = Poisson::new(intensity * area)
                .expect("finite positive poisson rate")
                .sample(&mut rng) as u64;
            let temp = Normal::new(layer.temp_mean, layer.temp_stddev)
                .map_err(|_| SimulatorError::InvalidDensity(layer.temp_stddev))?;
            patches.reserve(count as usize);
            for _ in 0..count {
                let x = rng.random_range(-half..half);
                let y = rng.random_range(-half..half);
                let t = temp.sample(&mut rng).max(spec.ambient_temp);
                patches.push(OccluderPatch {
                    center: [x, y],
                    size: layer.width,
                    temperature: t,
                });
            }
        }
        let occluders = OccluderField::from_patches(patches, layer.altitude);
        Ok(Self::assemble(spec, occluders))
    }

    /// Builds a scene around a hand-crafted occluder field, keeping the
    /// spec's ground model. Used for controlled footprint experiments.
    pub fn with_occluders(
        spec: SceneSpec,
        patches: Vec<OccluderPatch>,
    ) -> Result<Self, SimulatorError> {
        validate_spec(&spec)?;
        let altitude = spec.occluder_layer.altitude;
        Ok(Self::assemble(spec, OccluderField::from_patches(patches, altitude)))
    }

    fn assemble(spec: SceneSpec, occluders: OccluderField) -> Self {
        let labels = spec
            .persons
            .iter()
            .enumerate()
            .map(|(id, p)| Label3D {
                person_id: id as u32,
                polygon: p
                    .polygon
                    .iter()
                    .map(|&[x, y]| [x, y, spec.ground_z])
                    .collect(),
            })
            .collect();
        let person_aabbs = spec
            .persons
            .iter()
            .map(|p| polygon_aabb(&p.polygon))
            .collect();
        Self {
            spec,
            occluders,
            labels,
            person_aabbs,
        }
    }

    /// Absolute altitude of the occluder layer.
    pub fn occluder_altitude(&self) -> f64 {
        self.spec.ground_z + self.occluders.altitude_agl()
    }

    /// Ground temperature field at a world coordinate: person polygons
    /// override ambient.
    pub fn ground_temperature(&self, x: f64, y: f64) -> f64 {
        for (person, (lo, hi)) in self.spec.persons.iter().zip(&self.person_aabbs) {
            if x >= lo.x && x <= hi.x && y >= lo.y && y <= hi.y
                && point_in_polygon(x, y, &person.polygon)
            {
                return person.temperature;
            }
        }
        self.spec.ambient_temp
    }
}

fn validate_spec(spec: &SceneSpec) -> Result<(), SimulatorError> {
    if spec.extent <= 0.0 || !spec.extent.is_finite() {
        return Err(SimulatorError::InvalidExtent(spec.extent));
    }
    let layer = &spec.occluder_layer;
    if !(0.0..1.0).contains(&layer.density) {
        return Err(SimulatorError::InvalidDensity(layer.density));
    }
    if layer.width <= 0.0 || !layer.width.is_finite() {
        return Err(SimulatorError::InvalidOccluderWidth(layer.width));
    }
    if layer.altitude < 0.0 {
        return Err(SimulatorError::InvalidOccluderAltitude(layer.altitude));
    }
    let half = spec.extent / 2.0;
    for (idx, person) in spec.persons.iter().enumerate() {
        if person.polygon.len() < 3 {
            return Err(SimulatorError::DegeneratePolygon(idx));
        }
        if !polygon_is_simple(&person.polygon) {
            return Err(SimulatorError::SelfIntersectingPolygon(idx));
        }
        if person
            .polygon
            .iter()
            .any(|&[x, y]| x.abs() > half || y.abs() > half)
        {
            return Err(SimulatorError::PersonOutsideExtent(idx));
        }
    }
    Ok(())
}

/// Renders one single image: rays hitting an occluder patch read the patch
/// temperature; all other rays read the ground field plus per-pixel noise.
pub fn render_single(
    scene: &Scene,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
) -> Result<HdrImage, SimulatorError> {
    let z_occ = scene.occluder_altitude();
    if !scene.occluders.is_empty() && pose.position.z <= z_occ {
        return Err(SimulatorError::CameraBelowOccluders {
            camera: pose.position.z,
            layer: z_occ,
        });
    }
    let camera = Camera::new(intrinsics.clone(), pose.clone());
    let occluder_plane = Plane::horizontal(z_occ);
    let ground_plane = Plane::horizontal(scene.spec.ground_z);
    let width = intrinsics.image_width;
    let height = intrinsics.image_height;
    let sigma = scene.spec.ground_noise_stddev;
    let mut samples = vec![0.0f32; (width * height) as usize];
    for (idx, out) in samples.iter_mut().enumerate() {
        let x = (idx as u32 % width) as f64 + 0.5;
        let y = (idx as u32 / width) as f64 + 0.5;
        let ray = camera.pixel_ray(x, y).expect("pixel centers in bounds");
        if !scene.occluders.is_empty()
            && let Some(hit) = intersect_plane(&ray, &occluder_plane)
            && let Some(patch) = scene.occluders.covered(hit.x, hit.y)
        {
            *out = patch.temperature as f32;
            continue;
        }
        let value = match intersect_plane(&ray, &ground_plane) {
            Some(hit) => {
                let mut v = scene.ground_temperature(hit.x, hit.y);
                if sigma > 0.0 {
                    v += sigma * pixel_noise(scene.spec.rng_seed, pose, idx as u64);
                }
                v
            }
            None => scene.spec.ambient_temp,
        };
        *out = value as f32;
    }
    Ok(HdrImage::from_samples(width, height, samples)?)
}

/// The unoccluded, noise-free reference: the ground field sampled where each
/// pixel ray meets the focal plane. An integral of a zero-density capture
/// converges to this image.
pub fn render_ground_truth(
    scene: &Scene,
    camera: &Camera,
    plane: &FocalPlane,
) -> Result<HdrImage, SimulatorError> {
    let world_plane = plane.to_plane(&camera.pose)?;
    let width = camera.intrinsics.image_width;
    let height = camera.intrinsics.image_height;
    let img = HdrImage::from_fn(width, height, |x, y| {
        let ray = camera
            .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
            .expect("pixel centers in bounds");
        match intersect_plane(&ray, &world_plane) {
            Some(hit) => scene.ground_temperature(hit.x, hit.y) as f32,
            None => scene.spec.ambient_temp as f32,
        }
    });
    Ok(img)
}

/// Serpentine grid of nadir poses covering a square aperture of side `a`:
/// flight lines `line_spacing` apart, one pose every `along_spacing`, all at
/// the given altitude.
pub fn plan_grid_scan(
    aperture: f64,
    along_spacing: f64,
    line_spacing: f64,
    altitude: f64,
) -> Result<Vec<Pose>, SimulatorError> {
    if !(aperture > 0.0 && along_spacing > 0.0 && line_spacing > 0.0) {
        return Err(SimulatorError::InvalidScan);
    }
    let n_lines = (aperture / line_spacing + 1e-9).floor() as usize + 1;
    let n_along = (aperture / along_spacing + 1e-9).floor() as usize + 1;
    let half = aperture / 2.0;
    let mut poses = Vec::with_capacity(n_lines * n_along);
    for line in 0..n_lines {
        let y = -half + line as f64 * line_spacing;
        for step in 0..n_along {
            // Serpentine: odd lines fly back.
            let k = if line % 2 == 0 {
                step
            } else {
                n_along - 1 - step
            };
            let x = -half + k as f64 * along_spacing;
            poses.push(Pose::nadir(Vector3::new(x, y, altitude), 0.0));
        }
    }
    Ok(poses)
}

/// Renders every pose of a scan and bundles the views into a capture with
/// mean-normalized intensities.
pub fn capture_scene(
    scene: &Scene,
    scan: &[Pose],
    intrinsics: &CameraIntrinsics,
) -> Result<LightFieldCapture, SimulatorError> {
    let images: Result<Vec<HdrImage>, SimulatorError> = scan
        .par_iter()
        .map(|pose| render_single(scene, intrinsics, pose))
        .collect();
    let images = normalize_means(&images?);
    let views = images
        .into_iter()
        .zip(scan)
        .enumerate()
        .map(|(id, (image, pose))| View {
            id: id as u32,
            image,
            pose: pose.clone(),
        })
        .collect();
    Ok(LightFieldCapture::new(intrinsics.clone(), views)?)
}

/// Even-odd point-in-polygon test; edges are half-open so shared boundaries
/// do not double count.
pub fn point_in_polygon(x: f64, y: f64, polygon: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    for i in 0..n {
        let [x0, y0] = polygon[i];
        let [x1, y1] = polygon[(i + 1) % n];
        if (y0 > y) != (y1 > y) {
            let t = (y - y0) / (y1 - y0);
            if x < x0 + t * (x1 - x0) {
                inside = !inside;
            }
        }
    }
    inside
}

fn polygon_aabb(polygon: &[[f64; 2]]) -> (Vector2<f64>, Vector2<f64>) {
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &[x, y] in polygon {
        lo.x = lo.x.min(x);
        lo.y = lo.y.min(y);
        hi.x = hi.x.max(x);
        hi.y = hi.y.max(y);
    }
    (lo, hi)
}

/// True when no two non-adjacent edges intersect.
fn polygon_is_simple(polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    for i in 0..n {
        for j in i + 1..n {
            // Skip adjacent edges (they share a vertex).
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let a = (polygon[i], polygon[(i + 1) % n]);
            let b = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a.0, a.1, b.0, b.1) {
                return false;
            }
        }
    }
    true
}

fn segments_intersect(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q0, q1, p0);
    let d2 = orient(q0, q1, p1);
    let d3 = orient(p0, p1, q0);
    let d4 = orient(p0, p1, q1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Deterministic standard-normal noise for one (scene, pose, pixel) triple.
/// Order-independent so parallel renders reproduce bit-identically.
fn pixel_noise(seed: u64, pose: &Pose, pixel_index: u64) -> f64 {
    let base = mix64(&[
        seed,
        pose.position.x.to_bits(),
        pose.position.y.to_bits(),
        pose.position.z.to_bits(),
        pixel_index,
    ]);
    let u1 = unit_open(splitmix64(base ^ 0x9e37_79b9_7f4a_7c15));
    let u2 = unit_open(splitmix64(base ^ 0xd1b5_4a32_d192_ed03));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mix64(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Maps a hash to the open interval (0, 1).
fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec(density: f64, seed: u64) -> SceneSpec {
        SceneSpec {
            extent: 30.0,
            ambient_temp: 0.0,
            ground_z: 0.0,
            persons: vec![],
            occluder_layer: OccluderLayer {
                density,
                altitude: 2.0,
                width: 0.5,
                temp_mean: 100.0,
                temp_stddev: 0.0,
            },
            ground_noise_stddev: 0.0,
            rng_seed: seed,
        }
    }

    fn square_person(cx: f64, cy: f64, half: f64, temperature: f64) -> PersonSpec {
        PersonSpec {
            polygon: vec![
                [cx - half, cy - half],
                [cx + half, cy - half],
                [cx + half, cy + half],
                [cx - half, cy + half],
            ],
            temperature,
        }
    }

    /// Paints every patch into a bitmap over the extent; independent of the
    /// field's grid-index query path.
    fn rasterized_coverage(scene: &Scene, resolution_m: f64) -> f64 {
        let half = scene.spec.extent / 2.0;
        let n = (scene.spec.extent / resolution_m).round() as usize;
        let mut mask = vec![false; n * n];
        for patch in scene.occluders.patches() {
            let r = patch.size / 2.0;
            let x0 = (((patch.center[0] - r + half) / resolution_m).floor().max(0.0)) as usize;
            let x1 = (((patch.center[0] + r + half) / resolution_m).ceil()).min(n as f64) as usize;
            let y0 = (((patch.center[1] - r + half) / resolution_m).floor().max(0.0)) as usize;
            let y1 = (((patch.center[1] + r + half) / resolution_m).ceil()).min(n as f64) as usize;
            for y in y0..y1 {
                let py = -half + (y as f64 + 0.5) * resolution_m;
                for x in x0..x1 {
                    let px = -half + (x as f64 + 0.5) * resolution_m;
                    if patch.covers(px, py) {
                        mask[y * n + x] = true;
                    }
                }
            }
        }
        mask.iter().filter(|&&m| m).count() as f64 / (n * n) as f64
    }

    #[test]
    fn zero_density_scene_has_no_patches() {
        let scene = Scene::build(base_spec(0.0, 1)).unwrap();
        assert!(scene.occluders.is_empty());
    }

    #[test]
    fn full_density_is_rejected() {
        assert!(matches!(
            Scene::build(base_spec(1.0, 1)),
            Err(SimulatorError::InvalidDensity(_))
        ));
        assert!(Scene::build(base_spec(-0.1, 1)).is_err());
    }

    #[test]
    fn equal_seeds_build_identical_occluders() {
        let a = Scene::build(base_spec(0.5, 42)).unwrap();
        let b = Scene::build(base_spec(0.5, 42)).unwrap();
        assert_eq!(a.occluders.patches(), b.occluders.patches());
        let c = Scene::build(base_spec(0.5, 43)).unwrap();
        assert_ne!(a.occluders.patches(), c.occluders.patches());
    }

    #[test]
    fn realized_coverage_matches_density() {
        let scene = Scene::build(base_spec(0.5, 7)).unwrap();
        let coverage = rasterized_coverage(&scene, 0.01);
        assert!(
            (coverage - 0.5).abs() <= 0.02,
            "coverage = {coverage:.4}, want 0.5 +- 0.02"
        );
    }

    #[test]
    fn grid_query_agrees_with_brute_force() {
        let scene = Scene::build(base_spec(0.3, 99)).unwrap();
        let patches = scene.occluders.patches();
        for k in 0..2000 {
            let x = -16.0 + (k % 50) as f64 * 0.64 + (k as f64 * 0.013).sin();
            let y = -16.0 + (k / 50) as f64 * 0.8;
            let brute = patches.iter().find(|p| p.covers(x, y));
            let grid = scene.occluders.covered(x, y);
            assert_eq!(
                brute.map(|p| p.center),
                grid.map(|p| p.center),
                "mismatch at ({x}, {y})"
            );
        }
    }

    #[test]
    fn unoccluded_uniform_scene_renders_constant() {
        let scene = Scene::build(base_spec(0.0, 1)).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 32, 32).unwrap();
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let img = render_single(&scene, &intr, &pose).unwrap();
        assert!(img.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn person_polygon_reads_person_temperature() {
        let mut spec = base_spec(0.0, 1);
        spec.persons = vec![square_person(0.0, 0.0, 2.0, 37.0)];
        let scene = Scene::build(spec).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 32, 32).unwrap();
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let img = render_single(&scene, &intr, &pose).unwrap();
        assert_eq!(img.get(16, 16), 37.0);
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn camera_below_occluder_layer_is_rejected() {
        let scene = Scene::build(base_spec(0.5, 1)).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 16, 16).unwrap();
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 1.5), 0.0);
        assert!(matches!(
            render_single(&scene, &intr, &pose),
            Err(SimulatorError::CameraBelowOccluders { .. })
        ));
    }

    #[test]
    fn occluder_hit_fraction_matches_density() {
        // Narrow FOV keeps every sampled occluder-plane point inside the
        // populated region.
        let scene = Scene::build(base_spec(0.5, 11)).unwrap();
        let intr = CameraIntrinsics::from_fov(20.0, 32, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0u64;
        let mut total = 0u64;
        for _ in 0..360 {
            let pose = Pose::nadir(
                Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 35.0),
                0.0,
            );
            let img = render_single(&scene, &intr, &pose).unwrap();
            hits += img.as_slice().iter().filter(|&&v| v == 100.0).count() as u64;
            total += img.len() as u64;
        }
        let fraction = hits as f64 / total as f64;
        assert!(
            (fraction - 0.5).abs() <= 0.03,
            "occluded fraction {fraction:.4}, want 0.5 +- 0.03"
        );
    }

    #[test]
    fn ground_truth_equals_unoccluded_render() {
        let mut spec = base_spec(0.0, 3);
        spec.persons = vec![square_person(1.0, -2.0, 1.5, 30.0)];
        let scene = Scene::build(spec).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 32, 32).unwrap();
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let camera = Camera::new(intr.clone(), pose.clone());
        let gt = render_ground_truth(&scene, &camera, &FocalPlane::level(0.0)).unwrap();
        let single = render_single(&scene, &intr, &pose).unwrap();
        assert_eq!(gt, single);
        // Person area carries exactly the person temperature.
        assert_eq!(gt.get(16, 16), 30.0);
    }

    #[test]
    fn grid_scan_counts_and_geometry() {
        let poses = plan_grid_scan(30.0, 1.0, 3.0, 35.0).unwrap();
        assert_eq!(poses.len(), 341); // 11 lines x 31 poses
        assert!(poses.iter().all(|p| p.position.z == 35.0));
        assert!(
            poses
                .iter()
                .all(|p| (p.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12)
        );
        let corners = plan_grid_scan(30.0, 30.0, 30.0, 35.0).unwrap();
        assert_eq!(corners.len(), 4);
        // Serpentine: second line runs right-to-left.
        let wide = plan_grid_scan(2.0, 1.0, 1.0, 35.0).unwrap();
        assert_eq!(wide[3].position.x, 1.0);
        assert_eq!(wide[5].position.x, -1.0);
    }

    #[test]
    fn capture_scene_bundles_and_normalizes() {
        let mut spec = base_spec(0.0, 3);
        spec.persons = vec![square_person(0.0, 0.0, 1.0, 20.0)];
        let scene = Scene::build(spec).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 16, 16).unwrap();

        let single = capture_scene(&scene, &plan_grid_scan(1.0, 1.0, 1.0, 35.0).unwrap()[..1], &intr)
            .unwrap();
        assert_eq!(single.views().len(), 1);

        let scan = plan_grid_scan(10.0, 5.0, 5.0, 35.0).unwrap();
        let capture = capture_scene(&scene, &scan, &intr).unwrap();
        let means: Vec<f64> = capture.views().iter().map(|v| v.image.mean()).collect();
        for m in &means {
            assert!((m - means[0]).abs() < 1e-6, "means diverge: {means:?}");
        }
    }

    #[test]
    fn renders_are_reproducible_with_noise() {
        let mut spec = base_spec(0.5, 21);
        spec.ground_noise_stddev = 0.5;
        let scene = Scene::build(spec).unwrap();
        let intr = CameraIntrinsics::from_fov(50.82, 32, 32).unwrap();
        let pose = Pose::nadir(Vector3::new(1.0, 2.0, 35.0), 0.0);
        let a = render_single(&scene, &intr, &pose).unwrap();
        let b = render_single(&scene, &intr, &pose).unwrap();
        assert_eq!(a, b);
        // A different pose decorrelates the noise field.
        let other = render_single(&scene, &intr, &Pose::nadir(Vector3::new(0.0, 2.0, 35.0), 0.0))
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn scene_spec_validation() {
        let mut spec = base_spec(0.5, 1);
        spec.persons = vec![PersonSpec {
            polygon: vec![[0.0, 0.0], [1.0, 0.0]],
            temperature: 30.0,
        }];
        assert!(matches!(
            Scene::build(spec),
            Err(SimulatorError::DegeneratePolygon(0))
        ));

        let mut spec = base_spec(0.5, 1);
        spec.persons = vec![PersonSpec {
            // Bowtie.
            polygon: vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]],
            temperature: 30.0,
        }];
        assert!(matches!(
            Scene::build(spec),
            Err(SimulatorError::SelfIntersectingPolygon(0))
        ));

        let mut spec = base_spec(0.5, 1);
        spec.persons = vec![square_person(15.0, 0.0, 2.0, 30.0)];
        assert!(matches!(
            Scene::build(spec),
            Err(SimulatorError::PersonOutsideExtent(0))
        ));

        let mut spec = base_spec(0.5, 1);
        spec.occluder_layer.width = 0.0;
        assert!(Scene::build(spec).is_err());
    }

    #[test]
    fn scene_spec_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let mut spec = base_spec(0.25, 9);
        spec.persons = vec![square_person(1.0, 1.0, 0.5, 36.5)];
        spec.save_json(&path).unwrap();
        let back = SceneSpec::load_json(&path).unwrap();
        assert_eq!(back.rng_seed, 9);
        assert_eq!(back.persons.len(), 1);
        assert_eq!(back.occluder_layer.density, 0.25);
    }

    #[test]
    fn ground_shift_moves_the_field() {
        let mut spec = base_spec(0.0, 1);
        spec.ground_z = 0.4;
        spec.persons = vec![square_person(0.0, 0.0, 1.5, 25.0)];
        let scene = Scene::build(spec).unwrap();
        assert_eq!(scene.labels[0].polygon[0][2], 0.4);
        let intr = CameraIntrinsics::from_fov(50.82, 16, 16).unwrap();
        let pose = Pose::nadir(Vector3::new(0.0, 0.0, 35.0), 0.0);
        let img = render_single(&scene, &intr, &pose).unwrap();
        assert_eq!(img.get(8, 8), 25.0);
    }
}
