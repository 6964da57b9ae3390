//! The two-arm comparison pipeline.
//!
//! One run builds a scene, captures the synthetic-aperture scan once, and
//! evaluates person detection both ways: (i) integrate all views into one
//! integral image and detect on it, and (ii) detect on every single image
//! and average the per-image results. Artifacts land under the output root
//! in `captures/`, `integrals/`, `detections/`, `labels/`, and `reports/`,
//! and a `manifest.json` records hashes, timings, the seed, and summary
//! scores.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result, bail};
use serde::{Deserialize, Serialize};

use aos_core::augment::{
    AHE_DEFAULT_BINS, AheMode, ahe, augment_integral_set, project_labels, save_labels_jsonl,
    tone_map,
};
use aos_core::detector::{DetectorConfig, detect_blobs};
use aos_core::eval::{EvalConfig, EvalReport, ReportMode, scene_report};
use aos_core::geometry::{Camera, CameraIntrinsics};
use aos_core::lightfield::{
    FocalPlane, FocusSearch, LightFieldCapture, integrate, optimize_focal_plane,
    virtual_camera_at_center,
};
use aos_core::simulator::{Scene, SceneSpec, capture_scene, plan_grid_scan, save_labels_json};

use crate::layout::{collect_scene_entries, write_detections, write_labels};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    pub aperture: f64,
    pub along_spacing: f64,
    pub line_spacing: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Test-time equalization mode; `both` enables the dual-pass merge.
    pub ahe: AheMode,
    /// Rotations used by the `augment` subcommand's training-set emission.
    pub rotations: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ahe: AheMode::Both,
            rotations: 10,
        }
    }
}

fn default_fov() -> f64 {
    50.82
}

fn default_resolution() -> [u32; 2] {
    [512, 512]
}

/// Full description of one reproducible pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Path to the scene-spec JSON, relative to the config file.
    pub scene_spec: PathBuf,
    pub scan: ScanConfig,
    pub altitude: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_resolution")]
    pub resolution: [u32; 2],
    /// Focal-plane search; `None` uses the scene's nominal ground plane.
    #[serde(default)]
    pub focus_search: Option<FocusSearch>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Overrides the scene spec's seed when set.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    /// Also emit the augmented training set under `augmented/`.
    #[serde(default)]
    pub emit_augmented: bool,
    /// Also dump every rendered view as PFM (large; off by default).
    #[serde(default)]
    pub save_view_rasters: bool,
    #[serde(default)]
    pub output_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let scene = config.resolve(&base);
        if !scene.is_file() {
            bail!("scene spec {} does not exist", scene.display());
        }
        Ok((config, base))
    }

    fn resolve(&self, base: &Path) -> PathBuf {
        if self.scene_spec.is_absolute() {
            self.scene_spec.clone()
        } else {
            base.join(&self.scene_spec)
        }
    }
}

/// Outcome of a pipeline run: both evaluation reports plus the headline gap.
pub struct PipelineSummary {
    pub scene_id: String,
    pub focal_plane: FocalPlane,
    pub integral: EvalReport,
    pub single: EvalReport,
    pub manifest_path: PathBuf,
}

impl PipelineSummary {
    /// Pooled AP of the integral arm.
    pub fn integral_ap(&self) -> Option<f64> {
        self.integral.pooled.ap
    }

    /// Mean per-image AP of the single-image arm.
    pub fn single_mean_ap(&self) -> Option<f64> {
        self.single.mean_scene_ap
    }
}

struct StageClock<'a> {
    manifest: &'a mut Manifest,
}

impl StageClock<'_> {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().with_context(|| format!("stage `{stage}`"))?;
        self.manifest.record_timing(stage, start.elapsed());
        Ok(out)
    }
}

/// Executes the full two-arm pipeline. On error the partial manifest (with
/// a failure status) is still written next to whatever was produced.
pub fn run_pipeline(config: &RunConfig, config_dir: &Path, out_root: &Path) -> Result<PipelineSummary> {
    let seed = config.rng_seed;
    let mut manifest = Manifest::new(seed.unwrap_or(0));
    match run_pipeline_inner(config, config_dir, out_root, &mut manifest) {
        Ok(summary) => Ok(summary),
        Err(err) => {
            manifest.status = format!("failed: {err:#}");
            std::fs::create_dir_all(out_root).ok();
            manifest.write(&out_root.join("manifest.json")).ok();
            Err(err)
        }
    }
}

fn run_pipeline_inner(
    config: &RunConfig,
    config_dir: &Path,
    out_root: &Path,
    manifest: &mut Manifest,
) -> Result<PipelineSummary> {
    let scene_path = config.resolve(config_dir);
    let mut spec = SceneSpec::load_json(&scene_path)
        .with_context(|| format!("loading scene spec {}", scene_path.display()))?;
    if let Some(seed) = config.rng_seed {
        spec.rng_seed = seed;
    }
    manifest.rng_seed = spec.rng_seed;
    let scene_id = scene_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());

    config.detector.validate().map_err(anyhow::Error::msg)?;
    std::fs::create_dir_all(out_root)?;
    let mut clock = StageClock { manifest };

    // Scene and capture, shared by both arms.
    let scene = clock.run("build_scene", || Ok(Scene::build(spec.clone())?))?;
    let intrinsics = CameraIntrinsics::from_fov(
        config.fov_deg,
        config.resolution[0],
        config.resolution[1],
    )?;
    let scan = plan_grid_scan(
        config.scan.aperture,
        config.scan.along_spacing,
        config.scan.line_spacing,
        config.altitude,
    )?;
    let capture: LightFieldCapture =
        clock.run("capture", || Ok(capture_scene(&scene, &scan, &intrinsics)?))?;

    let captures_dir = out_root.join("captures");
    std::fs::create_dir_all(&captures_dir)?;
    spec.save_json(captures_dir.join("scene.json"))?;
    save_labels_json(&scene.labels, captures_dir.join("labels.json"))?;
    if config.save_view_rasters {
        capture.save_dir(&captures_dir)?;
    }

    // Integral arm: focus, integrate, detect.
    let virtual_camera = virtual_camera_at_center(&capture, 0.0);
    let focal_plane = clock.run("focus", || {
        Ok(match &config.focus_search {
            Some(search) => optimize_focal_plane(&capture, search, &virtual_camera)?,
            None => FocalPlane::level(scene.spec.ground_z),
        })
    })?;

    let integrals_dir = out_root.join("integrals");
    std::fs::create_dir_all(&integrals_dir)?;
    let dets_root = out_root.join("detections");
    let labels_root = out_root.join("labels");

    clock.run("integral_arm", || {
        let integral = integrate(&capture, &focal_plane, &virtual_camera)?;
        integral.save(integrals_dir.join("integral.pfm"))?;
        let ldr = tone_map(&integral.image);
        ldr.write_pgm(integrals_dir.join("integral.pgm"))?;

        let dets = detect_blobs(&ldr, &config.detector, &scene_id);
        write_detections(&dets_root.join("integral"), &scene_id, &dets)?;
        if matches!(config.augment.ahe, AheMode::On | AheMode::Both) {
            let equalized = tone_map(&ahe(&integral.image, AHE_DEFAULT_BINS));
            equalized.write_pgm(integrals_dir.join("integral_ahe.pgm"))?;
            let dets_ahe = detect_blobs(&equalized, &config.detector, &scene_id);
            write_detections(&dets_root.join("integral_ahe"), &scene_id, &dets_ahe)?;
        }
        let labels = project_labels(&scene.labels, &virtual_camera).boxes;
        write_labels(&labels_root.join("integral"), &scene_id, &labels)?;
        Ok(())
    })?;

    // Optional training-set emission: 27 focus variations per rotation,
    // re-rendered around the chosen plane, with AHE duals and label files.
    if config.emit_augmented {
        clock.run("augment", || {
            let aug_dir = out_root.join("augmented");
            std::fs::create_dir_all(&aug_dir)?;
            augment_integral_set(
                &capture,
                &focal_plane,
                &scene.labels,
                config.augment.rotations,
                config.augment.ahe,
                spec.rng_seed,
                |img| {
                    img.image
                        .write_pgm(aug_dir.join(format!("{}.pgm", img.name)))
                        .map_err(aos_core::augment::AugmentError::Image)?;
                    save_labels_jsonl(&img.labels, aug_dir.join(format!("{}.jsonl", img.name)))
                        .map_err(aos_core::augment::AugmentError::Image)?;
                    Ok(())
                },
            )?;
            Ok(())
        })?;
    }

    // Single-image arm: detect on every view.
    clock.run("single_arm", || {
        let single_dets = dets_root.join("single").join(&scene_id);
        let single_ahe = dets_root.join("single_ahe").join(&scene_id);
        let single_labels = labels_root.join("single").join(&scene_id);
        for view in capture.views() {
            let stem = format!("view_{:04}", view.id);
            let camera = Camera::new(capture.intrinsics().clone(), view.pose.clone());
            let ldr = tone_map(&view.image);
            let dets = detect_blobs(&ldr, &config.detector, &stem);
            write_detections(&single_dets, &stem, &dets)?;
            if matches!(config.augment.ahe, AheMode::On | AheMode::Both) {
                let equalized = tone_map(&ahe(&view.image, AHE_DEFAULT_BINS));
                let dets_ahe = detect_blobs(&equalized, &config.detector, &stem);
                write_detections(&single_ahe, &stem, &dets_ahe)?;
            }
            let labels = project_labels(&scene.labels, &camera).boxes;
            write_labels(&single_labels, &stem, &labels)?;
        }
        Ok(())
    })?;

    // Evaluate both arms from the files just written, exactly as the
    // standalone `evaluate` subcommand would. Mode `on` scores the
    // equalized pass alone; `both` merges the two passes via NMS.
    let image_size = (config.resolution[0], config.resolution[1]);
    let arm_dirs = |arm: &str| -> (PathBuf, Option<PathBuf>) {
        match config.augment.ahe {
            AheMode::Off => (dets_root.join(arm), None),
            AheMode::On => (dets_root.join(format!("{arm}_ahe")), None),
            AheMode::Both => (
                dets_root.join(arm),
                Some(dets_root.join(format!("{arm}_ahe"))),
            ),
        }
    };
    let reports_dir = out_root.join("reports");
    std::fs::create_dir_all(&reports_dir)?;
    let (integral_report, single_report) = clock.run("evaluate", || {
        let (integral_dets, integral_ahe) = arm_dirs("integral");
        let integral_scenes = collect_scene_entries(
            &integral_dets,
            &labels_root.join("integral"),
            integral_ahe.as_deref(),
            ReportMode::Integral,
            image_size,
        )?;
        let integral_report = scene_report(&integral_scenes, &config.eval, ReportMode::Integral);

        let (single_dets, single_ahe) = arm_dirs("single");
        let single_scenes = collect_scene_entries(
            &single_dets,
            &labels_root.join("single"),
            single_ahe.as_deref(),
            ReportMode::Single,
            image_size,
        )?;
        let single_report = scene_report(&single_scenes, &config.eval, ReportMode::Single);

        std::fs::write(
            reports_dir.join("integral_report.txt"),
            integral_report.format_table(),
        )?;
        std::fs::write(reports_dir.join("integral_report.csv"), integral_report.to_csv())?;
        std::fs::write(reports_dir.join("integral_pr.csv"), integral_report.pr_curve_csv())?;
        std::fs::write(
            reports_dir.join("single_report.txt"),
            single_report.format_table(),
        )?;
        std::fs::write(reports_dir.join("single_report.csv"), single_report.to_csv())?;
        std::fs::write(reports_dir.join("single_pr.csv"), single_report.pr_curve_csv())?;
        Ok((integral_report, single_report))
    })?;

    let comparison = format_comparison(&scene_id, &focal_plane, &integral_report, &single_report);
    std::fs::write(reports_dir.join("compare.txt"), &comparison)?;

    clock.manifest.record_result("scene_id", &scene_id);
    clock.manifest.record_result("focal_plane", focal_plane);
    clock
        .manifest
        .record_result("integral_pooled_ap", integral_report.pooled.ap);
    clock
        .manifest
        .record_result("single_mean_ap", single_report.mean_scene_ap);
    clock
        .manifest
        .record_result("single_pooled_ap", single_report.pooled.ap);

    // Hash every artifact written under the output root.
    let mut written = Vec::new();
    collect_files(out_root, &mut written)?;
    written.sort();
    for file in &written {
        clock.manifest.record_file(out_root, file)?;
    }
    clock.manifest.status = "ok".to_string();
    let manifest_path = clock.manifest.write(&out_root.join("manifest.json"))?;

    Ok(PipelineSummary {
        scene_id,
        focal_plane,
        integral: integral_report,
        single: single_report,
        manifest_path,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// The side-by-side comparison block printed by `aos compare`.
pub fn format_comparison(
    scene_id: &str,
    focal_plane: &FocalPlane,
    integral: &EvalReport,
    single: &EvalReport,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "scene {scene_id}: focal plane dz={:.3} m tilt=({:.2}, {:.2}) deg\n\n",
        focal_plane.altitude_offset, focal_plane.tilt_x, focal_plane.tilt_y
    ));
    out.push_str("== integrate-then-detect ==\n");
    out.push_str(&integral.format_table());
    out.push_str("\n== detect-per-single-image ==\n");
    out.push_str(&single.format_table());
    let gap = match (integral.pooled.ap, single.mean_scene_ap) {
        (Some(a), Some(b)) => format!("{:+.1}", (a - b) * 100.0),
        _ => "n/a".to_string(),
    };
    out.push_str(&format!(
        "\nintegral pooled AP {} vs single mean AP {}: gap {} points\n",
        integral
            .pooled
            .ap
            .map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0)),
        single
            .mean_scene_ap
            .map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0)),
        gap
    ));
    out
}

/// Parses the `WxH:AxL` scan syntax, e.g. `30x30:1x3` for a 30 m square
/// aperture sampled every 1 m along lines 3 m apart.
pub fn parse_scan_spec(text: &str) -> Result<ScanConfig> {
    let (aperture_part, spacing_part) = text
        .split_once(':')
        .ok_or_else(|| anyhow::anyhow!("scan spec must look like 30x30:1x3, got {text:?}"))?;
    let parse_pair = |part: &str| -> Result<(f64, f64)> {
        let (a, b) = part
            .split_once('x')
            .ok_or_else(|| anyhow::anyhow!("expected WxH in scan spec, got {part:?}"))?;
        Ok((a.trim().parse()?, b.trim().parse()?))
    };
    let (ap_a, ap_b) = parse_pair(aperture_part)?;
    if (ap_a - ap_b).abs() > 1e-9 {
        bail!("only square apertures are supported, got {aperture_part:?}");
    }
    let (along, line) = parse_pair(spacing_part)?;
    Ok(ScanConfig {
        aperture: ap_a,
        along_spacing: along,
        line_spacing: line,
    })
}
