//! `aos`: synthetic-aperture integral imaging pipeline.

use std::path::PathBuf;

use anyhow::{Context, Result, bail};
use clap::{Parser, Subcommand};

use aos_cli::layout::{collect_scene_entries, write_detections};
use aos_cli::pipeline::{RunConfig, format_comparison, parse_scan_spec, run_pipeline};
use aos_core::augment::{AheMode, augment_integral_set, augment_single_set, seeded_rotation_angles};
use aos_core::detector::{DetectorConfig, detect_blobs};
use aos_core::eval::{EvalConfig, ReportMode, scene_report};
use aos_core::geometry::{Camera, CameraIntrinsics};
use aos_core::image::LdrImage;
use aos_core::lightfield::{
    FocalPlane, FocusSearch, LightFieldCapture, focal_stack, integrate, optimize_focal_plane,
    virtual_camera_at_center,
};
use aos_core::simulator::{Scene, SceneSpec, capture_scene, load_labels_json, plan_grid_scan, save_labels_json};

#[derive(Parser)]
#[command(
    name = "aos",
    version,
    about = "Synthetic-aperture integral imaging: simulate occluded scenes, integrate light-field captures, augment, detect, and evaluate"
)]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural scene into a capture directory (PFM views,
    /// poses.json, labels.json).
    Simulate {
        /// Scene-spec JSON file.
        #[arg(long)]
        spec: PathBuf,
        /// Scan pattern `WxW:AxL`: square aperture side, along-track and
        /// line spacing in meters (e.g. 30x30:1x3).
        #[arg(long)]
        scan: String,
        /// Flight altitude above ground, meters.
        #[arg(long)]
        alt: f64,
        /// Horizontal field of view, degrees.
        #[arg(long, default_value_t = 50.82)]
        fov: f64,
        /// Image resolution `WxH`.
        #[arg(long, default_value = "512x512")]
        res: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Integrate a capture onto one synthetic focal plane (writes the PFM
    /// plus a contributor-count PGM alongside).
    Integrate {
        #[arg(long)]
        capture: PathBuf,
        /// Focal-plane altitude offset, meters.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        dz: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_x: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_y: f64,
        /// Virtual-camera up-vector rotation, degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        up: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Integrate a whole focal stack over a range of plane altitudes.
    Stack {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        dz_min: f64,
        #[arg(long, allow_negative_numbers = true)]
        dz_max: f64,
        #[arg(long)]
        dz_step: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_x: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_y: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        up: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Search for the sharpest focal plane and print it as JSON.
    OptimizeFocus {
        #[arg(long)]
        capture: PathBuf,
        /// Symmetric altitude search range, meters.
        #[arg(long)]
        dz_range: f64,
        #[arg(long)]
        dz_step: f64,
        /// Symmetric tilt search range, degrees (0 searches level planes).
        #[arg(long, default_value_t = 0.0)]
        tilt_range: f64,
        #[arg(long, default_value_t = 0.0)]
        tilt_step: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        up: f64,
    },
    /// Emit the augmented training set for a capture (tone-mapped PGMs with
    /// per-image label files).
    Augment {
        #[arg(long)]
        capture: PathBuf,
        /// integral: re-render 27 focus variations x rotations; single:
        /// rotate each view raster.
        #[arg(long)]
        mode: String,
        #[arg(long, default_value = "both")]
        ahe: AheModeArg,
        #[arg(long, default_value_t = 10)]
        rotations: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base focal plane the focus grid perturbs around.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        dz: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_x: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tilt_y: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run blob detection over every PGM image in a directory.
    Detect {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 0.98)]
        percentile: f64,
        #[arg(long, default_value_t = 9)]
        min_area: u32,
        #[arg(long, default_value_t = 10_000)]
        max_area: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detection files against label files and print the report table.
    Evaluate {
        /// Detections: `<scene>.jsonl` files (integral mode) or
        /// `<scene>/<image>.jsonl` trees (single mode).
        #[arg(long)]
        dets: PathBuf,
        /// Ground-truth labels in the mirrored layout.
        #[arg(long)]
        labels: PathBuf,
        /// Second detection tree from equalized images, merged via NMS.
        #[arg(long)]
        merge_ahe: Option<PathBuf>,
        #[arg(long, default_value = "integral")]
        mode: String,
        #[arg(long, default_value_t = 0.25)]
        iou: f64,
        #[arg(long, default_value_t = 0.005)]
        conf: f64,
        #[arg(long, default_value_t = 5.0)]
        margin: f64,
        /// Image size `WxH` used for the border filter.
        #[arg(long, default_value = "512x512")]
        image_size: String,
        /// Write the pooled precision/recall curve as CSV.
        #[arg(long)]
        pr_out: Option<PathBuf>,
        /// Write the report as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Run the full two-arm pipeline (integrate-then-detect vs
    /// detect-per-single-image) from a run-config JSON.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Output root; overrides `output_root` from the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy)]
struct AheModeArg(AheMode);

impl std::str::FromStr for AheModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(AheModeArg)
    }
}

fn parse_resolution(text: &str) -> Result<(u32, u32)> {
    let (w, h) = text
        .split_once('x')
        .ok_or_else(|| anyhow::anyhow!("expected WxH, got {text:?}"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn parse_report_mode(text: &str) -> Result<ReportMode> {
    match text {
        "integral" => Ok(ReportMode::Integral),
        "single" => Ok(ReportMode::Single),
        other => bail!("unknown mode {other:?} (integral|single)"),
    }
}

fn load_capture(dir: &PathBuf) -> Result<LightFieldCapture> {
    LightFieldCapture::load_dir(dir).with_context(|| format!("loading capture {}", dir.display()))
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("worker pool is configured before first use");
    }
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            spec,
            scan,
            alt,
            fov,
            res,
            out,
        } => {
            let spec = SceneSpec::load_json(&spec)
                .with_context(|| format!("loading scene spec {}", spec.display()))?;
            let scan = parse_scan_spec(&scan)?;
            let (width, height) = parse_resolution(&res)?;
            let intrinsics = CameraIntrinsics::from_fov(fov, width, height)?;
            let scene = Scene::build(spec.clone())?;
            let poses = plan_grid_scan(scan.aperture, scan.along_spacing, scan.line_spacing, alt)?;
            let capture = capture_scene(&scene, &poses, &intrinsics)?;
            std::fs::create_dir_all(&out)?;
            capture.save_dir(&out)?;
            save_labels_json(&scene.labels, out.join("labels.json"))?;
            spec.save_json(out.join("scene.json"))?;
            println!(
                "simulated {} views ({} occluder patches, {} labels) -> {}",
                capture.views().len(),
                scene.occluders.patches().len(),
                scene.labels.len(),
                out.display()
            );
        }
        Command::Integrate {
            capture,
            dz,
            tilt_x,
            tilt_y,
            up,
            out,
        } => {
            let capture = load_capture(&capture)?;
            let camera = virtual_camera_at_center(&capture, up);
            let plane = FocalPlane::new(dz, tilt_x, tilt_y);
            let integral = integrate(&capture, &plane, &camera)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            integral.save(&out)?;
            println!(
                "integrated {} views at dz={dz} -> {} ({} valid px)",
                capture.views().len(),
                out.display(),
                integral.valid_pixels()
            );
        }
        Command::Stack {
            capture,
            dz_min,
            dz_max,
            dz_step,
            tilt_x,
            tilt_y,
            up,
            out,
        } => {
            if dz_step <= 0.0 || dz_max < dz_min {
                bail!("invalid stack range");
            }
            let capture = load_capture(&capture)?;
            let camera = virtual_camera_at_center(&capture, up);
            let mut planes = Vec::new();
            let mut dz = dz_min;
            while dz <= dz_max + 1e-9 {
                planes.push(FocalPlane::new(dz, tilt_x, tilt_y));
                dz += dz_step;
            }
            let stack = focal_stack(&capture, &planes, &camera)?;
            std::fs::create_dir_all(&out)?;
            for (idx, integral) in stack.iter().enumerate() {
                integral.save(out.join(format!("stack_{idx:03}.pfm")))?;
            }
            println!("wrote {} focal planes -> {}", stack.len(), out.display());
        }
        Command::OptimizeFocus {
            capture,
            dz_range,
            dz_step,
            tilt_range,
            tilt_step,
            up,
        } => {
            let capture = load_capture(&capture)?;
            let camera = virtual_camera_at_center(&capture, up);
            let search = FocusSearch {
                dz_range,
                dz_step,
                tilt_range,
                tilt_step,
            };
            let plane = optimize_focal_plane(&capture, &search, &camera)?;
            println!("{}", serde_json::to_string_pretty(&plane)?);
        }
        Command::Augment {
            capture,
            mode,
            ahe,
            rotations,
            seed,
            dz,
            tilt_x,
            tilt_y,
            out,
        } => {
            let capture_dir = capture;
            let capture = load_capture(&capture_dir)?;
            let labels = load_labels_json(capture_dir.join("labels.json"))
                .with_context(|| "capture directory needs labels.json for augmentation")?;
            std::fs::create_dir_all(&out)?;
            let base = FocalPlane::new(dz, tilt_x, tilt_y);
            let mut written = 0usize;
            let mut emit = |img: aos_core::augment::AugmentedImage| {
                img.image
                    .write_pgm(out.join(format!("{}.pgm", img.name)))
                    .map_err(aos_core::augment::AugmentError::Image)?;
                aos_core::augment::save_labels_jsonl(
                    &img.labels,
                    out.join(format!("{}.jsonl", img.name)),
                )
                .map_err(aos_core::augment::AugmentError::Image)?;
                written += 1;
                Ok(())
            };
            match mode.as_str() {
                "integral" => {
                    augment_integral_set(&capture, &base, &labels, rotations, ahe.0, seed, emit)?;
                }
                "single" => {
                    let angles = seeded_rotation_angles(rotations, seed);
                    for view in capture.views() {
                        let camera =
                            Camera::new(capture.intrinsics().clone(), view.pose.clone());
                        augment_single_set(
                            &view.image,
                            &labels,
                            &camera,
                            &angles,
                            ahe.0,
                            &format!("view_{:04}", view.id),
                            &mut emit,
                        )?;
                    }
                }
                other => bail!("unknown augment mode {other:?} (integral|single)"),
            }
            println!("emitted {written} augmented images -> {}", out.display());
        }
        Command::Detect {
            images,
            percentile,
            min_area,
            max_area,
            out,
        } => {
            let config = DetectorConfig {
                threshold_percentile: percentile,
                min_area,
                max_area,
            };
            config.validate().map_err(anyhow::Error::msg)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&images)
                .with_context(|| format!("reading {}", images.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .pgm images under {}", images.display());
            }
            let mut total = 0usize;
            for path in &paths {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                let image = LdrImage::read_pgm(path)?;
                let dets = detect_blobs(&image, &config, &stem);
                total += dets.len();
                write_detections(&out, &stem, &dets)?;
            }
            println!(
                "detected {total} blobs over {} images -> {}",
                paths.len(),
                out.display()
            );
        }
        Command::Evaluate {
            dets,
            labels,
            merge_ahe,
            mode,
            iou,
            conf,
            margin,
            image_size,
            pr_out,
            csv_out,
        } => {
            let mode = parse_report_mode(&mode)?;
            let image_size = parse_resolution(&image_size)?;
            let config = EvalConfig {
                iou_threshold: iou,
                confidence_floor: conf,
                border_margin: margin,
                ..EvalConfig::default()
            };
            let scenes =
                collect_scene_entries(&dets, &labels, merge_ahe.as_deref(), mode, image_size)?;
            let report = scene_report(&scenes, &config, mode);
            print!("{}", report.format_table());
            if let Some(path) = csv_out {
                std::fs::write(&path, report.to_csv())?;
            }
            if let Some(path) = pr_out {
                std::fs::write(&path, report.pr_curve_csv())?;
            }
        }
        Command::Compare { config, out } => {
            let (run_config, base) = RunConfig::load(&config)?;
            let out_root = out
                .or_else(|| run_config.output_root.clone().map(|p| base.join(p)))
                .ok_or_else(|| {
                    anyhow::anyhow!("no output root: pass -o or set output_root in the config")
                })?;
            let summary = run_pipeline(&run_config, &base, &out_root)?;
            print!(
                "{}",
                format_comparison(
                    &summary.scene_id,
                    &summary.focal_plane,
                    &summary.integral,
                    &summary.single
                )
            );
            println!("manifest: {}", summary.manifest_path.display());
        }
    }
    Ok(())
}
