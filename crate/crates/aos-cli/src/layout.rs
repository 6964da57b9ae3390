//! On-disk layout shared by the subcommands and the pipeline.
//!
//! Detections and labels are JSON-lines files. Integral-image evaluation
//! reads one file per scene (`dets/<scene>.jsonl`); single-image evaluation
//! reads one directory per scene with one file per image
//! (`dets/<scene>/<image>.jsonl`). Label files mirror that layout, and an
//! optional equalized-pass tree mirrors it again for dual-pass merging.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use aos_core::augment::LabeledBox;
use aos_core::detector::{Detection, load_detections_jsonl};
use aos_core::eval::{ImageEntry, ReportMode, SceneEntry};

/// Lists `.jsonl` files in a directory, sorted by name.
fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn subdirectories(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn load_ground_truth(labels_dir: &Path, stem: &str) -> Result<Vec<LabeledBox>> {
    let path = labels_dir.join(format!("{stem}.jsonl"));
    if !path.exists() {
        bail!("missing label file {}", path.display());
    }
    Ok(aos_core::augment::load_labels_jsonl(&path)?)
}

fn load_optional_dets(dir: Option<&Path>, stem: &str) -> Result<Option<Vec<Detection>>> {
    match dir {
        Some(dir) => {
            let path = dir.join(format!("{stem}.jsonl"));
            if path.exists() {
                Ok(Some(load_detections_jsonl(&path)?))
            } else {
                Ok(None)
            }
        }
        None => Ok(None),
    }
}

fn image_entry(
    dets_path: &Path,
    labels_dir: &Path,
    ahe_dir: Option<&Path>,
    image_size: (u32, u32),
) -> Result<ImageEntry> {
    let stem = stem_of(dets_path);
    let detections = load_detections_jsonl(dets_path)?;
    let ground_truth = load_ground_truth(labels_dir, &stem)?
        .into_iter()
        .map(|l| l.bbox)
        .collect();
    Ok(ImageEntry {
        image_id: stem.clone(),
        width: image_size.0,
        height: image_size.1,
        detections,
        detections_equalized: load_optional_dets(ahe_dir, &stem)?,
        ground_truth,
    })
}

/// Reads a detection/label tree into scene entries for [`aos_core::eval`].
pub fn collect_scene_entries(
    dets_dir: &Path,
    labels_dir: &Path,
    ahe_dir: Option<&Path>,
    mode: ReportMode,
    image_size: (u32, u32),
) -> Result<Vec<SceneEntry>> {
    let mut scenes = Vec::new();
    match mode {
        ReportMode::Integral => {
            for file in jsonl_files(dets_dir)? {
                let stem = stem_of(&file);
                scenes.push(SceneEntry {
                    scene_id: stem.clone(),
                    images: vec![image_entry(&file, labels_dir, ahe_dir, image_size)?],
                });
            }
        }
        ReportMode::Single => {
            for scene_dir in subdirectories(dets_dir)? {
                let scene_id = stem_of(&scene_dir);
                let scene_labels = labels_dir.join(&scene_id);
                let scene_ahe = ahe_dir.map(|d| d.join(&scene_id));
                let mut images = Vec::new();
                for file in jsonl_files(&scene_dir)? {
                    images.push(image_entry(
                        &file,
                        &scene_labels,
                        scene_ahe.as_deref(),
                        image_size,
                    )?);
                }
                if images.is_empty() {
                    bail!("scene directory {} has no detection files", scene_dir.display());
                }
                scenes.push(SceneEntry { scene_id, images });
            }
        }
    }
    if scenes.is_empty() {
        bail!("no scenes found under {}", dets_dir.display());
    }
    Ok(scenes)
}

/// Creates the directory and writes one detections file into the layout.
pub fn write_detections(dir: &Path, stem: &str, detections: &[Detection]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.jsonl"));
    aos_core::detector::save_detections_jsonl(detections, &path)?;
    Ok(path)
}

/// Creates the directory and writes one labels file into the layout.
pub fn write_labels(dir: &Path, stem: &str, labels: &[LabeledBox]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.jsonl"));
    aos_core::augment::save_labels_jsonl(labels, &path)?;
    Ok(path)
}
