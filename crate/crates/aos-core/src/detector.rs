//! Deterministic thresholded blob detection.
//!
//! A training-free stand-in for a neural person detector: binarize at a
//! value percentile, extract 8-connected components, keep those within an
//! area band, and score each by how far its mean value sits above the
//! threshold. Single images and integrals are tone-mapped independently, so
//! the threshold is a percentile rather than an absolute level.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::BoundingBox;
use crate::image::{ImageError, LdrImage};

/// Confidence floor applied downstream when filtering detections; blob
/// scores are clamped to it so borderline components survive until the
/// evaluation stage decides.
pub const CONFIDENCE_FLOOR: f64 = 0.005;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Value percentile used as the binarization threshold.
    pub threshold_percentile: f64,
    /// Minimum component area in pixels.
    pub min_area: u32,
    /// Maximum component area in pixels.
    pub max_area: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_percentile: 0.98,
            min_area: 9,
            max_area: 10_000,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile < 1.0) {
            return Err(format!(
                "threshold percentile must lie in (0, 1), got {}",
                self.threshold_percentile
            ));
        }
        if self.min_area == 0 || self.min_area >= self.max_area {
            return Err("area band requires 0 < min_area < max_area".into());
        }
        Ok(())
    }
}

/// A confidence-scored box prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub image_id: String,
}

/// Extracts blob detections from an 8-bit image.
///
/// The threshold value is the smallest level whose cumulative histogram
/// count reaches the configured percentile; foreground is everything
/// strictly above it. Components are labeled in row-major discovery order,
/// so output order is deterministic.
pub fn detect_blobs(image: &LdrImage, config: &DetectorConfig, image_id: &str) -> Vec<Detection> {
    let width = image.width();
    let height = image.height();
    let total = (width * height) as u64;
    if total == 0 {
        return Vec::new();
    }

    let mut hist = [0u64; 256];
    for &v in image.as_slice() {
        hist[v as usize] += 1;
    }
    let target = (config.threshold_percentile * total as f64).ceil() as u64;
    let mut cumulative = 0u64;
    let mut threshold = 255u8;
    for (value, &count) in hist.iter().enumerate() {
        cumulative += count;
        if cumulative >= target {
            threshold = value as u8;
            break;
        }
    }

    let data = image.as_slice();
    let fg = |idx: usize| data[idx] > threshold;
    let mut labels = vec![false; data.len()]; // visited mask
    let mut detections = Vec::new();
    let mut stack = Vec::new();

    for start in 0..data.len() {
        if !fg(start) || labels[start] {
            continue;
        }
        // Flood fill one 8-connected component.
        let mut area = 0u32;
        let mut value_sum = 0u64;
        let (mut min_x, mut min_y) = (u32::MAX, u32::MAX);
        let (mut max_x, mut max_y) = (0u32, 0u32);
        labels[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let x = idx as u32 % width;
            let y = idx as u32 / width;
            area += 1;
            value_sum += data[idx] as u64;
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let nidx = (ny as u32 * width + nx as u32) as usize;
                    if fg(nidx) && !labels[nidx] {
                        labels[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        if area < config.min_area || area > config.max_area {
            continue;
        }
        let mean = value_sum as f64 / area as f64;
        let confidence =
            ((mean - threshold as f64) / (255.0 - threshold as f64)).clamp(CONFIDENCE_FLOOR, 1.0);
        detections.push(Detection {
            bbox: BoundingBox {
                min: [min_x as f64, min_y as f64],
                max: [max_x as f64 + 1.0, max_y as f64 + 1.0],
            },
            confidence,
            image_id: image_id.to_string(),
        });
    }
    detections
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    image: String,
    bbox: [f64; 4],
    confidence: f64,
}

/// Writes detections as JSON lines: `{"image": id, "bbox": [xmin, ymin,
/// xmax, ymax], "confidence": c}`. The same format is accepted back by the
/// evaluation stage, so externally produced detections can be scored too.
pub fn write_detections_jsonl(
    detections: &[Detection],
    writer: &mut impl Write,
) -> Result<(), ImageError> {
    for det in detections {
        let record = DetectionRecord {
            image: det.image_id.clone(),
            bbox: [
                det.bbox.min[0],
                det.bbox.min[1],
                det.bbox.max[0],
                det.bbox.max[1],
            ],
            confidence: det.confidence,
        };
        let line = serde_json::to_string(&record).expect("detection record serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn save_detections_jsonl(
    detections: &[Detection],
    path: impl AsRef<Path>,
) -> Result<(), ImageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_detections_jsonl(detections, &mut file)
}

pub fn load_detections_jsonl(path: impl AsRef<Path>) -> Result<Vec<Detection>, ImageError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut detections = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| ImageError::Format(format!("detection line: {e}")))?;
        let bbox = BoundingBox::new(
            [record.bbox[0], record.bbox[1]],
            [record.bbox[2], record.bbox[3]],
        )
        .ok_or_else(|| ImageError::Format("degenerate detection box".into()))?;
        detections.push(Detection {
            bbox,
            confidence: record.confidence,
            image_id: record.image,
        });
    }
    Ok(detections)
}
