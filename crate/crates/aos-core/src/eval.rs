//! Detection evaluation: NMS, dual-pass merging, greedy TP/FP matching,
//! all-point average precision, and per-scene report tables.
//!
//! The protocol mirrors the test-time pipeline the detector feeds into:
//! drop detections below the confidence floor, drop boxes centered too close
//! to the image border, merge the plain and equalized passes with NMS, match
//! greedily against ground truth at the IoU threshold, and rank everything
//! by confidence for the precision/recall curve.

use serde::{Deserialize, Serialize};

use crate::augment::BoundingBox;
use crate::detector::Detection;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// IoU threshold for NMS and TP matching.
    pub iou_threshold: f64,
    /// Detections below this confidence are discarded.
    pub confidence_floor: f64,
    /// Minimum distance of a box center from every image border, pixels.
    pub border_margin: f64,
    /// Median training-set box size; provenance of the default margin.
    pub median_box_size: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            confidence_floor: 0.005,
            border_margin: 5.0,
            median_box_size: 35.0,
        }
    }
}

impl EvalConfig {
    /// Margin derived from the median box size: half of `median * iou`,
    /// rounded up (35 px and IoU 0.25 give the default 5 px).
    pub fn derived_margin(&self) -> f64 {
        (self.median_box_size * self.iou_threshold / 2.0).ceil()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    match a.intersection(b) {
        Some(inter) => {
            let i = inter.area();
            i / (a.area() + b.area() - i)
        }
        None => 0.0,
    }
}

/// Deterministic descending-confidence order: ties break toward smaller box
/// area, then earlier input position.
fn ranked_indices(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                detections[a]
                    .bbox
                    .area()
                    .partial_cmp(&detections[b].bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression: keep a detection iff its IoU with every
/// already-kept detection stays below the threshold.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for &idx in &ranked_indices(detections) {
        let candidate = &detections[idx];
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &candidate.bbox) < iou_threshold)
        {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Combines detections from the plain and equalized passes of one image,
/// suppressing duplicates with NMS.
pub fn merge_dual_pass(
    plain: &[Detection],
    equalized: &[Detection],
    iou_threshold: f64,
) -> Vec<Detection> {
    let mut combined = Vec::with_capacity(plain.len() + equalized.len());
    combined.extend_from_slice(plain);
    combined.extend_from_slice(equalized);
    nms(&combined, iou_threshold)
}

/// Keeps detections whose box center lies at least `margin` pixels from
/// every border (boundary inclusive).
pub fn border_filter(
    detections: &[Detection],
    margin: f64,
    image_size: (u32, u32),
) -> Vec<Detection> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    detections
        .iter()
        .filter(|d| {
            let [cx, cy] = d.bbox.center();
            cx >= margin && cx <= w - margin && cy >= margin && cy <= h - margin
        })
        .cloned()
        .collect()
}

/// Outcome of matching one detection against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionMatch {
    pub is_tp: bool,
    pub gt_index: Option<usize>,
}

/// Greedy matching in descending confidence order: each detection claims the
/// unmatched ground-truth box of highest IoU at or above the threshold; every
/// ground truth matches at most once. Results align with the input order.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[BoundingBox],
    iou_threshold: f64,
) -> Vec<DetectionMatch> {
    let mut result = vec![
        DetectionMatch {
            is_tp: false,
            gt_index: None
        };
        detections.len()
    ];
    let mut gt_taken = vec![false; ground_truth.len()];
    for &idx in &ranked_indices(detections) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let overlap = iou(&detections[idx].bbox, gt);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            result[idx] = DetectionMatch {
                is_tp: true,
                gt_index: Some(g),
            };
        }
    }
    result
}

/// One point of the precision/recall curve, in ranking order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Average precision over a set of scenes, with the raw PR curve.
#[derive(Debug, Clone)]
pub struct ApResult {
    /// All-point interpolated AP; `None` when there is no ground truth.
    pub ap: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
    pub total_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Detections and ground truth of one scene (matching never crosses scenes).
#[derive(Debug, Clone, Copy)]
pub struct ScoredScene<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [BoundingBox],
}

/// Ranks all detections across the scene set by confidence, matches within
/// each scene, and integrates the area under the monotonically decreasing
/// precision envelope (all-point interpolation). Zero total ground truth
/// yields `ap: None`, reported as "n/a".
pub fn average_precision(scenes: &[ScoredScene<'_>], iou_threshold: f64) -> ApResult {
    let mut total_gt = 0usize;
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for scene in scenes {
        total_gt += scene.ground_truth.len();
        let matches = match_detections(scene.detections, scene.ground_truth, iou_threshold);
        for (det, m) in scene.detections.iter().zip(&matches) {
            ranked.push((det.confidence, m.is_tp));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut pr_curve = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, is_tp) in &ranked {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        if total_gt > 0 {
            pr_curve.push(PrPoint {
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }

    let ap = (total_gt > 0).then(|| {
        // Monotone envelope from the right, then integrate recall steps.
        let mut envelope: Vec<f64> = pr_curve.iter().map(|p| p.precision).collect();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for (point, env) in pr_curve.iter().zip(&envelope) {
            area += (point.recall - prev_recall) * env;
            prev_recall = point.recall;
        }
        area
    });

    ApResult {
        ap,
        pr_curve,
        total_gt,
        true_positives: tp,
        false_positives: fp,
    }
}

/// Raw detector output for one image: the plain pass, an optional equalized
/// pass, and the ground-truth boxes projected into this image.
#[derive(Debug, Clone)]
pub struct ImageEntry {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
    pub detections_equalized: Option<Vec<Detection>>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone)]
pub struct SceneEntry {
    pub scene_id: String,
    pub images: Vec<ImageEntry>,
}

/// How per-scene numbers are aggregated in the report table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    /// One integral image per scene: absolute GT/TP/FP counts, pooled AP.
    Integral,
    /// Many single images per scene: counts averaged over the scene's
    /// images, AP averaged over images that contain ground truth.
    Single,
}

#[derive(Debug, Clone)]
pub struct SceneRow {
    pub scene_id: String,
    pub gt: f64,
    pub ap: Option<f64>,
    pub fp: f64,
    pub tp: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mode: ReportMode,
    pub rows: Vec<SceneRow>,
    /// Pooled ranking over every image of every scene.
    pub pooled: ApResult,
    /// Mean of the per-scene AP values that exist.
    pub mean_scene_ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub config: EvalConfig,
}

/// Applies the full protocol to raw per-image detections and aggregates the
/// Table-style report: confidence floor, border filter, optional dual-pass
/// merge, NMS, matching, per-scene metrics, and the pooled PR curve.
pub fn scene_report(scenes: &[SceneEntry], config: &EvalConfig, mode: ReportMode) -> EvalReport {
    let filter = |dets: &[Detection], width: u32, height: u32| -> Vec<Detection> {
        let confident: Vec<Detection> = dets
            .iter()
            .filter(|d| d.confidence >= config.confidence_floor)
            .cloned()
            .collect();
        border_filter(&confident, config.border_margin, (width, height))
    };

    // Final detections per image, after the whole test-time protocol.
    let processed: Vec<Vec<(Vec<Detection>, &ImageEntry)>> = scenes
        .iter()
        .map(|scene| {
            scene
                .images
                .iter()
                .map(|img| {
                    let plain = filter(&img.detections, img.width, img.height);
                    let final_dets = match &img.detections_equalized {
                        Some(eq) => merge_dual_pass(
                            &plain,
                            &filter(eq, img.width, img.height),
                            config.iou_threshold,
                        ),
                        None => nms(&plain, config.iou_threshold),
                    };
                    (final_dets, img)
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(scenes.len());
    let mut all_scored: Vec<ScoredScene<'_>> = Vec::new();
    for (scene, images) in scenes.iter().zip(&processed) {
        let scored: Vec<ScoredScene<'_>> = images
            .iter()
            .map(|(dets, img)| ScoredScene {
                detections: dets,
                ground_truth: &img.ground_truth,
            })
            .collect();
        all_scored.extend(scored.iter().copied());

        let row = match mode {
            ReportMode::Integral => {
                let pooled = average_precision(&scored, config.iou_threshold);
                SceneRow {
                    scene_id: scene.scene_id.clone(),
                    gt: pooled.total_gt as f64,
                    ap: pooled.ap,
                    fp: pooled.false_positives as f64,
                    tp: pooled.true_positives as f64,
                }
            }
            ReportMode::Single => {
                let per_image: Vec<ApResult> = scored
                    .iter()
                    .map(|s| average_precision(std::slice::from_ref(s), config.iou_threshold))
                    .collect();
                let n = per_image.len().max(1) as f64;
                let aps: Vec<f64> = per_image.iter().filter_map(|r| r.ap).collect();
                SceneRow {
                    scene_id: scene.scene_id.clone(),
                    gt: per_image.iter().map(|r| r.total_gt as f64).sum::<f64>() / n,
                    ap: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
                    fp: per_image
                        .iter()
                        .map(|r| r.false_positives as f64)
                        .sum::<f64>()
                        / n,
                    tp: per_image
                        .iter()
                        .map(|r| r.true_positives as f64)
                        .sum::<f64>()
                        / n,
                }
            }
        };
        rows.push(row);
    }

    let pooled = average_precision(&all_scored, config.iou_threshold);
    let scene_aps: Vec<f64> = rows.iter().filter_map(|r| r.ap).collect();
    let mean_scene_ap =
        (!scene_aps.is_empty()).then(|| scene_aps.iter().sum::<f64>() / scene_aps.len() as f64);
    let denom_p = pooled.true_positives + pooled.false_positives;
    let precision = if denom_p > 0 {
        pooled.true_positives as f64 / denom_p as f64
    } else {
        0.0
    };
    let recall = if pooled.total_gt > 0 {
        pooled.true_positives as f64 / pooled.total_gt as f64
    } else {
        0.0
    };

    EvalReport {
        mode,
        rows,
        pooled,
        mean_scene_ap,
        precision,
        recall,
        config: config.clone(),
    }
}

fn format_ap(ap: Option<f64>) -> String {
    match ap {
        Some(v) => format!("{:.1}%", v * 100.0),
        None => "n/a".to_string(),
    }
}

impl EvalReport {
    fn format_count(&self, v: f64) -> String {
        match self.mode {
            ReportMode::Integral => format!("{v:.0}"),
            ReportMode::Single => format!("{v:.1}"),
        }
    }

    /// Aligned text table with one row per scene and an aggregate row
    /// ("sum" for integral mode, "avg" for single-image mode).
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        let gt_head = match self.mode {
            ReportMode::Integral => "GT",
            ReportMode::Single => "avg GT",
        };
        out.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>7} {:>7}\n",
            "ID", gt_head, "AP", "FP", "TP"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>7} {:>8} {:>7} {:>7}\n",
                row.scene_id,
                self.format_count(row.gt),
                format_ap(row.ap),
                self.format_count(row.fp),
                self.format_count(row.tp),
            ));
        }
        let (label, gt, ap, fp, tp) = self.aggregate_row();
        out.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>7} {:>7}\n",
            label,
            self.format_count(gt),
            format_ap(ap),
            self.format_count(fp),
            self.format_count(tp),
        ));
        out.push_str(&format!(
            "precision {:.1}% recall {:.1}% (pooled over {} detections, {} GT)\n",
            self.precision * 100.0,
            self.recall * 100.0,
            self.pooled.true_positives + self.pooled.false_positives,
            self.pooled.total_gt,
        ));
        out
    }

    /// Aggregate line: integral mode sums counts and pools AP; single mode
    /// averages the per-scene averages and pools AP across all images.
    fn aggregate_row(&self) -> (&'static str, f64, Option<f64>, f64, f64) {
        match self.mode {
            ReportMode::Integral => (
                "sum",
                self.rows.iter().map(|r| r.gt).sum(),
                self.pooled.ap,
                self.rows.iter().map(|r| r.fp).sum(),
                self.rows.iter().map(|r| r.tp).sum(),
            ),
            ReportMode::Single => {
                let n = self.rows.len().max(1) as f64;
                (
                    "avg",
                    self.rows.iter().map(|r| r.gt).sum::<f64>() / n,
                    self.pooled.ap,
                    self.rows.iter().map(|r| r.fp).sum::<f64>() / n,
                    self.rows.iter().map(|r| r.tp).sum::<f64>() / n,
                )
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,gt,ap,fp,tp\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.scene_id,
                row.gt,
                row.ap.map_or("n/a".into(), |v| format!("{v:.6}")),
                row.fp,
                row.tp,
            ));
        }
        let (label, gt, ap, fp, tp) = self.aggregate_row();
        out.push_str(&format!(
            "{label},{gt},{},{fp},{tp}\n",
            ap.map_or("n/a".into(), |v| format!("{v:.6}")),
        ));
        out
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for p in &self.pooled.pr_curve {
            out.push_str(&format!("{:.6},{:.6}\n", p.recall, p.precision));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(min: [f64; 2], max: [f64; 2]) -> BoundingBox {
        BoundingBox::new(min, max).unwrap()
    }

    fn det(min: [f64; 2], max: [f64; 2], confidence: f64) -> Detection {
        Detection {
            bbox: boxed(min, max),
            confidence,
            image_id: "img".into(),
        }
    }

    #[test]
    fn default_margin_derives_from_median_box_size() {
        // Half of 35 px at IoU 0.25, rounded up.
        let config = EvalConfig::default();
        assert_eq!(config.derived_margin(), 5.0);
        assert_eq!(config.border_margin, config.derived_margin());
    }

    #[test]
    fn iou_examples() {
        let a = boxed([0.0, 0.0], [10.0, 10.0]);
        assert_eq!(iou(&a, &a), 1.0);
        let disjoint = boxed([20.0, 0.0], [30.0, 10.0]);
        assert_eq!(iou(&a, &disjoint), 0.0);
        let half = boxed([5.0, 0.0], [15.0, 10.0]);
        assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_highest_confidence_duplicate() {
        let dets = vec![
            det([0.0, 0.0], [10.0, 10.0], 0.8),
            det([0.0, 0.0], [10.0, 10.0], 0.9),
        ];
        let kept = nms(&dets, 0.25);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let dets = vec![
            det([0.0, 0.0], [10.0, 10.0], 0.5),
            det([20.0, 20.0], [30.0, 30.0], 0.4),
            det([40.0, 0.0], [50.0, 10.0], 0.3),
        ];
        assert_eq!(nms(&dets, 0.25).len(), 3);
    }

    #[test]
    fn nms_greedy_chain() {
        // IoU(a, b) = 0.4, IoU(b, c) ~ 0.26, IoU(a, c) = 0.
        let s = 30.0 / 7.0;
        let a = det([0.0, 0.0], [10.0, 10.0], 0.9);
        let b = det([0.0, s], [10.0, 10.0 + s], 0.8);
        let c = det([0.0, 10.1], [10.0, 20.1], 0.7);
        assert!((iou(&a.bbox, &b.bbox) - 0.4).abs() < 1e-9);
        assert!(iou(&b.bbox, &c.bbox) > 0.25);
        assert_eq!(iou(&a.bbox, &c.bbox), 0.0);
        let kept = nms(&[a.clone(), b, c.clone()], 0.25);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].confidence, 0.9);
        assert_eq!(kept[1].confidence, 0.7);
    }

    #[test]
    fn merge_dual_pass_examples() {
        let plain = vec![det([0.0, 0.0], [10.0, 10.0], 0.7)];
        assert_eq!(merge_dual_pass(&plain, &[], 0.25), nms(&plain, 0.25));

        let merged = merge_dual_pass(
            &[det([0.0, 0.0], [10.0, 10.0], 0.6)],
            &[det([0.0, 0.0], [10.0, 10.0], 0.9)],
            0.25,
        );
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence, 0.9);

        // Overlapping pair collapses, the disjoint box survives.
        let merged = merge_dual_pass(
            &[det([0.0, 0.0], [10.0, 10.0], 0.7)],
            &[
                det([0.0, 10.0 / 3.0], [10.0, 10.0 + 10.0 / 3.0], 0.6), // IoU 0.5 with plain
                det([30.0, 30.0], [40.0, 40.0], 0.4),
            ],
            0.25,
        );
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].confidence, 0.7);
        assert_eq!(merged[1].confidence, 0.4);
    }

    #[test]
    fn border_filter_boundary_rule() {
        let near = det([0.0, 251.0], [6.0, 261.0], 0.9); // center (3, 256)
        let on_edge = det([0.0, 251.0], [10.0, 261.0], 0.9); // center (5, 256)
        let out = border_filter(&[near, on_edge], 5.0, (512, 512));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.center(), [5.0, 256.0]);

        let all = border_filter(
            &[det([0.0, 0.0], [1.0, 1.0], 0.5)],
            0.0,
            (512, 512),
        );
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn matching_examples() {
        let gt = vec![boxed([0.0, 0.0], [10.0, 10.0])];
        let exact = vec![det([0.0, 0.0], [10.0, 10.0], 0.9)];
        let m = match_detections(&exact, &gt, 0.25);
        assert!(m[0].is_tp);
        assert_eq!(m[0].gt_index, Some(0));

        // Two detections on the same ground truth: one TP, one FP.
        let pair = vec![
            det([0.0, 0.0], [10.0, 10.0], 0.9),
            det([1.0, 1.0], [11.0, 11.0], 0.8),
        ];
        let m = match_detections(&pair, &gt, 0.25);
        assert!(m[0].is_tp && !m[1].is_tp);

        // IoU 0.2 below the 0.25 threshold: FP.
        let weak = vec![det([0.0, 20.0 / 3.0], [10.0, 10.0 + 20.0 / 3.0], 0.9)];
        assert!((iou(&weak[0].bbox, &gt[0]) - 0.2).abs() < 1e-9);
        assert!(!match_detections(&weak, &gt, 0.25)[0].is_tp);
    }

    #[test]
    fn ap_single_perfect_detection() {
        let gt = vec![boxed([0.0, 0.0], [10.0, 10.0])];
        let dets = vec![det([0.0, 0.0], [10.0, 10.0], 0.9)];
        let result = average_precision(
            &[ScoredScene {
                detections: &dets,
                ground_truth: &gt,
            }],
            0.25,
        );
        assert_eq!(result.ap, Some(1.0));
        assert_eq!(result.true_positives, 1);
        assert_eq!(result.false_positives, 0);
    }

    #[test]
    fn ap_envelope_hand_computed() {
        // Two ground truths; ranked detections TP, FP, TP.
        // PR points: (0.5, 1), (0.5, 0.5), (1, 2/3); envelope area = 5/6.
        let gt = vec![
            boxed([0.0, 0.0], [10.0, 10.0]),
            boxed([100.0, 100.0], [110.0, 110.0]),
        ];
        let dets = vec![
            det([0.0, 0.0], [10.0, 10.0], 0.9),
            det([50.0, 50.0], [60.0, 60.0], 0.8),
            det([100.0, 100.0], [110.0, 110.0], 0.7),
        ];
        let result = average_precision(
            &[ScoredScene {
                detections: &dets,
                ground_truth: &gt,
            }],
            0.25,
        );
        assert!((result.ap.unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(
            result.pr_curve,
            vec![
                PrPoint {
                    recall: 0.5,
                    precision: 1.0
                },
                PrPoint {
                    recall: 0.5,
                    precision: 0.5
                },
                PrPoint {
                    recall: 1.0,
                    precision: 2.0 / 3.0
                },
            ]
        );
    }

    #[test]
    fn ap_undefined_without_ground_truth() {
        let result = average_precision(
            &[ScoredScene {
                detections: &[],
                ground_truth: &[],
            }],
            0.25,
        );
        assert_eq!(result.ap, None);
        assert_eq!(result.false_positives, 0);
    }

    #[test]
    fn report_perfect_detections_score_100() {
        let scenes: Vec<SceneEntry> = (0..3)
            .map(|s| SceneEntry {
                scene_id: format!("S{s}"),
                images: vec![ImageEntry {
                    image_id: format!("S{s}_img"),
                    width: 512,
                    height: 512,
                    detections: vec![
                        det([100.0, 100.0], [120.0, 130.0], 0.9),
                        det([300.0, 200.0], [330.0, 240.0], 0.8),
                    ],
                    detections_equalized: None,
                    ground_truth: vec![
                        boxed([100.0, 100.0], [120.0, 130.0]),
                        boxed([300.0, 200.0], [330.0, 240.0]),
                    ],
                }],
            })
            .collect();
        let report = scene_report(&scenes, &EvalConfig::default(), ReportMode::Integral);
        assert_eq!(report.pooled.ap, Some(1.0));
        assert_eq!(report.pooled.false_positives, 0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert!(report.rows.iter().all(|r| r.ap == Some(1.0)));
    }

    #[test]
    fn report_empty_scene_shows_na() {
        let scenes = vec![SceneEntry {
            scene_id: "F9".into(),
            images: vec![ImageEntry {
                image_id: "F9_integral".into(),
                width: 512,
                height: 512,
                detections: vec![],
                detections_equalized: None,
                ground_truth: vec![],
            }],
        }];
        let report = scene_report(&scenes, &EvalConfig::default(), ReportMode::Integral);
        assert_eq!(report.rows[0].ap, None);
        assert_eq!(report.rows[0].fp, 0.0);
        assert!(report.format_table().contains("n/a"));
    }

    #[test]
    fn report_applies_floor_border_and_merge() {
        let scenes = vec![SceneEntry {
            scene_id: "S".into(),
            images: vec![ImageEntry {
                image_id: "S_img".into(),
                width: 512,
                height: 512,
                detections: vec![
                    det([100.0, 100.0], [120.0, 120.0], 0.004), // below floor
                    det([0.0, 0.0], [6.0, 6.0], 0.9),           // center (3,3): border
                    det([200.0, 200.0], [220.0, 220.0], 0.6),
                ],
                detections_equalized: Some(vec![
                    det([200.0, 200.0], [220.0, 220.0], 0.8), // duplicate, higher conf
                    det([400.0, 400.0], [420.0, 420.0], 0.5), // extra find
                ]),
                ground_truth: vec![
                    boxed([200.0, 200.0], [220.0, 220.0]),
                    boxed([400.0, 400.0], [420.0, 420.0]),
                ],
            }],
        }];
        let report = scene_report(&scenes, &EvalConfig::default(), ReportMode::Integral);
        assert_eq!(report.pooled.true_positives, 2);
        assert_eq!(report.pooled.false_positives, 0);
        assert_eq!(report.pooled.ap, Some(1.0));
    }

    #[test]
    fn single_mode_averages_over_images() {
        let image = |id: &str, dets: Vec<Detection>, gts: Vec<BoundingBox>| ImageEntry {
            image_id: id.into(),
            width: 512,
            height: 512,
            detections: dets,
            detections_equalized: None,
            ground_truth: gts,
        };
        let scenes = vec![SceneEntry {
            scene_id: "S".into(),
            images: vec![
                image(
                    "a",
                    vec![det([100.0, 100.0], [120.0, 120.0], 0.9)],
                    vec![boxed([100.0, 100.0], [120.0, 120.0])],
                ),
                image("b", vec![det([50.0, 50.0], [70.0, 70.0], 0.8)], vec![]),
            ],
        }];
        let report = scene_report(&scenes, &EvalConfig::default(), ReportMode::Single);
        let row = &report.rows[0];
        // Image a: AP 1, 1 TP; image b: no GT (n/a), 1 FP.
        assert_eq!(row.ap, Some(1.0));
        assert_eq!(row.gt, 0.5);
        assert_eq!(row.tp, 0.5);
        assert_eq!(row.fp, 0.5);
        let table = report.format_table();
        assert!(table.contains("avg"), "{table}");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_detections(max_n: usize) -> impl Strategy<Value = Vec<Detection>> {
            proptest::collection::vec(
                (0.0..400.0f64, 0.0..400.0f64, 2.0..80.0f64, 2.0..80.0f64, 0.0..1.0f64),
                0..max_n,
            )
            .prop_map(|specs| {
                specs
                    .into_iter()
                    .map(|(x, y, w, h, c)| det([x, y], [x + w, y + h], c))
                    .collect()
            })
        }

        fn det(min: [f64; 2], max: [f64; 2], confidence: f64) -> Detection {
            Detection {
                bbox: BoundingBox::new(min, max).unwrap(),
                confidence,
                image_id: "p".into(),
            }
        }

        proptest! {
            /// NMS is idempotent.
            #[test]
            fn nms_idempotent(dets in arb_detections(12), thr in 0.05..0.9f64) {
                let once = nms(&dets, thr);
                let twice = nms(&once, thr);
                prop_assert_eq!(once, twice);
            }

            /// Raising the confidence floor never increases the FP count.
            #[test]
            fn confidence_floor_monotone(dets in arb_detections(12)) {
                let gt = vec![
                    BoundingBox::new([50.0, 50.0], [90.0, 90.0]).unwrap(),
                    BoundingBox::new([200.0, 200.0], [260.0, 240.0]).unwrap(),
                ];
                let mut last_fp = usize::MAX;
                for floor in [0.0, 0.2, 0.4, 0.6, 0.8] {
                    let kept: Vec<Detection> = dets
                        .iter()
                        .filter(|d| d.confidence >= floor)
                        .cloned()
                        .collect();
                    let result = average_precision(
                        &[ScoredScene { detections: &kept, ground_truth: &gt }],
                        0.25,
                    );
                    prop_assert!(result.false_positives <= last_fp);
                    last_fp = result.false_positives;
                }
            }

            /// PR curve points stay in the unit square and recall never
            /// decreases along the ranking.
            #[test]
            fn pr_curve_bounds(dets in arb_detections(14)) {
                let gt = vec![
                    BoundingBox::new([100.0, 100.0], [160.0, 150.0]).unwrap(),
                    BoundingBox::new([300.0, 50.0], [360.0, 120.0]).unwrap(),
                    BoundingBox::new([30.0, 300.0], [90.0, 360.0]).unwrap(),
                ];
                let result = average_precision(
                    &[ScoredScene { detections: &dets, ground_truth: &gt }],
                    0.25,
                );
                let mut prev = 0.0;
                for p in &result.pr_curve {
                    prop_assert!((0.0..=1.0).contains(&p.recall));
                    prop_assert!((0.0..=1.0).contains(&p.precision));
                    prop_assert!(p.recall >= prev);
                    prev = p.recall;
                }
                if let Some(ap) = result.ap {
                    prop_assert!((0.0..=1.0).contains(&ap));
                }
            }
        }
    }
}
