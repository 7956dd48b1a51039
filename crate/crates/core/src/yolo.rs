//! YOLO label files, corpus statistics and IoU-based detection metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u32,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    /// Checked constructor; the message names the first offending field.
    pub fn new(class_id: u32, x_center: f64, y_center: f64, width: f64, height: f64) -> Result<Self, String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let positive = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(x_center) {
            return Err(format!("x_center {x_center} out of range [0, 1]"));
        }
        if !unit(y_center) {
            return Err(format!("y_center {y_center} out of range [0, 1]"));
        }
        if !positive(width) {
            return Err(format!("width {width} out of range (0, 1]"));
        }
        if !positive(height) {
            return Err(format!("height {height} out of range (0, 1]"));
        }
        Ok(Self { class_id, x_center, y_center, width, height })
    }

    /// `(left, top, right, bottom)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        (
            self.x_center - hw,
            self.y_center - hh,
            self.x_center + hw,
            self.y_center + hh,
        )
    }
}

/// Parses the contents of one YOLO label file.
///
/// Each non-blank line is `class_id x_center y_center width height`.
pub fn parse_label_file(contents: &str) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("class id `{}` is not a non-negative integer", fields[0])))?;
        let mut coords = [0.0f64; 4];
        for (slot, token) in coords.iter_mut().zip(&fields[1..]) {
            *slot = token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{token}` is not a number")))?;
        }
        let [x, y, w, h] = coords;
        boxes.push(BBox::new(class_id, x, y, w, h).map_err(err)?);
    }
    Ok(boxes)
}

/// Inverse of [`parse_label_file`]; numbers use the shortest decimal form
/// that parses back to the same value.
pub fn serialize_label_file(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            b.class_id, b.x_center, b.y_center, b.width, b.height
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_path: String,
    pub boxes: Vec<BBox>,
}

impl AnnotationRecord {
    pub fn new(image_path: impl Into<String>, boxes: Vec<BBox>) -> Self {
        Self { image_path: image_path.into(), boxes }
    }

    pub fn annotation_count(&self) -> usize {
        self.boxes.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub class_histogram: BTreeMap<u32, usize>,
    pub center_points: Vec<(f64, f64)>,
    pub size_points: Vec<(f64, f64)>,
}

impl CorpusStats {
    pub fn total_boxes(&self) -> usize {
        self.center_points.len()
    }

    /// `class_id,count`, ascending class id.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("class_id,count\n");
        for (class, count) in &self.class_histogram {
            let _ = writeln!(out, "{class},{count}");
        }
        out
    }

    /// `x_center,y_center,width,height`, one row per box.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("x_center,y_center,width,height\n");
        for ((x, y), (w, h)) in self.center_points.iter().zip(&self.size_points) {
            let _ = writeln!(out, "{x},{y},{w},{h}");
        }
        out
    }
}

/// Aggregates all boxes, in record order then line order.
pub fn corpus_stats(records: &[AnnotationRecord]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for b in records.iter().flat_map(|r| &r.boxes) {
        *stats.class_histogram.entry(b.class_id).or_default() += 1;
        stats.center_points.push((b.x_center, b.y_center));
        stats.size_points.push((b.width, b.height));
    }
    stats
}

/// Intersection over union of two boxes; class ids are ignored.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (al, at, ar, ab) = a.corners();
    let (bl, bt, br, bb) = b.corners();
    let iw = (ar.min(br) - al.max(bl)).max(0.0);
    let ih = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = iw * ih;
    // Areas from corners so that iou(a, a) is exactly 1.
    let area_a = (ar - al) * (ab - at);
    let area_b = (br - bl) * (bb - bt);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy one-to-one matching: candidate pairs with IoU at or above the
/// threshold and equal class ids are accepted in descending IoU order
/// (ties by prediction index, then ground-truth index) unless either side
/// is already taken. Returns `matched / max(1, ground_truth.len())`.
pub fn detection_accuracy(predictions: &[BBox], ground_truth: &[BBox], iou_threshold: f64) -> Result<f64> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "iou threshold {iou_threshold} outside (0, 1]"
        )));
    }
    Ok(greedy_matches(predictions, ground_truth, iou_threshold).len() as f64
        / ground_truth.len().max(1) as f64)
}

/// The accepted `(prediction, ground_truth)` pairs of the greedy matcher.
pub fn greedy_matches(predictions: &[BBox], ground_truth: &[BBox], iou_threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (p, pred) in predictions.iter().enumerate() {
        for (g, gt) in ground_truth.iter().enumerate() {
            if pred.class_id != gt.class_id {
                continue;
            }
            let score = iou(pred, gt);
            if score >= iou_threshold {
                pairs.push((score, p, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_taken = vec![false; predictions.len()];
    let mut gt_taken = vec![false; ground_truth.len()];
    let mut matched = Vec::new();
    for (_, p, g) in pairs {
        if !pred_taken[p] && !gt_taken[g] {
            pred_taken[p] = true;
            gt_taken[g] = true;
            matched.push((p, g));
        }
    }
    matched
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(class_id: u32, x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(class_id, x, y, w, h).unwrap()
    }

    #[test]
    fn parse_single_line() {
        let boxes = parse_label_file("3 0.5 0.5 0.2 0.1").unwrap();
        assert_eq!(boxes, vec![bx(3, 0.5, 0.5, 0.2, 0.1)]);
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = parse_label_file("1 0.5 0.5 1.3 0.2").unwrap_err();
        match e {
            Error::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("width"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let cases = [
            ("0 0.5 0.5 0.1 0.1\n0 0.5 0.5 0.1\n", 2),
            ("0 0.5 0.5 0.1 0.1\n\n0 a 0.5 0.1 0.1\n", 3),
            ("-1 0.5 0.5 0.1 0.1", 1),
            ("0 0.5 0.5 0 0.1", 1),
            ("0 1.01 0.5 0.1 0.1", 1),
            ("0 0.5 0.5 0.1 nan", 1),
            ("0 0.5 0.5 0.1 0.1 7", 1),
        ];
        for (text, want) in cases {
            match parse_label_file(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn stats_counts() {
        assert_eq!(corpus_stats(&[]), CorpusStats::default());
        let records = vec![
            AnnotationRecord::new("a.jpg", vec![bx(0, 0.1, 0.1, 0.1, 0.1); 3]),
            AnnotationRecord::new("b.jpg", vec![bx(0, 0.2, 0.2, 0.1, 0.1), bx(1, 0.3, 0.3, 0.2, 0.2)]),
        ];
        let stats = corpus_stats(&records);
        assert_eq!(stats.class_histogram.values().sum::<usize>(), 5);
        assert_eq!(stats.class_histogram, BTreeMap::from([(0, 4), (1, 1)]));
        assert_eq!(stats.total_boxes(), 5);
        assert_eq!(stats.center_points[3], (0.2, 0.2));
        assert_eq!(stats.histogram_csv(), "class_id,count\n0,4\n1,1\n");
        assert_eq!(stats.points_csv().lines().count(), 6);
        assert_eq!(records[1].annotation_count(), 2);
    }

    #[test]
    fn iou_cases() {
        let a = bx(0, 0.5, 0.5, 0.4, 0.4);
        assert_eq!(iou(&a, &a), 1.0);
        let b = bx(0, 0.7, 0.5, 0.4, 0.4);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = bx(0, 0.2, 0.2, 0.1, 0.1);
        let d = bx(0, 0.8, 0.8, 0.1, 0.1);
        assert_eq!(iou(&c, &d), 0.0);
    }

    #[test]
    fn accuracy_cases() {
        let gt = vec![bx(0, 0.3, 0.3, 0.2, 0.2), bx(1, 0.7, 0.7, 0.2, 0.2)];
        assert_eq!(detection_accuracy(&gt, &gt, 0.1).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&[], &gt, 0.1).unwrap(), 0.0);
        assert_eq!(detection_accuracy(&[], &[], 0.1).unwrap(), 0.0);
        // class mismatch blocks a perfect overlap
        let wrong = vec![bx(5, 0.3, 0.3, 0.2, 0.2)];
        assert_eq!(detection_accuracy(&wrong, &gt[..1], 0.1).unwrap(), 0.0);
        assert!(detection_accuracy(&gt, &gt, 0.0).is_err());
        assert!(detection_accuracy(&gt, &gt, 1.5).is_err());
    }

    #[test]
    fn one_prediction_two_truths() {
        let gt = vec![bx(0, 0.45, 0.5, 0.2, 0.2), bx(0, 0.6, 0.5, 0.2, 0.2)];
        let pred = vec![bx(0, 0.5, 0.5, 0.2, 0.2)];
        assert!(iou(&pred[0], &gt[0]) > iou(&pred[0], &gt[1]));
        assert!(iou(&pred[0], &gt[1]) >= 0.1);
        assert_eq!(greedy_matches(&pred, &gt, 0.1), vec![(0, 0)]);
        assert_eq!(detection_accuracy(&pred, &gt, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn serialize_uses_shortest_decimal() {
        let boxes = vec![bx(2, 0.1, 0.25, 1.0, 0.3333333333333333)];
        assert_eq!(serialize_label_file(&boxes), "2 0.1 0.25 1 0.3333333333333333\n");
    }
}
