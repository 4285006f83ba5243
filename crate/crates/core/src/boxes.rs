//! Ground-truth box sets and predicted detections.

use crate::error::CoreError;
use ndarray::Array2;

/// Ground-truth boxes and class labels for one image.
///
/// Boxes are absolute-pixel `[x1, y1, x2, y2]` with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub boxes: Array2<f64>,
    pub classes: Vec<usize>,
}

impl BoxSet {
    pub fn new(boxes: Array2<f64>, classes: Vec<usize>) -> Result<Self, CoreError> {
        if boxes.shape()[1] != 4 && !(boxes.is_empty() && classes.is_empty()) {
            return Err(CoreError::InvalidBoxes(format!(
                "expected (N,4) boxes, got {:?}",
                boxes.shape()
            )));
        }
        if boxes.shape()[0] != classes.len() {
            return Err(CoreError::InvalidBoxes(format!(
                "{} boxes but {} classes",
                boxes.shape()[0],
                classes.len()
            )));
        }
        for row in boxes.rows() {
            if !(row[0] < row[2] && row[1] < row[3]) {
                return Err(CoreError::InvalidBoxes(format!(
                    "degenerate box [{}, {}, {}, {}]",
                    row[0], row[1], row[2], row[3]
                )));
            }
        }
        Ok(BoxSet { boxes, classes })
    }

    pub fn empty() -> Self {
        BoxSet {
            boxes: Array2::zeros((0, 4)),
            classes: Vec::new(),
        }
    }

    /// Builds from `(x1,y1,x2,y2)` tuples.
    pub fn from_rows(rows: &[[f64; 4]], classes: Vec<usize>) -> Result<Self, CoreError> {
        let mut arr = Array2::zeros((rows.len(), 4));
        for (i, r) in rows.iter().enumerate() {
            for j in 0..4 {
                arr[(i, j)] = r[j];
            }
        }
        Self::new(arr, classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn row(&self, i: usize) -> [f64; 4] {
        [
            self.boxes[(i, 0)],
            self.boxes[(i, 1)],
            self.boxes[(i, 2)],
            self.boxes[(i, 3)],
        ]
    }

    /// Clips boxes to `[0,w] x [0,h]`, dropping any that collapse.
    pub fn clipped(&self, width: f64, height: f64) -> Self {
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for i in 0..self.len() {
            let b = self.row(i);
            let c = [
                b[0].clamp(0.0, width),
                b[1].clamp(0.0, height),
                b[2].clamp(0.0, width),
                b[3].clamp(0.0, height),
            ];
            if c[0] < c[2] && c[1] < c[3] {
                rows.push(c);
                classes.push(self.classes[i]);
            }
        }
        Self::from_rows(&rows, classes).expect("clipped boxes are valid")
    }

    /// Distinct class ids present, ascending.
    pub fn distinct_classes(&self) -> Vec<usize> {
        let mut cs = self.classes.clone();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}

/// Scored predictions for one image, sorted by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    pub boxes: Array2<f64>,
    pub classes: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Detections {
    /// Builds a detection record, sorting by descending score.
    pub fn new(
        boxes: Array2<f64>,
        classes: Vec<usize>,
        scores: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if boxes.shape()[0] != classes.len() || classes.len() != scores.len() {
            return Err(CoreError::InvalidBoxes(
                "boxes/classes/scores length mismatch".into(),
            ));
        }
        for &s in &scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(CoreError::InvalidBoxes(format!("score {s} outside [0,1]")));
            }
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut sb = Array2::zeros((order.len(), 4));
        let mut sc = Vec::with_capacity(order.len());
        let mut ss = Vec::with_capacity(order.len());
        for (dst, &src) in order.iter().enumerate() {
            for j in 0..4 {
                sb[(dst, j)] = boxes[(src, j)];
            }
            sc.push(classes[src]);
            ss.push(scores[src]);
        }
        Ok(Detections {
            boxes: sb,
            classes: sc,
            scores: ss,
        })
    }

    pub fn empty() -> Self {
        Detections {
            boxes: Array2::zeros((0, 4)),
            classes: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn row(&self, i: usize) -> [f64; 4] {
        [
            self.boxes[(i, 0)],
            self.boxes[(i, 1)],
            self.boxes[(i, 2)],
            self.boxes[(i, 3)],
        ]
    }

    /// Keeps detections with `score >= threshold`.
    pub fn filter_by_score(&self, threshold: f64) -> Detections {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.scores[i] >= threshold)
            .collect();
        self.take(&keep)
    }

    /// Per-class greedy non-maximum suppression at the given IoU threshold.
    pub fn nms_per_class(&self, iou_threshold: f64) -> Detections {
        let mut keep = Vec::new();
        let mut suppressed = vec![false; self.len()];
        // Records are already sorted by descending score.
        for i in 0..self.len() {
            if suppressed[i] {
                continue;
            }
            keep.push(i);
            for j in (i + 1)..self.len() {
                if !suppressed[j]
                    && self.classes[j] == self.classes[i]
                    && iou(self.row(i), self.row(j)) > iou_threshold
                {
                    suppressed[j] = true;
                }
            }
        }
        self.take(&keep)
    }

    fn take(&self, idx: &[usize]) -> Detections {
        let mut boxes = Array2::zeros((idx.len(), 4));
        let mut classes = Vec::with_capacity(idx.len());
        let mut scores = Vec::with_capacity(idx.len());
        for (dst, &src) in idx.iter().enumerate() {
            for j in 0..4 {
                boxes[(dst, j)] = self.boxes[(src, j)];
            }
            classes.push(self.classes[src]);
            scores.push(self.scores[src]);
        }
        Detections {
            boxes,
            classes,
            scores,
        }
    }
}

/// Intersection-over-union of two xyxy boxes.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_box() {
        assert!(BoxSet::from_rows(&[[5.0, 5.0, 5.0, 9.0]], vec![0]).is_err());
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = [2.0, 3.0, 10.0, 12.0];
        assert!((iou(b, b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        assert_eq!(iou([0.0, 0.0, 1.0, 1.0], [5.0, 5.0, 6.0, 6.0]), 0.0);
    }

    #[test]
    fn iou_quarter_overlap() {
        // 2x2 boxes overlapping in a 1x1 corner: inter 1, union 7.
        let v = iou([0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 3.0, 3.0]);
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn detections_sorted_descending() {
        let d = Detections::new(
            Array2::zeros((3, 4)),
            vec![0, 1, 2],
            vec![0.2, 0.9, 0.5],
        )
        .unwrap();
        assert_eq!(d.scores, vec![0.9, 0.5, 0.2]);
        assert_eq!(d.classes, vec![1, 2, 0]);
    }

    #[test]
    fn nms_suppresses_same_class_overlap() {
        let d = Detections::new(
            ndarray::arr2(&[[0.0, 0.0, 10.0, 10.0], [0.5, 0.5, 10.0, 10.0]]),
            vec![1, 1],
            vec![0.9, 0.85],
        )
        .unwrap();
        let kept = d.nms_per_class(0.5);
        assert_eq!(kept.len(), 1);
        assert!((kept.scores[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_different_classes() {
        let d = Detections::new(
            ndarray::arr2(&[[0.0, 0.0, 10.0, 10.0], [0.5, 0.5, 10.0, 10.0]]),
            vec![0, 1],
            vec![0.9, 0.85],
        )
        .unwrap();
        assert_eq!(d.nms_per_class(0.5).len(), 2);
    }

    #[test]
    fn clipping_drops_collapsed_boxes() {
        let b = BoxSet::from_rows(
            &[[-5.0, -5.0, 4.0, 4.0], [20.0, 20.0, 30.0, 30.0]],
            vec![0, 1],
        )
        .unwrap();
        let c = b.clipped(16.0, 16.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c.row(0), [0.0, 0.0, 4.0, 4.0]);
    }
}
