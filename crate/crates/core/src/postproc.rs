//! From probability maps to building counts.

use std::fmt::Write as _;

use crate::data::image::{Mask, ProbMap, RgbImage};
use crate::data::synth::Rect;
use crate::error::{Error, Result};
use crate::eval::{best_row, sweep, threshold_grid};

/// Mean over images of each image's best-F threshold on the 0.01 grid
/// (ties toward the lower threshold).
pub fn select_threshold(val: &[(ProbMap, Mask)], rho: usize) -> Result<f64> {
    Ok(per_image_best(val, rho)?.iter().sum::<f64>() / val.len() as f64)
}

pub fn per_image_best(val: &[(ProbMap, Mask)], rho: usize) -> Result<Vec<f64>> {
    if val.is_empty() {
        return Err(Error::invalid("threshold selection needs at least one validation image"));
    }
    let grid = threshold_grid(0.01)?;
    val.iter()
        .map(|(m, g)| Ok(best_row(&sweep(m, g, &grid, rho)?).expect("nonempty grid").threshold))
        .collect()
}

/// Square `(2r+1)²` minimum filter along one axis; outside the image counts
/// as background.
fn min_pass(src: &[u8], h: usize, w: usize, r: usize, rows: bool) -> Vec<u8> {
    let mut out = vec![0u8; src.len()];
    let (outer, inner) = if rows { (h, w) } else { (w, h) };
    let at = |o: usize, i: usize| if rows { o * w + i } else { i * w + o };
    for o in 0..outer {
        // run length of consecutive ones ending at i
        let mut run = vec![0usize; inner];
        for i in 0..inner {
            run[i] = if src[at(o, i)] != 0 { if i > 0 { run[i - 1] + 1 } else { 1 } } else { 0 };
        }
        for i in 0..inner {
            let hi = i + r;
            out[at(o, i)] = (hi < inner && run[hi] >= 2 * r + 1) as u8;
        }
    }
    out
}

/// Binary erosion by a `(2r+1)×(2r+1)` square; `r = 0` is the identity.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let a = min_pass(&mask.data, h, w, radius, true);
    let b = min_pass(&a, h, w, radius, false);
    Mask { height: h, width: w, data: b }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blob {
    pub area: usize,
    /// Tight bounding box.
    pub bbox: Rect,
    /// Row-major pixel list.
    pub pixels: Vec<(usize, usize)>,
}

/// 8-connected components with at least `min_area` pixels, ordered by their
/// first pixel in row-major order.
pub fn components(mask: &Mask, min_area: usize) -> Vec<Blob> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pixels.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if pixels.len() < min_area {
            continue;
        }
        pixels.sort_unstable();
        let (r0, r1) = (pixels.iter().map(|p| p.0).min().unwrap(), pixels.iter().map(|p| p.0).max().unwrap());
        let (c0, c1) = (pixels.iter().map(|p| p.1).min().unwrap(), pixels.iter().map(|p| p.1).max().unwrap());
        blobs.push(Blob {
            area: pixels.len(),
            bbox: Rect {
                row: r0,
                col: c0,
                height: r1 - r0 + 1,
                width: c1 - c0 + 1,
            },
            pixels,
        });
    }
    blobs
}

#[derive(Clone, Debug)]
pub struct CountOptions {
    pub erode_radius: usize,
    pub min_area: usize,
    pub iou: f64,
    /// Share of a reference box that must lie inside a blob's box for the
    /// blob to cover it.
    pub coverage: f64,
    /// Houses credited per residential hit.
    pub multiplier: f64,
}

impl Default for CountOptions {
    fn default() -> Self {
        CountOptions {
            erode_radius: 1,
            min_area: 4,
            iou: 0.3,
            coverage: 0.5,
            multiplier: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountReport {
    pub human_count: usize,
    pub detected_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub residential_hits: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-blob outcome, parallel to the input boxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobOutcome {
    Match(usize),
    Residential,
    FalsePositive,
}

/// Matches detected boxes against reference boxes.
///
/// A detection whose box covers at least two references (each with
/// `coverage` of its area inside) is a residential hit and consumes them.
/// The rest are matched greedily, highest IoU first, at IoU ≥ `iou`.
/// With k = `multiplier` and R residential hits:
/// precision = (TP + k·R) / (TP + FP + k·R),
/// recall = (TP + k·R) / (TP + k·R + FN).
pub fn count_report(detected: &[Rect], refs: &[Rect], opts: &CountOptions) -> (CountReport, Vec<BlobOutcome>) {
    let mut outcome = vec![BlobOutcome::FalsePositive; detected.len()];
    let mut ref_used = vec![false; refs.len()];
    for (d, b) in detected.iter().enumerate() {
        let covered: Vec<usize> = (0..refs.len())
            .filter(|&j| !ref_used[j] && b.intersection_area(&refs[j]) as f64 >= opts.coverage * refs[j].area() as f64)
            .collect();
        if covered.len() >= 2 {
            outcome[d] = BlobOutcome::Residential;
            for j in covered {
                ref_used[j] = true;
            }
        }
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (d, b) in detected.iter().enumerate() {
        if outcome[d] == BlobOutcome::Residential {
            continue;
        }
        for (j, r) in refs.iter().enumerate() {
            if ref_used[j] {
                continue;
            }
            let iou = b.iou(r);
            if iou >= opts.iou {
                pairs.push((iou, d, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, d, j) in pairs {
        if outcome[d] == BlobOutcome::FalsePositive && !ref_used[j] {
            outcome[d] = BlobOutcome::Match(j);
            ref_used[j] = true;
        }
    }
    let tp = outcome.iter().filter(|o| matches!(o, BlobOutcome::Match(_))).count();
    let res = outcome.iter().filter(|o| **o == BlobOutcome::Residential).count();
    let fp = detected.len() - tp - res;
    let fn_ = ref_used.iter().filter(|u| !**u).count();
    let credited = tp as f64 + opts.multiplier * res as f64;
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };
    let precision = div(credited, credited + fp as f64);
    let recall = div(credited, credited + fn_ as f64);
    let f1 = crate::eval::f_measure(precision, recall);
    (
        CountReport {
            human_count: refs.len(),
            detected_count: detected.len(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            residential_hits: res,
            precision,
            recall,
            f1,
        },
        outcome,
    )
}

/// Box grown by `r` on every side, clipped to the image.
pub fn grow(b: Rect, r: usize, height: usize, width: usize) -> Rect {
    let row = b.row.saturating_sub(r);
    let col = b.col.saturating_sub(r);
    Rect {
        row,
        col,
        height: (b.bottom() + r).min(height) - row,
        width: (b.right() + r).min(width) - col,
    }
}

/// Binary map → erosion → blobs → boxes grown back by the erosion radius.
pub fn detect_boxes(binary: &Mask, opts: &CountOptions) -> Vec<Rect> {
    components(&erode(binary, opts.erode_radius), opts.min_area)
        .into_iter()
        .map(|b| grow(b.bbox, opts.erode_radius, binary.height, binary.width))
        .collect()
}

pub const REPORT_HEADER: &str =
    "image,human_count,detected_count,true_positives,false_positives,false_negatives,residential_hits,precision,recall,f1";

pub fn report_row(name: &str, r: &CountReport) -> String {
    format!(
        "{name},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
        r.human_count,
        r.detected_count,
        r.true_positives,
        r.false_positives,
        r.false_negatives,
        r.residential_hits,
        r.precision,
        r.recall,
        r.f1
    )
}

/// CSV with a comment header stating the residential-credit formula.
pub fn reports_to_csv(rows: &[(String, CountReport)], multiplier: f64) -> String {
    let mut s = format!(
        "# precision=(TP+{m}*R)/(TP+FP+{m}*R); recall=(TP+{m}*R)/(TP+{m}*R+FN); R=residential hits\n{REPORT_HEADER}\n",
        m = multiplier
    );
    for (n, r) in rows {
        let _ = writeln!(s, "{}", report_row(n, r));
    }
    s
}

/// Copy of `img` with each box outlined in `color`.
pub fn overlay(img: &RgbImage, boxes: &[Rect], color: [u8; 3]) -> RgbImage {
    let mut out = img.clone();
    for b in boxes {
        if b.height == 0 || b.width == 0 {
            continue;
        }
        let (r1, c1) = ((b.bottom() - 1).min(img.height - 1), (b.right() - 1).min(img.width - 1));
        for c in b.col..=c1 {
            out.set(b.row, c, color);
            out.set(r1, c, color);
        }
        for r in b.row..=r1 {
            out.set(r, b.col, color);
            out.set(r, c1, color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(row: usize, col: usize, height: usize, width: usize) -> Rect {
        Rect { row, col, height, width }
    }

    #[test]
    fn erosion_examples() {
        let m = Mask::from_fn(5, 5, |r, c| (1..4).contains(&r) && (1..4).contains(&c));
        assert_eq!(erode(&m, 0), m);
        let e = erode(&m, 1);
        assert_eq!(e.count(), 1);
        assert!(e.get(2, 2));
        // the border is background
        let full = Mask::from_fn(3, 3, |_, _| true);
        assert_eq!(erode(&full, 1).count(), 1);
    }

    #[test]
    fn diagonal_touch_is_one_blob() {
        let m = Mask::from_fn(6, 6, |r, c| (r < 2 && c < 2) || ((2..4).contains(&r) && (2..4).contains(&c)));
        let b = components(&m, 1);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].bbox, rect(0, 0, 4, 4));
        assert_eq!(components(&m, 9).len(), 0);
    }

    #[test]
    fn perfect_and_residential_matching() {
        let refs = vec![rect(0, 0, 10, 10), rect(20, 20, 10, 10), rect(40, 0, 10, 10)];
        let (r, _) = count_report(&refs, &refs, &CountOptions::default());
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (3, 0, 0));
        assert_eq!((r.precision, r.recall), (1.0, 1.0));

        let merged = vec![rect(0, 0, 30, 30), rect(40, 0, 10, 10), rect(100, 100, 5, 5)];
        let (r, o) = count_report(&merged, &refs, &CountOptions::default());
        assert_eq!(o, vec![BlobOutcome::Residential, BlobOutcome::Match(2), BlobOutcome::FalsePositive]);
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives, r.residential_hits), (1, 1, 0, 1));
        assert_eq!(r.detected_count, 3);
        assert_eq!(r.precision, 3.0 / 4.0);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn credit_formula_matches_reference_row() {
        // 106 TP, 18 FP, 33 FN, 13 residential hits → 132/150 and 132/165
        let cell = |k: usize| rect(40 * (k / 20), 40 * (k % 20), 10, 10);
        let mut refs = Vec::new();
        let mut det = Vec::new();
        for k in 0..106 {
            refs.push(cell(k));
            det.push(cell(k));
        }
        for k in 106..119 {
            let a = cell(k);
            refs.push(a);
            refs.push(rect(a.row + 15, a.col, 10, 10));
            det.push(rect(a.row, a.col, 25, 10));
        }
        for k in 119..152 {
            refs.push(cell(k));
        }
        for k in 152..170 {
            det.push(cell(k));
        }
        let (r, _) = count_report(&det, &refs, &CountOptions::default());
        assert_eq!(r.human_count, 165);
        assert_eq!(r.detected_count, 137);
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives, r.residential_hits), (106, 18, 33, 13));
        assert!((r.precision - 0.88).abs() < 1e-12);
        assert!((r.recall - 0.80).abs() < 1e-12);
    }
}
