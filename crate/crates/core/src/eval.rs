//! Relaxed correctness / completeness, threshold sweeps and mean F.
//!
//! A predicted pixel is correct when some ground-truth pixel lies within
//! Euclidean distance ρ; completeness swaps the roles. Empty denominators
//! score 1. Metrics are computed over a map's valid region only.

use std::fmt::Write as _;

use crate::data::image::{Mask, ProbMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRow {
    pub threshold: f64,
    pub correctness: f64,
    pub completeness: f64,
    pub f_measure: f64,
}

pub fn f_measure(correctness: f64, completeness: f64) -> f64 {
    if correctness + completeness > 0.0 {
        2.0 * correctness * completeness / (correctness + completeness)
    } else {
        0.0
    }
}

/// Offsets `(dr, dc)` with `dr² + dc² ≤ ρ²`.
pub fn disk_offsets(rho: usize) -> Vec<(isize, isize)> {
    let r = rho as isize;
    let mut v = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                v.push((dr, dc));
            }
        }
    }
    v
}

pub fn dilate_disk(mask: &Mask, rho: usize) -> Mask {
    if rho == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height as isize, mask.width as isize);
    let offs = disk_offsets(rho);
    let mut out = Mask::new(mask.height, mask.width);
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r as usize, c as usize) {
                continue;
            }
            for &(dr, dc) in &offs {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && rr < h && cc >= 0 && cc < w {
                    out.set(rr as usize, cc as usize, true);
                }
            }
        }
    }
    out
}

fn same_shape(a: &Mask, b: &Mask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!(
            "prediction {}×{} vs ground truth {}×{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `(correctness, completeness)` of a binary prediction.
pub fn relaxed_scores(pred: &Mask, gt: &Mask, rho: usize) -> Result<(f64, f64)> {
    same_shape(pred, gt)?;
    let gt_d = dilate_disk(gt, rho);
    let pred_d = dilate_disk(pred, rho);
    let (mut p, mut p_hit, mut g, mut g_hit) = (0, 0, 0, 0);
    for i in 0..pred.data.len() {
        if pred.data[i] != 0 {
            p += 1;
            p_hit += gt_d.data[i] as usize;
        }
        if gt.data[i] != 0 {
            g += 1;
            g_hit += pred_d.data[i] as usize;
        }
    }
    Ok((ratio(p_hit, p), ratio(g_hit, g)))
}

/// `k/n` for `k = 1..=n` with `n = round(1/step)`; the default grid is step 0.01.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step {step} outside (0,1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((1..=n).map(|k| k as f64 / n as f64).collect())
}

/// The valid region of `map` and the matching crop of `gt`.
fn restrict(map: &ProbMap, gt: &Mask) -> Result<(ProbMap, Mask)> {
    if (map.height, map.width) != (gt.height, gt.width) {
        return Err(Error::shape(format!(
            "map {}×{} vs ground truth {}×{}",
            map.height, map.width, gt.height, gt.width
        )));
    }
    Ok((map.crop_valid(), gt.crop(map.valid)))
}

/// Sorted (descending) values; `count_ge(t)` is a binary search.
struct Desc(Vec<f64>);

impl Desc {
    fn new(mut v: Vec<f64>) -> Self {
        v.sort_by(|a, b| b.total_cmp(a));
        Desc(v)
    }

    fn count_ge(&self, t: f64) -> usize {
        self.0.partition_point(|&x| x >= t)
    }
}

/// Raw confusion counts at one threshold: predicted positives, those within
/// ρ of ground truth, ground-truth positives, those within ρ of a prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub pred: usize,
    pub pred_hit: usize,
    pub gt: usize,
    pub gt_hit: usize,
}

impl Counts {
    pub fn row(&self, threshold: f64) -> ScoreRow {
        let c = ratio(self.pred_hit, self.pred);
        let p = ratio(self.gt_hit, self.gt);
        ScoreRow {
            threshold,
            correctness: c,
            completeness: p,
            f_measure: f_measure(c, p),
        }
    }
}

/// Per-threshold counts for one image in a single pass: the ground truth is
/// dilated once, and the probability map is max-filtered over the disk so a
/// GT pixel is reached at threshold t exactly when its filtered value ≥ t.
pub fn sweep_counts(map: &ProbMap, gt: &Mask, thresholds: &[f64], rho: usize) -> Result<Vec<Counts>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("thresholds must be sorted ascending"));
    }
    let (map, gt) = restrict(map, gt)?;
    let gt_d = dilate_disk(&gt, rho);
    let (h, w) = (map.height as isize, map.width as isize);
    let offs = disk_offsets(rho);
    let mut all = Vec::with_capacity(map.data.len());
    let mut near = Vec::new();
    let mut reach = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = (r * w + c) as usize;
            let p = map.data[i] as f64;
            all.push(p);
            if gt_d.data[i] != 0 {
                near.push(p);
            }
            if gt.data[i] != 0 {
                let mut m = f64::NEG_INFINITY;
                for &(dr, dc) in &offs {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && rr < h && cc >= 0 && cc < w {
                        m = m.max(map.data[(rr * w + cc) as usize] as f64);
                    }
                }
                reach.push(m);
            }
        }
    }
    let g = reach.len();
    let (all, near, reach) = (Desc::new(all), Desc::new(near), Desc::new(reach));
    Ok(thresholds
        .iter()
        .map(|&t| Counts {
            pred: all.count_ge(t),
            pred_hit: near.count_ge(t),
            gt: g,
            gt_hit: reach.count_ge(t),
        })
        .collect())
}

/// One [`ScoreRow`] per threshold; binarisation uses `p ≥ t`.
pub fn sweep(map: &ProbMap, gt: &Mask, thresholds: &[f64], rho: usize) -> Result<Vec<ScoreRow>> {
    Ok(sweep_counts(map, gt, thresholds, rho)?
        .iter()
        .zip(thresholds)
        .map(|(c, &t)| c.row(t))
        .collect())
}

/// Row with the highest F; ties go to the lower threshold.
pub fn best_row(rows: &[ScoreRow]) -> Option<ScoreRow> {
    rows.iter().copied().fold(None, |best: Option<ScoreRow>, r| match best {
        Some(b) if b.f_measure >= r.f_measure => Some(b),
        _ => Some(r),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregate {
    /// Unweighted mean of per-image F.
    #[default]
    MeanOverImages,
    /// F from counts pooled over all images.
    Pooled,
}

/// Aggregate F at every threshold.
pub fn mean_f_curve(
    maps: &[(ProbMap, Mask)],
    thresholds: &[f64],
    rho: usize,
    agg: Aggregate,
) -> Result<Vec<f64>> {
    if maps.is_empty() {
        return Err(Error::invalid("mean F over an empty image list"));
    }
    use rayon::prelude::*;
    let counts: Vec<Vec<Counts>> = maps
        .par_iter()
        .map(|(m, g)| sweep_counts(m, g, thresholds, rho))
        .collect::<Result<_>>()?;
    Ok((0..thresholds.len())
        .map(|k| match agg {
            Aggregate::MeanOverImages => {
                counts.iter().map(|c| c[k].row(thresholds[k]).f_measure).sum::<f64>() / maps.len() as f64
            }
            Aggregate::Pooled => {
                let mut s = Counts::default();
                for c in &counts {
                    s.pred += c[k].pred;
                    s.pred_hit += c[k].pred_hit;
                    s.gt += c[k].gt;
                    s.gt_hit += c[k].gt_hit;
                }
                s.row(thresholds[k]).f_measure
            }
        })
        .collect())
}

pub fn mean_f(maps: &[(ProbMap, Mask)], threshold: f64, rho: usize) -> Result<f64> {
    Ok(mean_f_curve(maps, &[threshold], rho, Aggregate::MeanOverImages)?[0])
}

/// `(threshold, mean F)` maximising mean F over the grid; ties go low.
pub fn best_mean_f(maps: &[(ProbMap, Mask)], thresholds: &[f64], rho: usize, agg: Aggregate) -> Result<(f64, f64)> {
    let curve = mean_f_curve(maps, thresholds, rho, agg)?;
    let mut best = (thresholds[0], curve[0]);
    for (t, f) in thresholds.iter().zip(&curve) {
        if *f > best.1 {
            best = (*t, *f);
        }
    }
    Ok(best)
}

pub const CSV_HEADER: &str = "threshold,correctness,completeness,f_measure";

pub fn rows_to_csv(rows: &[ScoreRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6}",
            r.threshold, r.correctness, r.completeness, r.f_measure
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(h: usize, w: usize, pts: &[(usize, usize)]) -> Mask {
        Mask::from_fn(h, w, |r, c| pts.contains(&(r, c)))
    }

    #[test]
    fn disk_membership() {
        let gt = single(9, 9, &[(4, 1)]);
        let at3 = single(9, 9, &[(4, 4)]);
        assert_eq!(relaxed_scores(&at3, &gt, 3).unwrap().0, 1.0);
        let off13 = single(9, 9, &[(5, 4)]);
        assert_eq!(relaxed_scores(&off13, &gt, 3).unwrap().0, 0.0);
    }

    #[test]
    fn empty_conventions() {
        let z = Mask::new(4, 4);
        assert_eq!(relaxed_scores(&z, &z, 1).unwrap(), (1.0, 1.0));
        let one = single(4, 4, &[(0, 0)]);
        assert_eq!(relaxed_scores(&one, &z, 1).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn constant_half_map() {
        let map = ProbMap::from_raw(2, 2, vec![0.5; 4]).unwrap();
        let gt = single(2, 2, &[(0, 0)]);
        let rows = sweep(&map, &gt, &[0.4, 0.6], 0).unwrap();
        assert_eq!(rows[0].completeness, 1.0);
        assert_eq!(rows[0].correctness, 0.25);
        assert_eq!(rows[1].correctness, 1.0);
        assert_eq!(rows[1].completeness, 0.0);
    }

    #[test]
    fn grid_and_csv() {
        let g = threshold_grid(0.01).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[99], 1.0);
        let csv = rows_to_csv(&[ScoreRow {
            threshold: 0.5,
            correctness: 1.0,
            completeness: 0.25,
            f_measure: 0.4,
        }]);
        assert_eq!(csv, "threshold,correctness,completeness,f_measure\n0.500000,1.000000,0.250000,0.400000\n");
    }

    #[test]
    fn mean_f_basics() {
        let gt = single(3, 3, &[(1, 1)]);
        let good = ProbMap::from_raw(3, 3, gt.data.iter().map(|&v| v as f32).collect()).unwrap();
        let bad = ProbMap::from_raw(3, 3, gt.data.iter().map(|&v| 1.0 - v as f32).collect()).unwrap();
        assert_eq!(mean_f(&[(good.clone(), gt.clone())], 0.5, 0).unwrap(), 1.0);
        assert_eq!(mean_f(&[(good, gt.clone()), (bad, gt)], 0.5, 0).unwrap(), 0.5);
        assert!(mean_f(&[], 0.5, 0).is_err());
    }
}
