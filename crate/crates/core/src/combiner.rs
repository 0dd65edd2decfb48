//! The RA-Seg / L-Seg classifier tree and coordinate descent over its
//! threshold triplet.
//!
//! A pixel is residential when `RA ≥ L1`; residential pixels are labelled
//! with `L-Seg ≥ L2`, the rest with `L-Seg ≥ L3`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::image::{Mask, ProbMap, Region};
use crate::data::patches::{Grid, LABEL_WINDOW};
use crate::error::{Error, Result};
use crate::eval::{relaxed_scores, sweep_counts, Aggregate, Counts};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coord {
    L1,
    L2,
    L3,
}

impl Coord {
    pub fn name(self) -> &'static str {
        match self {
            Coord::L1 => "L1",
            Coord::L2 => "L2",
            Coord::L3 => "L3",
        }
    }

    fn get(self, t: &Triplet) -> f64 {
        match self {
            Coord::L1 => t.l1,
            Coord::L2 => t.l2,
            Coord::L3 => t.l3,
        }
    }

    fn with(self, t: Triplet, v: f64) -> Triplet {
        match self {
            Coord::L1 => Triplet { l1: v, ..t },
            Coord::L2 => Triplet { l2: v, ..t },
            Coord::L3 => Triplet { l3: v, ..t },
        }
    }
}

/// Sweep order, repeated.
pub const ORDER: [Coord; 6] = [Coord::L3, Coord::L1, Coord::L2, Coord::L3, Coord::L2, Coord::L1];

#[derive(Clone, Debug)]
pub struct TreeInputs {
    /// Residential probability per pixel.
    pub ra: ProbMap,
    pub lseg: ProbMap,
    pub gt: Mask,
}

/// Nearest-neighbour expansion of per-tile RA outputs (grid order) to a
/// pixel map; pixels outside the grid interior are no-data.
pub fn ra_to_pixels(grid: &Grid, probs: &[f32], height: usize, width: usize) -> Result<ProbMap> {
    if probs.len() != grid.centers.len() {
        return Err(Error::shape(format!(
            "{} RA outputs for {} grid tiles",
            probs.len(),
            grid.centers.len()
        )));
    }
    let mut m = ProbMap::empty(height, width, grid.interior);
    let half = LABEL_WINDOW / 2;
    for (&(r, c), &p) in grid.centers.iter().zip(probs) {
        for rr in r - half..r + half {
            m.data[rr * width + c - half..rr * width + c + half].fill(p);
        }
    }
    Ok(m)
}

fn aligned(inp: &TreeInputs) -> Result<()> {
    let s = |m: &ProbMap| (m.height, m.width);
    if s(&inp.ra) != s(&inp.lseg) || s(&inp.lseg) != (inp.gt.height, inp.gt.width) {
        return Err(Error::shape(format!(
            "tree inputs disagree: RA {:?}, L-Seg {:?}, GT {:?}",
            s(&inp.ra),
            s(&inp.lseg),
            (inp.gt.height, inp.gt.width)
        )));
    }
    Ok(())
}

pub fn apply_tree(ra: &ProbMap, lseg: &ProbMap, t: Triplet) -> Result<Mask> {
    if (ra.height, ra.width) != (lseg.height, lseg.width) {
        return Err(Error::shape("RA and L-Seg maps differ in size"));
    }
    let data = ra
        .data
        .iter()
        .zip(&lseg.data)
        .map(|(&a, &l)| {
            let thr = if a as f64 >= t.l1 { t.l2 } else { t.l3 };
            (l as f64 >= thr) as u8
        })
        .collect();
    Mask::from_raw(ra.height, ra.width, data)
}

/// Valid region shared by both maps.
fn joint_valid(inp: &TreeInputs) -> Region {
    let (a, b) = (inp.ra.valid, inp.lseg.valid);
    let row = a.row.max(b.row);
    let col = a.col.max(b.col);
    let bottom = (a.row + a.rows).min(b.row + b.rows);
    let right = (a.col + a.cols).min(b.col + b.cols);
    Region {
        row,
        col,
        rows: bottom.saturating_sub(row),
        cols: right.saturating_sub(col),
    }
}

/// Mean F of the tree output over the dataset (valid regions only).
pub fn tree_mean_f(data: &[TreeInputs], t: Triplet, rho: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty tree dataset"));
    }
    let fs: Vec<f64> = data
        .par_iter()
        .map(|inp| {
            aligned(inp)?;
            let v = joint_valid(inp);
            let out = apply_tree(&inp.ra, &inp.lseg, t)?.crop(v);
            let (c, p) = relaxed_scores(&out, &inp.gt.crop(v), rho)?;
            Ok(crate::eval::f_measure(c, p))
        })
        .collect::<Result<_>>()?;
    Ok(fs.iter().sum::<f64>() / fs.len() as f64)
}

/// Mean F for every grid value of one coordinate. L2 and L3 sweeps reduce to
/// a single-map sweep: pixels governed by the fixed leaf get ±∞ surrogates.
fn coordinate_curve(data: &[TreeInputs], t: Triplet, coord: Coord, grid: &[f64], rho: usize) -> Result<Vec<f64>> {
    if coord == Coord::L1 {
        return grid.iter().map(|&v| tree_mean_f(data, Coord::L1.with(t, v), rho)).collect();
    }
    let per: Vec<Vec<Counts>> = data
        .par_iter()
        .map(|inp| {
            aligned(inp)?;
            let v = joint_valid(inp);
            let mut q = ProbMap::empty(inp.lseg.height, inp.lseg.width, v);
            for r in v.row..v.row + v.rows {
                for c in v.col..v.col + v.cols {
                    let i = r * inp.lseg.width + c;
                    let (a, l) = (inp.ra.data[i] as f64, inp.lseg.data[i]);
                    let swept = (a >= t.l1) == (coord == Coord::L2);
                    q.data[i] = if swept {
                        l
                    } else {
                        let fixed = if coord == Coord::L2 { t.l3 } else { t.l2 };
                        if l as f64 >= fixed {
                            f32::INFINITY
                        } else {
                            f32::NEG_INFINITY
                        }
                    };
                }
            }
            sweep_counts(&q, &inp.gt, grid, rho)
        })
        .collect::<Result<_>>()?;
    Ok((0..grid.len())
        .map(|k| per.iter().map(|c| c[k].row(grid[k]).f_measure).sum::<f64>() / per.len() as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// `None` for the initial row.
    pub coord: Option<Coord>,
    pub triplet: Triplet,
    pub mean_f: f64,
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub triplet: Triplet,
    pub mean_f: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct DescentOptions {
    pub rho: usize,
    /// After convergence on the grid, also try midpoints ±step/2 around each
    /// coordinate until no move helps.
    pub half_step: bool,
    pub max_steps: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            rho: 3,
            half_step: false,
            max_steps: 1000,
        }
    }
}

/// Cyclic coordinate descent in [`ORDER`], starting from `(L1, L2, L3 = L2)`.
/// Each step sweeps one coordinate over `grid` and moves only on strict
/// improvement of mean F (ties keep the earliest grid value). Stops once all
/// three coordinates have been swept since the last improvement, counting the
/// improving sweep itself, so the result is coordinate-wise optimal.
pub fn optimize_triplet(data: &[TreeInputs], grid: &[f64], init: (f64, f64), opts: &DescentOptions) -> Result<DescentResult> {
    if data.is_empty() {
        return Err(Error::invalid("empty tree dataset"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    let mut t = Triplet {
        l1: init.0,
        l2: init.1,
        l3: init.1,
    };
    let mut f = tree_mean_f(data, t, opts.rho)?;
    let mut trace = vec![TraceRow {
        step: 0,
        coord: None,
        triplet: t,
        mean_f: f,
    }];
    let mut settled: Vec<Coord> = Vec::new();
    let mut step = 0;
    let mut run = |values: &dyn Fn(&Triplet, Coord) -> Vec<f64>,
                   t: &mut Triplet,
                   f: &mut f64,
                   trace: &mut Vec<TraceRow>,
                   step: &mut usize|
     -> Result<()> {
        settled.clear();
        for &coord in ORDER.iter().cycle() {
            if settled.len() == 3 || *step >= opts.max_steps {
                break;
            }
            let vals = values(t, coord);
            let curve = if vals.as_slice() == grid {
                coordinate_curve(data, *t, coord, grid, opts.rho)?
            } else {
                vals.iter()
                    .map(|&v| tree_mean_f(data, coord.with(*t, v), opts.rho))
                    .collect::<Result<_>>()?
            };
            *step += 1;
            let mut best = (coord.get(t), *f);
            for (v, g) in vals.iter().zip(&curve) {
                if *g > best.1 {
                    best = (*v, *g);
                }
            }
            if best.1 > *f {
                *t = coord.with(*t, best.0);
                *f = best.1;
                settled.clear();
            }
            if !settled.contains(&coord) {
                settled.push(coord);
            }
            trace.push(TraceRow {
                step: *step,
                coord: Some(coord),
                triplet: *t,
                mean_f: *f,
            });
        }
        Ok(())
    };
    run(&|_, _| grid.to_vec(), &mut t, &mut f, &mut trace, &mut step)?;
    if opts.half_step && grid.len() > 1 {
        let h = (grid[1] - grid[0]) / 2.0;
        run(
            &|t, c| {
                let v = c.get(t);
                vec![(v - h).max(0.0), (v + h).min(1.0)]
            },
            &mut t,
            &mut f,
            &mut trace,
            &mut step,
        )?;
    }
    Ok(DescentResult { triplet: t, mean_f: f, trace })
}

/// Best mean F over every triplet of the grid, scanned L1 ⊳ L2 ⊳ L3 with
/// ties kept at the first hit.
pub fn exhaustive_optimum(data: &[TreeInputs], grid: &[f64], rho: usize) -> Result<(Triplet, f64)> {
    let mut best: Option<(Triplet, f64)> = None;
    for &l1 in grid {
        for &l2 in grid {
            for &l3 in grid {
                let t = Triplet { l1, l2, l3 };
                let f = tree_mean_f(data, t, rho)?;
                if best.map_or(true, |(_, b)| f > b) {
                    best = Some((t, f));
                }
            }
        }
    }
    best.ok_or_else(|| Error::invalid("empty threshold grid"))
}

/// Best single-threshold mean F of the L-Seg maps alone.
pub fn lseg_baseline(data: &[TreeInputs], grid: &[f64], rho: usize) -> Result<(f64, f64)> {
    let maps: Vec<(ProbMap, Mask)> = data.iter().map(|d| (d.lseg.clone(), d.gt.clone())).collect();
    crate::eval::best_mean_f(&maps, grid, rho, Aggregate::MeanOverImages)
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,coordinate,L1,L2,L3,mean_f\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4},{:.6}",
            r.step,
            r.coord.map_or("init", Coord::name),
            r.triplet.l1,
            r.triplet.l2,
            r.triplet.l3,
            r.mean_f
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f32]) -> ProbMap {
        ProbMap::from_raw(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_built_tree() {
        #[rustfmt::skip]
        let ra = map(4, 4, &[
            0.9, 0.9, 0.1, 0.1,
            0.9, 0.9, 0.1, 0.1,
            0.1, 0.1, 0.1, 0.1,
            0.5, 0.5, 0.5, 0.5,
        ]);
        #[rustfmt::skip]
        let l = map(4, 4, &[
            0.3, 0.6, 0.3, 0.8,
            0.2, 0.7, 0.6, 0.9,
            0.3, 0.3, 0.3, 0.3,
            0.3, 0.4, 0.6, 0.8,
        ]);
        let out = apply_tree(&ra, &l, Triplet { l1: 0.5, l2: 0.25, l3: 0.65 }).unwrap();
        #[rustfmt::skip]
        let want = vec![
            1, 1, 0, 1,
            0, 1, 0, 1,
            0, 0, 0, 0,
            1, 1, 1, 1,
        ];
        assert_eq!(out.data, want);
    }

    #[test]
    fn collapse_when_leaves_agree() {
        let ra = map(1, 4, &[0.0, 0.3, 0.7, 1.0]);
        let l = map(1, 4, &[0.2, 0.5, 0.5, 0.9]);
        for l1 in [0.0, 0.5, 1.0] {
            let out = apply_tree(&ra, &l, Triplet { l1, l2: 0.5, l3: 0.5 }).unwrap();
            assert_eq!(out, l.binarize(0.5));
        }
    }

    #[test]
    fn ra_expansion_fills_tiles() {
        let g = crate::data::patches::grid_centers(288, 288);
        assert_eq!(g.centers.len(), 9);
        let probs: Vec<f32> = (0..9).map(|k| k as f32 / 10.0).collect();
        let m = ra_to_pixels(&g, &probs, 288, 288).unwrap();
        assert_eq!(m.get(120, 120), 0.0);
        assert_eq!(m.get(135, 151), 0.1);
        assert_eq!(m.get(167, 167), 0.8);
        assert!(m.get(119, 130).is_nan());
        assert!(m.get(168, 130).is_nan());
    }
}
