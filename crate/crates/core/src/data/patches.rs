//! Co-centred patch windows, quota sampling of training centres, the
//! inference grid and residential categories.
//!
//! A window of even width `w` centred at pixel `p` covers rows and columns
//! `p − w/2 ..= p + w/2 − 1`.

use rand::seq::index;
use rand::Rng;

use crate::data::image::{Mask, Region, RgbImage};
use crate::data::synth::{ObjectClass, Rect, SceneObject};
use crate::error::{Error, Result};

pub const LOCAL_WINDOW: usize = 64;
pub const GLOBAL_WINDOW: usize = 256;
pub const LABEL_WINDOW: usize = 16;

/// Pixel centre `(row, col)`.
pub type Center = (usize, usize);

pub fn window_region(center: Center, w: usize) -> Option<Region> {
    let (r, c) = center;
    if r < w / 2 || c < w / 2 {
        return None;
    }
    Some(Region {
        row: r - w / 2,
        col: c - w / 2,
        rows: w,
        cols: w,
    })
}

fn fits(region: Region, height: usize, width: usize) -> bool {
    region.row + region.rows <= height && region.col + region.cols <= width
}

/// `W(I, p, w)` as planar CHW floats scaled to `[0,1]`.
pub fn image_window(img: &RgbImage, center: Center, w: usize) -> Result<Vec<f32>> {
    let reg = window_region(center, w)
        .filter(|r| fits(*r, img.height, img.width))
        .ok_or_else(|| {
            Error::invalid(format!(
                "{w}×{w} window at {center:?} leaves the {}×{} image",
                img.height, img.width
            ))
        })?;
    let mut out = vec![0f32; 3 * w * w];
    for r in 0..w {
        let row = &img.data[((reg.row + r) * img.width + reg.col) * 3..((reg.row + r) * img.width + reg.col + w) * 3];
        for (c, px) in row.chunks_exact(3).enumerate() {
            for k in 0..3 {
                out[k * w * w + r * w + c] = px[k] as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

/// `W(M, p, w)` as row-major 0/1 bytes.
pub fn mask_window(mask: &Mask, center: Center, w: usize) -> Result<Vec<u8>> {
    let reg = window_region(center, w)
        .filter(|r| fits(*r, mask.height, mask.width))
        .ok_or_else(|| Error::invalid(format!("{w}×{w} label window at {center:?} leaves the mask")))?;
    Ok(mask.crop(reg).data)
}

/// A window filled with per-channel constants (the blank pathway input).
pub fn constant_window(means: [f32; 3], w: usize) -> Vec<f32> {
    let mut out = vec![0f32; 3 * w * w];
    for k in 0..3 {
        out[k * w * w..(k + 1) * w * w].fill(means[k]);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchTriple {
    pub center: Center,
    pub local: Vec<f32>,
    pub global: Vec<f32>,
    pub label: Vec<u8>,
}

impl PatchTriple {
    pub fn is_positive(&self) -> bool {
        self.label.iter().any(|&v| v != 0)
    }
}

pub fn extract_triple(img: &RgbImage, mask: &Mask, center: Center) -> Result<PatchTriple> {
    Ok(PatchTriple {
        center,
        local: image_window(img, center, LOCAL_WINDOW)?,
        global: image_window(img, center, GLOBAL_WINDOW)?,
        label: mask_window(mask, center, LABEL_WINDOW)?,
    })
}

/// Inclusive range of centre coordinates whose global window fits along an
/// axis of length `n`, or `None` when the axis is too short.
pub fn center_range(n: usize) -> Option<(usize, usize)> {
    (n >= GLOBAL_WINDOW).then(|| (GLOBAL_WINDOW / 2, n - GLOBAL_WINDOW / 2))
}

/// Samples `n` distinct valid centres of which exactly `round(n·f)` have a
/// label window containing at least one foreground pixel.
pub fn sample_centers<R: Rng + ?Sized>(mask: &Mask, n: usize, positive_fraction: f64, rng: &mut R) -> Result<Vec<Center>> {
    sample_centers_hard(mask, None, n, positive_fraction, 0.0, rng)
}

fn window_sums(mask: &Mask) -> impl Fn(Center) -> u32 + '_ {
    let (h, w) = (mask.height, mask.width);
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut run = 0u32;
        for c in 0..w {
            run += mask.data[r * w + c] as u32;
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + run;
        }
    }
    let half = LABEL_WINDOW / 2;
    move |(r, c)| {
        let (a, b) = (r - half, r + half);
        let (l, rt) = (c - half, c + half);
        sat[b * (w + 1) + rt] + sat[a * (w + 1) + l] - sat[a * (w + 1) + rt] - sat[b * (w + 1) + l]
    }
}

/// [`sample_centers`] where up to `round(n_neg·hard_fraction)` of the
/// negatives are drawn from windows touching `hard` (e.g. decoy roofs).
/// When a scene has fewer hard windows the rest come from plain negatives.
pub fn sample_centers_hard<R: Rng + ?Sized>(
    mask: &Mask,
    hard: Option<&Mask>,
    n: usize,
    positive_fraction: f64,
    hard_fraction: f64,
    rng: &mut R,
) -> Result<Vec<Center>> {
    if !(0.0..=1.0).contains(&positive_fraction) || !(0.0..=1.0).contains(&hard_fraction) {
        return Err(Error::invalid(format!(
            "positive fraction {positive_fraction} or hard fraction {hard_fraction} outside [0,1]"
        )));
    }
    let (Some((r0, r1)), Some((c0, c1))) = (center_range(mask.height), center_range(mask.width)) else {
        return Err(Error::invalid(format!(
            "{}×{} scene has no valid centres (needs ≥ {GLOBAL_WINDOW} per side)",
            mask.height, mask.width
        )));
    };
    let fg = window_sums(mask);
    let hard_sums = hard.filter(|_| hard_fraction > 0.0).map(window_sums);
    let (mut pos, mut neg, mut tough) = (Vec::new(), Vec::new(), Vec::new());
    for r in r0..=r1 {
        for c in c0..=c1 {
            if fg((r, c)) > 0 {
                pos.push((r, c));
            } else if hard_sums.as_ref().is_some_and(|h| h((r, c)) > 0) {
                tough.push((r, c));
            } else {
                neg.push((r, c));
            }
        }
    }
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let n_neg = n - n_pos;
    let n_tough = ((n_neg as f64 * hard_fraction).round() as usize).min(tough.len());
    let n_plain = n_neg - n_tough;
    if n_pos > pos.len() || n_plain > neg.len() + tough.len() - n_tough {
        return Err(Error::invalid(format!(
            "asked for {n_pos} positive and {n_neg} negative centres, scene has {} and {}",
            pos.len(),
            neg.len() + tough.len()
        )));
    }
    let mut out: Vec<Center> = index::sample(rng, pos.len(), n_pos).into_iter().map(|i| pos[i]).collect();
    let picked = index::sample(rng, tough.len(), n_tough).into_vec();
    out.extend(picked.iter().map(|&i| tough[i]));
    if n_plain > neg.len() {
        // too few plain negatives: top up with unpicked hard ones
        let mut taken = vec![false; tough.len()];
        for &i in &picked {
            taken[i] = true;
        }
        neg.extend(tough.iter().zip(&taken).filter(|(_, &t)| !t).map(|(c, _)| *c));
    }
    out.extend(index::sample(rng, neg.len(), n_plain).into_iter().map(|i| neg[i]));
    Ok(out)
}

pub fn sample_triples<R: Rng + ?Sized>(
    img: &RgbImage,
    mask: &Mask,
    n: usize,
    positive_fraction: f64,
    rng: &mut R,
) -> Result<Vec<PatchTriple>> {
    sample_centers(mask, n, positive_fraction, rng)?
        .into_iter()
        .map(|c| extract_triple(img, mask, c))
        .collect()
}

/// Border excluded from inference: the global window half-width minus the
/// label half-width.
pub const GRID_BORDER: usize = GLOBAL_WINDOW / 2 - LABEL_WINDOW / 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major centres.
    pub centers: Vec<Center>,
    /// Union of the label tiles.
    pub interior: Region,
    pub border: usize,
}

/// Centres on a 16-pixel lattice whose label tiles tile the interior
/// disjointly; a border of [`GRID_BORDER`] pixels is excluded.
pub fn grid_centers(height: usize, width: usize) -> Grid {
    let n = |len: usize| len.saturating_sub(2 * GRID_BORDER) / LABEL_WINDOW;
    let (rows, cols) = (n(height), n(width));
    let first = GRID_BORDER + LABEL_WINDOW / 2;
    let mut centers = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            centers.push((first + LABEL_WINDOW * i, first + LABEL_WINDOW * j));
        }
    }
    Grid {
        rows,
        cols,
        centers,
        interior: Region {
            row: GRID_BORDER,
            col: GRID_BORDER,
            rows: rows * LABEL_WINDOW,
            cols: cols * LABEL_WINDOW,
        },
        border: GRID_BORDER,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResidentialCategory {
    None,
    I,
    II,
    III,
}

impl ResidentialCategory {
    /// 1–5 → I, 6–15 → II, 16 and above → III.
    pub fn from_count(n: usize) -> Self {
        match n {
            0 => ResidentialCategory::None,
            1..=5 => ResidentialCategory::I,
            6..=15 => ResidentialCategory::II,
            _ => ResidentialCategory::III,
        }
    }

    pub fn is_residential(self) -> bool {
        self != ResidentialCategory::None
    }
}

/// Category of the window from the number of real buildings intersecting it.
pub fn residential_category(objects: &[SceneObject], window: Region) -> ResidentialCategory {
    let win = Rect {
        row: window.row,
        col: window.col,
        height: window.rows,
        width: window.cols,
    };
    let n = objects
        .iter()
        .filter(|o| o.class == ObjectClass::Building && !o.decoy && o.rect.intersects(&win))
        .count();
    ResidentialCategory::from_count(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_on_512() {
        let g = grid_centers(512, 512);
        assert_eq!(g.centers.len(), 289);
        assert_eq!(g.centers[0], (128, 128));
        assert_eq!(g.centers[1], (128, 144));
        assert_eq!(*g.centers.last().unwrap(), (384, 384));
        assert_eq!(g.interior, Region { row: 120, col: 120, rows: 272, cols: 272 });
    }

    #[test]
    fn category_bands() {
        let cat = ResidentialCategory::from_count;
        assert_eq!(cat(0), ResidentialCategory::None);
        assert_eq!(cat(5), ResidentialCategory::I);
        assert_eq!(cat(7), ResidentialCategory::II);
        assert_eq!(cat(16), ResidentialCategory::III);
        assert_eq!(cat(42), ResidentialCategory::III);
    }

    #[test]
    fn window_bounds() {
        assert_eq!(window_region((8, 8), 16), Some(Region { row: 0, col: 0, rows: 16, cols: 16 }));
        assert_eq!(window_region((7, 8), 16), None);
        let img = RgbImage::new(300, 300);
        assert!(image_window(&img, (172, 128), 256).is_ok());
        assert!(image_window(&img, (173, 128), 256).is_err());
    }

    #[test]
    fn quota_on_empty_mask() {
        let mask = Mask::new(300, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_centers(&mask, 50, 0.0, &mut rng).unwrap();
        assert_eq!(c.len(), 50);
        assert!(sample_centers(&mask, 50, 0.1, &mut rng).is_err());
    }
}
