//! Grid inference over whole images and the pathway-blanking ablation.

use crate::arch::{Mode, Network};
use crate::combiner::ra_to_pixels;
use crate::data::image::{Mask, ProbMap, RgbImage};
use crate::data::patches::{grid_centers, Grid, LABEL_WINDOW};
use crate::data::synth::SceneObject;
use crate::error::{Error, Result};
use crate::eval::relaxed_scores;
use crate::experiments::dataset::{inputs_at, Blank};

/// Patches per forward pass during inference.
pub const PREDICT_BATCH: usize = 32;

/// Raw network outputs for every grid tile, concatenated in grid order.
pub fn predict_tiles(net: &Network, image: &RgbImage, blank: Blank) -> Result<(Grid, Vec<f32>)> {
    let grid = grid_centers(image.height, image.width);
    if grid.centers.is_empty() {
        return Err(Error::invalid(format!(
            "{}×{} image is too small for inference (needs ≥ 272 per side)",
            image.height, image.width
        )));
    }
    if blank != Blank::None && net.mode != Mode::Dual {
        return Err(Error::invalid("pathway blanking needs a dual-stream checkpoint"));
    }
    let means = image.channel_means();
    let mut out = Vec::with_capacity(grid.centers.len() * net.output_width());
    for chunk in grid.centers.chunks(PREDICT_BATCH) {
        let (l, g) = inputs_at(image, chunk, net.mode, blank, means)?;
        let y = net.forward(l.as_ref(), g.as_ref())?;
        out.extend_from_slice(y.data());
    }
    Ok((grid, out))
}

/// Writes each 16×16 output into its tile; the excluded border is no-data.
/// RA-Seg outputs are expanded nearest-neighbour over their tiles.
pub fn predict_image(net: &Network, image: &RgbImage) -> Result<ProbMap> {
    complementarity(net, image, Blank::None)
}

/// [`predict_image`] with one pathway fed the image's channel means.
pub fn complementarity(net: &Network, image: &RgbImage, blank: Blank) -> Result<ProbMap> {
    let (grid, out) = predict_tiles(net, image, blank)?;
    tiles_to_map(&grid, &out, net.output_width(), image.height, image.width)
}

pub fn tiles_to_map(grid: &Grid, out: &[f32], width: usize, h: usize, w: usize) -> Result<ProbMap> {
    if width == 1 {
        return ra_to_pixels(grid, out, h, w);
    }
    if out.len() != grid.centers.len() * LABEL_WINDOW * LABEL_WINDOW {
        return Err(Error::shape("tile outputs do not match the grid"));
    }
    let mut map = ProbMap::empty(h, w, grid.interior);
    let half = LABEL_WINDOW / 2;
    for (k, &(r, c)) in grid.centers.iter().enumerate() {
        let tile = &out[k * LABEL_WINDOW * LABEL_WINDOW..(k + 1) * LABEL_WINDOW * LABEL_WINDOW];
        for i in 0..LABEL_WINDOW {
            let dst = (r - half + i) * w + c - half;
            map.data[dst..dst + LABEL_WINDOW].copy_from_slice(&tile[i * LABEL_WINDOW..(i + 1) * LABEL_WINDOW]);
        }
    }
    Ok(map)
}

/// Decoy pixels inside the valid region predicted positive at `threshold`.
pub fn decoy_false_positives(map: &ProbMap, objects: &[SceneObject], threshold: f64) -> usize {
    let mut n = 0;
    for o in objects.iter().filter(|o| o.decoy) {
        for r in o.rect.row..o.rect.bottom() {
            for c in o.rect.col..o.rect.right() {
                if map.valid.contains(r, c) && map.get(r, c) as f64 >= threshold {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Foreground pixels with a 4-neighbour in the background (or off-image).
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    Mask::from_fn(h, w, |r, c| {
        mask.get(r, c)
            && (r == 0 || c == 0 || r + 1 == h || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1))
    })
}

/// Mean over real buildings inside the valid region of the ρ = 0 F-measure
/// between predicted and true boundaries, each compared within the
/// building's box grown by 2 pixels.
pub fn mean_boundary_f(map: &ProbMap, objects: &[SceneObject], gt: &Mask, threshold: f64) -> Result<f64> {
    let pred = map.binarize(threshold);
    let (pb, gb) = (boundary(&pred), boundary(gt));
    let v = map.valid;
    let mut fs = Vec::new();
    for o in objects.iter().filter(|o| o.class == crate::data::synth::ObjectClass::Building && !o.decoy) {
        let b = crate::postproc::grow(o.rect, 2, map.height, map.width);
        if b.row < v.row || b.col < v.col || b.bottom() > v.row + v.rows || b.right() > v.col + v.cols {
            continue;
        }
        let reg = crate::data::image::Region {
            row: b.row,
            col: b.col,
            rows: b.height,
            cols: b.width,
        };
        let (c, p) = relaxed_scores(&pb.crop(reg), &gb.crop(reg), 0)?;
        fs.push(crate::eval::f_measure(c, p));
    }
    if fs.is_empty() {
        return Err(Error::invalid("no building lies inside the valid region"));
    }
    Ok(fs.iter().sum::<f64>() / fs.len() as f64)
}
