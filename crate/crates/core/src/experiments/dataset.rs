//! Scenes in memory, example sampling and mini-batch assembly.

use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::arch::Mode;
use crate::data::image::{Mask, RgbImage};
use crate::data::io::write_bytes;
use crate::data::manifest::{write_scene, Manifest, ManifestEntry, Split};
use crate::data::patches::{
    center_range, constant_window, image_window, mask_window, residential_category, sample_centers_hard, window_region,
    Center, GLOBAL_WINDOW, LABEL_WINDOW, LOCAL_WINDOW,
};
use crate::data::synth::{generate_scene, rasterize, ObjectClass, SceneObject, SynthParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SceneData {
    pub id: String,
    pub image: RgbImage,
    /// Foreground of the configured class.
    pub mask: Mask,
    pub objects: Vec<SceneObject>,
}

impl SceneData {
    pub fn new(id: impl Into<String>, image: RgbImage, objects: Vec<SceneObject>, class: ObjectClass) -> Self {
        let mask = rasterize(&objects, class, image.height, image.width);
        SceneData {
            id: id.into(),
            image,
            mask,
            objects,
        }
    }

    /// Loads image and objects; the building mask comes from the mask file,
    /// other classes are rasterised from the object table.
    pub fn load(entry: &ManifestEntry, class: ObjectClass) -> Result<Self> {
        let image = entry.load_image()?;
        let objects = entry.load_objects()?;
        let mask = if class == ObjectClass::Building {
            entry.load_mask()?
        } else {
            rasterize(&objects, class, image.height, image.width)
        };
        if (mask.height, mask.width) != (image.height, image.width) {
            return Err(Error::shape(format!("{}: mask and image sizes differ", entry.scene_id)));
        }
        Ok(SceneData {
            id: entry.scene_id.clone(),
            image,
            mask,
            objects,
        })
    }

    /// Footprints of decoy roofs.
    pub fn decoy_mask(&self) -> Mask {
        let mut m = Mask::new(self.image.height, self.image.width);
        for o in self.objects.iter().filter(|o| o.decoy) {
            let r = o.rect;
            for row in r.row..r.bottom().min(m.height) {
                m.data[row * m.width + r.col..row * m.width + r.right().min(m.width)].fill(1);
            }
        }
        m
    }

    /// Whether the global window at `c` counts as residential.
    pub fn residential(&self, c: Center) -> bool {
        window_region(c, GLOBAL_WINDOW)
            .map(|w| residential_category(&self.objects, w).is_residential())
            .unwrap_or(false)
    }
}

pub fn load_split(manifest: &Manifest, split: Split, class: ObjectClass) -> Result<Vec<SceneData>> {
    manifest.split(split).map(|e| SceneData::load(e, class)).collect()
}

/// One training example: a scene index and a patch centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub scene: usize,
    pub center: Center,
}

/// Spacing of the candidate lattice for residential sampling.
const RA_STRIDE: usize = 4;

/// `n` examples spread evenly over the scenes, each scene honouring the
/// positive quota. Positives are label windows with foreground for the
/// segmentation modes and residential global windows for RA-Seg. For the
/// segmentation modes `decoy_fraction` of the negatives are drawn from
/// windows touching decoy roofs where a scene has them.
pub fn sample_examples<R: Rng + ?Sized>(
    scenes: &[SceneData],
    n: usize,
    mode: Mode,
    positive_fraction: f64,
    decoy_fraction: f64,
    rng: &mut R,
) -> Result<Vec<Example>> {
    if scenes.is_empty() {
        return Err(Error::invalid("no training scenes"));
    }
    let mut out = Vec::with_capacity(n);
    for (s, scene) in scenes.iter().enumerate() {
        let k = n / scenes.len() + usize::from(s < n % scenes.len());
        let centers = if mode == Mode::RaClassifier {
            ra_centers(scene, k, positive_fraction, rng)?
        } else {
            let decoys = (decoy_fraction > 0.0).then(|| scene.decoy_mask());
            sample_centers_hard(&scene.mask, decoys.as_ref(), k, positive_fraction, decoy_fraction, rng)
                .map_err(|e| Error::invalid(format!("scene {}: {e}", scene.id)))?
        };
        out.extend(centers.into_iter().map(|center| Example { scene: s, center }));
    }
    Ok(out)
}

fn ra_centers<R: Rng + ?Sized>(scene: &SceneData, n: usize, pf: f64, rng: &mut R) -> Result<Vec<Center>> {
    let (Some((r0, r1)), Some((c0, c1))) = (center_range(scene.image.height), center_range(scene.image.width)) else {
        return Err(Error::invalid(format!("scene {} is smaller than the global window", scene.id)));
    };
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for r in (r0..=r1).step_by(RA_STRIDE) {
        for c in (c0..=c1).step_by(RA_STRIDE) {
            if scene.residential((r, c)) {
                pos.push((r, c));
            } else {
                neg.push((r, c));
            }
        }
    }
    let n_pos = (n as f64 * pf).round() as usize;
    let n_neg = n - n_pos;
    if n_pos > pos.len() || n_neg > neg.len() {
        return Err(Error::invalid(format!(
            "scene {}: asked for {n_pos} residential and {n_neg} other windows, lattice has {} and {}",
            scene.id,
            pos.len(),
            neg.len()
        )));
    }
    let mut out: Vec<Center> = index::sample(rng, pos.len(), n_pos).into_iter().map(|i| pos[i]).collect();
    out.extend(index::sample(rng, neg.len(), n_neg).into_iter().map(|i| neg[i]));
    Ok(out)
}

/// Which pathway, if any, sees the per-image channel-mean blank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Blank {
    #[default]
    None,
    Local,
    Global,
}

impl Blank {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Blank::None),
            "local" => Ok(Blank::Local),
            "global" => Ok(Blank::Global),
            _ => Err(Error::invalid(format!("unknown blank {s:?} (none|local|global)"))),
        }
    }
}

/// Network inputs for patches centred at `centers` of one image.
pub fn inputs_at(
    image: &RgbImage,
    centers: &[Center],
    mode: Mode,
    blank: Blank,
    means: [f32; 3],
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let build = |w: usize, blanked: bool| -> Result<Tensor> {
        let mut data = Vec::with_capacity(centers.len() * 3 * w * w);
        for &c in centers {
            if blanked {
                data.extend(constant_window(means, w));
            } else {
                data.extend(image_window(image, c, w)?);
            }
        }
        Tensor::from_vec(&[centers.len(), 3, w, w], data)
    };
    let local = mode
        .uses_local()
        .then(|| build(LOCAL_WINDOW, blank == Blank::Local))
        .transpose()?;
    let global = mode
        .uses_global()
        .then(|| build(GLOBAL_WINDOW, blank == Blank::Global))
        .transpose()?;
    Ok((local, global))
}

/// A mini-batch: inputs for the mode plus targets (`[B,256]`, or `[B,1]`
/// for RA-Seg).
pub fn assemble(scenes: &[SceneData], batch: &[Example], mode: Mode) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let mut local = Vec::new();
    let mut global = Vec::new();
    let mut target = Vec::new();
    for ex in batch {
        let s = &scenes[ex.scene];
        if mode.uses_local() {
            local.extend(image_window(&s.image, ex.center, LOCAL_WINDOW)?);
        }
        if mode.uses_global() {
            global.extend(image_window(&s.image, ex.center, GLOBAL_WINDOW)?);
        }
        if mode == Mode::RaClassifier {
            target.push(if s.residential(ex.center) { 1.0 } else { 0.0 });
        } else {
            target.extend(mask_window(&s.mask, ex.center, LABEL_WINDOW)?.into_iter().map(f32::from));
        }
    }
    let b = batch.len();
    let l = if mode.uses_local() {
        Some(Tensor::from_vec(&[b, 3, LOCAL_WINDOW, LOCAL_WINDOW], local)?)
    } else {
        None
    };
    let g = if mode.uses_global() {
        Some(Tensor::from_vec(&[b, 3, GLOBAL_WINDOW, GLOBAL_WINDOW], global)?)
    } else {
        None
    };
    let width = target.len() / b.max(1);
    Ok((l, g, Tensor::from_vec(&[b, width], target)?))
}

/// Scene counts per split of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Seed of the `k`-th scene derived from the dataset seed.
pub fn scene_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

/// Generates scenes in memory: train, then val, then test.
pub fn synth_scenes(params: &SynthParams, sizes: SplitSizes) -> Result<Vec<(Split, String, crate::data::synth::Scene)>> {
    let mut out = Vec::new();
    let splits = [(Split::Train, sizes.train), (Split::Val, sizes.val), (Split::Test, sizes.test)];
    let mut k = 0;
    for (split, n) in splits {
        for i in 0..n {
            let p = SynthParams {
                seed: scene_seed(params.seed, k),
                ..params.clone()
            };
            let scene = generate_scene(&p).map_err(|e| Error::Infeasible(format!("scene seed {}: {e}", p.seed)))?;
            out.push((split, format!("{}_{i:03}", split.name()), scene));
            k += 1;
        }
    }
    Ok(out)
}

/// Writes a synthetic dataset with `manifest.tsv` and `synth.txt` under `dir`.
pub fn write_synth_dataset(dir: &Path, params: &SynthParams, sizes: SplitSizes) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    for (split, id, scene) in synth_scenes(params, sizes)? {
        manifest.entries.push(write_scene(dir, &id, &scene, split)?);
    }
    write_bytes(&dir.join("manifest.tsv"), manifest.to_text(dir).as_bytes())?;
    write_bytes(&dir.join("synth.txt"), params.to_text().as_bytes())?;
    Ok(manifest)
}
