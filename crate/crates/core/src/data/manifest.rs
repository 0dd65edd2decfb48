//! Dataset manifests and per-scene object tables.
//!
//! A manifest line is `scene_id <TAB> image_path <TAB> mask_path <TAB> split`;
//! relative paths resolve against the manifest's directory. Object tables sit
//! next to the image as `<scene_id>.objects.tsv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::image::{Mask, RgbImage};
use crate::data::io::{load_image, load_mask, save_image, save_mask, write_bytes};
use crate::data::synth::{ObjectClass, Rect, Scene, SceneObject};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?} (train|val|test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn objects_path(&self) -> PathBuf {
        self.image.with_file_name(format!("{}.objects.tsv", self.scene_id))
    }

    pub fn load_image(&self) -> Result<RgbImage> {
        load_image(&self.image)
    }

    pub fn load_mask(&self) -> Result<Mask> {
        load_mask(&self.mask)
    }

    pub fn load_objects(&self) -> Result<Vec<SceneObject>> {
        let p = self.objects_path();
        let text = std::fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
        objects_from_text(&text)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    n + 1,
                    f.len()
                )));
            }
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            entries.push(ManifestEntry {
                scene_id: f[0].to_string(),
                image: resolve(f[1]),
                mask: resolve(f[2]),
                split: Split::parse(f[3]).map_err(|e| Error::invalid(format!("manifest line {}: {e}", n + 1)))?,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Paths are written relative to `base` when they lie beneath it.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.scene_id, rel(&e.image), rel(&e.mask), e.split.name());
        }
        s
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn objects_to_text(objects: &[SceneObject]) -> String {
    let mut s = String::from("class\trow\tcol\theight\twidth\tdecoy\tcluster\n");
    for o in objects {
        let cluster = o.cluster.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.class.name(),
            o.rect.row,
            o.rect.col,
            o.rect.height,
            o.rect.width,
            o.decoy as u8,
            cluster
        );
    }
    s
}

pub fn objects_from_text(text: &str) -> Result<Vec<SceneObject>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("object table line {}: malformed {line:?}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        out.push(SceneObject {
            class: ObjectClass::parse(f[0])?,
            rect: Rect {
                row: num(f[1])?,
                col: num(f[2])?,
                height: num(f[3])?,
                width: num(f[4])?,
            },
            decoy: match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
            cluster: if f[6] == "-" { None } else { Some(num(f[6])?) },
        });
    }
    Ok(out)
}

/// Writes `<id>.ppm`, `<id>.pgm` and `<id>.objects.tsv` under `dir` and
/// returns the manifest entry.
pub fn write_scene(dir: &Path, scene_id: &str, scene: &Scene, split: Split) -> Result<ManifestEntry> {
    let entry = ManifestEntry {
        scene_id: scene_id.to_string(),
        image: dir.join(format!("{scene_id}.ppm")),
        mask: dir.join(format!("{scene_id}.pgm")),
        split,
    };
    save_image(&entry.image, &scene.image)?;
    save_mask(&entry.mask, &scene.mask)?;
    write_bytes(&entry.objects_path(), objects_to_text(&scene.objects).as_bytes())?;
    Ok(entry)
}
