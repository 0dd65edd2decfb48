//! Seeded synthetic aerial scenes with exact ground truth.
//!
//! Buildings come in residential clusters whose houses share an orientation
//! (wide or tall footprints). Decoys are roofs drawn from the same texture
//! distribution but placed away from every cluster and labelled background,
//! so only the surrounding context separates them from real houses.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image::{Mask, RgbImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Building,
    Road,
    Meadow,
    Water,
    Forest,
}

impl ObjectClass {
    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Building => "building",
            ObjectClass::Road => "road",
            ObjectClass::Meadow => "meadow",
            ObjectClass::Water => "water",
            ObjectClass::Forest => "forest",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "building" => Ok(ObjectClass::Building),
            "road" => Ok(ObjectClass::Road),
            "meadow" => Ok(ObjectClass::Meadow),
            "water" => Ok(ObjectClass::Water),
            "forest" => Ok(ObjectClass::Forest),
            _ => Err(Error::invalid(format!(
                "unknown class {s:?} (building|road|meadow|water|forest)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn bottom(&self) -> usize {
        self.row + self.height
    }

    pub fn right(&self) -> usize {
        self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.row < o.bottom() && o.row < self.bottom() && self.col < o.right() && o.col < self.right()
    }

    pub fn intersection_area(&self, o: &Rect) -> usize {
        let h = self.bottom().min(o.bottom()).saturating_sub(self.row.max(o.row));
        let w = self.right().min(o.right()).saturating_sub(self.col.max(o.col));
        h * w
    }

    pub fn iou(&self, o: &Rect) -> f64 {
        let i = self.intersection_area(o);
        let u = self.area() + o.area() - i;
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }

    /// Number of background pixels strictly between two disjoint rectangles
    /// along the axis that separates them (Chebyshev gap); 0 if they touch
    /// or overlap.
    pub fn gap(&self, o: &Rect) -> usize {
        let dr = o.row.saturating_sub(self.bottom()).max(self.row.saturating_sub(o.bottom()));
        let dc = o.col.saturating_sub(self.right()).max(self.col.saturating_sub(o.right()));
        dr.max(dc)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.row as f64 + self.height as f64 / 2.0,
            self.col as f64 + self.width as f64 / 2.0,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneObject {
    pub class: ObjectClass,
    pub rect: Rect,
    /// Building-textured but labelled background.
    pub decoy: bool,
    pub cluster: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: RgbImage,
    /// Building ground truth.
    pub mask: Mask,
    /// Every placed object, in drawing order.
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    /// Real (non-decoy) buildings.
    pub fn buildings(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects
            .iter()
            .filter(|o| o.class == ObjectClass::Building && !o.decoy)
    }

    pub fn decoys(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.decoy)
    }

    /// Pixels whose topmost drawn object has `class`. Decoys occlude but
    /// never count as buildings.
    pub fn class_mask(&self, class: ObjectClass) -> Mask {
        rasterize(&self.objects, class, self.height(), self.width())
    }
}

pub fn rasterize(objects: &[SceneObject], class: ObjectClass, height: usize, width: usize) -> Mask {
    let mut m = Mask::new(height, width);
    for o in objects {
        let on = o.class == class && !o.decoy;
        let r = o.rect;
        for row in r.row..r.bottom().min(height) {
            m.data[row * width + r.col..row * width + r.right().min(width)].fill(on as u8);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Building-textured squares in total (houses plus decoys).
    pub squares: usize,
    /// Share of `squares` placed as decoys, rounded to the nearest count.
    pub decoy_fraction: f64,
    pub clusters: usize,
    pub cluster_radius: usize,
    pub house_min: usize,
    pub house_max: usize,
    /// Minimum background gap between any two roofs.
    pub min_gap: usize,
    /// Minimum gap between a decoy group and any roof outside it, and extra
    /// distance from every cluster disc.
    pub decoy_clearance: usize,
    /// Decoys per group; members keep only `min_gap` between themselves so
    /// a group looks like a fragment of a cluster at close range.
    pub decoy_group: usize,
    /// Members sit within this distance of their group's first decoy.
    pub decoy_group_radius: usize,
    /// Probability that a house ignores its cluster's orientation.
    pub orientation_jitter: f64,
    pub roads: usize,
    pub road_width: usize,
    pub meadows: usize,
    pub forests: usize,
    pub water: usize,
    pub patch_min: usize,
    pub patch_max: usize,
    /// Roofs stay at least this far from the image border.
    pub margin: usize,
    pub max_retries: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            height: 512,
            width: 512,
            squares: 60,
            decoy_fraction: 0.3,
            clusters: 3,
            cluster_radius: 56,
            house_min: 8,
            house_max: 14,
            min_gap: 3,
            decoy_clearance: 48,
            decoy_group: 1,
            decoy_group_radius: 24,
            orientation_jitter: 0.1,
            roads: 2,
            road_width: 6,
            meadows: 3,
            forests: 2,
            water: 1,
            patch_min: 30,
            patch_max: 90,
            margin: 4,
            max_retries: 4000,
        }
    }
}

impl SynthParams {
    /// Larger scenes with wide clusters and grouped decoys, so that a
    /// 64x64 window alone cannot tell a decoy group from a cluster edge.
    pub fn designed() -> Self {
        SynthParams {
            height: 768,
            width: 768,
            squares: 120,
            cluster_radius: 120,
            min_gap: 12,
            decoy_group: 3,
            decoy_group_radius: 32,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::default()),
            "designed" => Ok(Self::designed()),
            _ => Err(Error::invalid(format!("unknown synth preset {name:?}"))),
        }
    }

    pub fn decoy_count(&self) -> usize {
        (self.squares as f64 * self.decoy_fraction).round() as usize
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("squares", self.squares.to_string()),
            ("decoy_fraction", self.decoy_fraction.to_string()),
            ("clusters", self.clusters.to_string()),
            ("cluster_radius", self.cluster_radius.to_string()),
            ("house_min", self.house_min.to_string()),
            ("house_max", self.house_max.to_string()),
            ("min_gap", self.min_gap.to_string()),
            ("decoy_clearance", self.decoy_clearance.to_string()),
            ("decoy_group", self.decoy_group.to_string()),
            ("decoy_group_radius", self.decoy_group_radius.to_string()),
            ("orientation_jitter", self.orientation_jitter.to_string()),
            ("roads", self.roads.to_string()),
            ("road_width", self.road_width.to_string()),
            ("meadows", self.meadows.to_string()),
            ("forests", self.forests.to_string()),
            ("water", self.water.to_string()),
            ("patch_min", self.patch_min.to_string()),
            ("patch_max", self.patch_max.to_string()),
            ("margin", self.margin.to_string()),
            ("max_retries", self.max_retries.to_string()),
        ]
    }

    /// Parses `key=value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(SynthParams::default(), text)
    }

    pub fn parse_over(mut p: SynthParams, text: &str) -> Result<Self> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("synth params line {}: expected key=value", n + 1)))?;
            p.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("synth params line {}: {e}", n + 1)))?;
        }
        Ok(p)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("{k}: cannot parse {v:?}")))
        }
        match key {
            "seed" => self.seed = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "squares" => self.squares = num(key, v)?,
            "decoy_fraction" => self.decoy_fraction = num(key, v)?,
            "clusters" => self.clusters = num(key, v)?,
            "cluster_radius" => self.cluster_radius = num(key, v)?,
            "house_min" => self.house_min = num(key, v)?,
            "house_max" => self.house_max = num(key, v)?,
            "min_gap" => self.min_gap = num(key, v)?,
            "decoy_clearance" => self.decoy_clearance = num(key, v)?,
            "decoy_group" => self.decoy_group = num(key, v)?,
            "decoy_group_radius" => self.decoy_group_radius = num(key, v)?,
            "orientation_jitter" => self.orientation_jitter = num(key, v)?,
            "roads" => self.roads = num(key, v)?,
            "road_width" => self.road_width = num(key, v)?,
            "meadows" => self.meadows = num(key, v)?,
            "forests" => self.forests = num(key, v)?,
            "water" => self.water = num(key, v)?,
            "patch_min" => self.patch_min = num(key, v)?,
            "patch_max" => self.patch_max = num(key, v)?,
            "margin" => self.margin = num(key, v)?,
            "max_retries" => self.max_retries = num(key, v)?,
            _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.height < 272 || self.width < 272 {
            return Err(Error::invalid(format!(
                "scene {}×{} is smaller than 272 (global window 256 + label 16)",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.decoy_fraction) || !(0.0..=1.0).contains(&self.orientation_jitter) {
            return Err(Error::invalid("decoy_fraction and orientation_jitter must lie in [0,1]"));
        }
        if self.house_min == 0 || self.house_min > self.house_max {
            return Err(Error::invalid("need 0 < house_min ≤ house_max"));
        }
        if self.patch_min == 0 || self.patch_min > self.patch_max {
            return Err(Error::invalid("need 0 < patch_min ≤ patch_max"));
        }
        if self.squares > self.decoy_count() && self.clusters == 0 {
            return Err(Error::invalid("houses need at least one cluster"));
        }
        Ok(())
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [i32; 3], amp: i32) -> [u8; 3] {
    let d = rng.gen_range(-amp..=amp);
    let mut out = [0u8; 3];
    for k in 0..3 {
        let per = rng.gen_range(-amp / 3..=amp / 3);
        out[k] = (base[k] + d + per).clamp(0, 255) as u8;
    }
    out
}

fn fill_rect(img: &mut RgbImage, rect: &Rect, rng: &mut ChaCha8Rng, base: [i32; 3], amp: i32) {
    for r in rect.row..rect.bottom().min(img.height) {
        for c in rect.col..rect.right().min(img.width) {
            let px = jitter(rng, base, amp);
            img.set(r, c, px);
        }
    }
}

const ROOF_PALETTE: [[i32; 3]; 4] = [[176, 72, 52], [150, 96, 70], [160, 160, 166], [196, 120, 80]];

/// Roof texture shared by houses and decoys: a palette colour with a
/// per-roof offset, pixel noise, a darker rim and a lighter ridge line.
fn draw_roof(img: &mut RgbImage, rect: &Rect, rng: &mut ChaCha8Rng) {
    let pal = ROOF_PALETTE[rng.gen_range(0..ROOF_PALETTE.len())];
    let off = rng.gen_range(-14..=14);
    let base = [pal[0] + off, pal[1] + off, pal[2] + off];
    let horizontal = rect.width >= rect.height;
    for r in rect.row..rect.bottom() {
        for c in rect.col..rect.right() {
            let rim = r == rect.row || c == rect.col || r + 1 == rect.bottom() || c + 1 == rect.right();
            let ridge = if horizontal {
                r == rect.row + rect.height / 2
            } else {
                c == rect.col + rect.width / 2
            };
            let shade = if rim {
                -45
            } else if ridge {
                25
            } else {
                0
            };
            let px = jitter(rng, [base[0] + shade, base[1] + shade, base[2] + shade], 9);
            img.set(r, c, px);
        }
    }
}

fn footprint(rng: &mut ChaCha8Rng, p: &SynthParams, horizontal: bool) -> (usize, usize) {
    let long = rng.gen_range(p.house_min..=p.house_max);
    let short_max = (long * 3 / 4).max(p.house_min);
    let short = rng.gen_range(p.house_min..=short_max.min(long));
    if horizontal {
        (short, long)
    } else {
        (long, short)
    }
}

/// Generates one scene. Deterministic for a given `params` (including seed).
pub fn generate_scene(params: &SynthParams) -> Result<Scene> {
    params.validate()?;
    let p = params;
    let (h, w) = (p.height, p.width);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut img = RgbImage::new(h, w);
    let mut objects = Vec::new();

    // ground: soil tone with a slow per-row drift and pixel noise
    let drift: i32 = rng.gen_range(-10..=10);
    for r in 0..h {
        let tone = 112 + (drift * r as i32) / h as i32;
        for c in 0..w {
            let px = jitter(&mut rng, [tone, tone - 8, tone - 30], 10);
            img.set(r, c, px);
        }
    }

    let mut patch = |rng: &mut ChaCha8Rng, class: ObjectClass, base: [i32; 3], amp: i32| {
        let ph = rng.gen_range(p.patch_min..=p.patch_max).min(h);
        let pw = rng.gen_range(p.patch_min..=p.patch_max).min(w);
        let rect = Rect {
            row: rng.gen_range(0..=h - ph),
            col: rng.gen_range(0..=w - pw),
            height: ph,
            width: pw,
        };
        fill_rect(&mut img, &rect, rng, base, amp);
        objects.push(SceneObject {
            class,
            rect,
            decoy: false,
            cluster: None,
        });
    };
    for _ in 0..p.meadows {
        patch(&mut rng, ObjectClass::Meadow, [104, 142, 72], 12);
    }
    for _ in 0..p.forests {
        patch(&mut rng, ObjectClass::Forest, [46, 84, 44], 22);
    }
    for _ in 0..p.water {
        patch(&mut rng, ObjectClass::Water, [44, 72, 122], 6);
    }

    let mut roads = Vec::new();
    for i in 0..p.roads {
        let rw = p.road_width.max(1);
        let rect = if i % 2 == 0 {
            Rect {
                row: rng.gen_range(0..=h - rw),
                col: 0,
                height: rw,
                width: w,
            }
        } else {
            Rect {
                row: 0,
                col: rng.gen_range(0..=w - rw),
                height: h,
                width: rw,
            }
        };
        fill_rect(&mut img, &rect, &mut rng, [122, 122, 128], 6);
        objects.push(SceneObject {
            class: ObjectClass::Road,
            rect,
            decoy: false,
            cluster: None,
        });
        roads.push(rect);
    }

    let n_decoys = p.decoy_count();
    let n_houses = p.squares - n_decoys;
    let margin = p.margin;
    let radius = p.cluster_radius as f64;

    // cluster centres keep their discs inside the image where possible
    let lo_r = (p.cluster_radius / 2 + margin).min(h / 2);
    let lo_c = (p.cluster_radius / 2 + margin).min(w / 2);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut horizontal = Vec::new();
    if n_houses > 0 {
        for k in 0..p.clusters {
            let mut tries = 0;
            loop {
                let c = (rng.gen_range(lo_r..=h - lo_r) as f64, rng.gen_range(lo_c..=w - lo_c) as f64);
                let far = centers
                    .iter()
                    .all(|o| ((o.0 - c.0).powi(2) + (o.1 - c.1).powi(2)).sqrt() >= radius * 1.5);
                if far || tries >= p.max_retries {
                    if !far {
                        return Err(Error::Infeasible(format!(
                            "cluster {k}: no centre at least 1.5·cluster_radius from the others after {} tries",
                            p.max_retries
                        )));
                    }
                    centers.push(c);
                    horizontal.push(rng.gen_bool(0.5));
                    break;
                }
                tries += 1;
            }
        }
    }

    let mut roofs: Vec<Rect> = Vec::new();
    let fits = |rect: &Rect, roofs: &[Rect], gap: usize| -> bool {
        rect.row >= margin
            && rect.col >= margin
            && rect.bottom() + margin <= h
            && rect.right() + margin <= w
            && roofs.iter().all(|o| !o.intersects(rect) && o.gap(rect) >= gap)
            && roads.iter().all(|rd| !rd.intersects(rect) && rd.gap(rect) >= 1)
    };

    for i in 0..n_houses {
        let k = i % centers.len();
        let mut tries = 0;
        loop {
            let orient = if rng.gen_bool(p.orientation_jitter) {
                !horizontal[k]
            } else {
                horizontal[k]
            };
            let (fh, fw) = footprint(&mut rng, p, orient);
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = radius * rng.gen_range(0.0f64..1.0).sqrt();
            let cr = centers[k].0 + dist * ang.sin() - fh as f64 / 2.0;
            let cc = centers[k].1 + dist * ang.cos() - fw as f64 / 2.0;
            if cr >= 0.0 && cc >= 0.0 {
                let rect = Rect {
                    row: cr as usize,
                    col: cc as usize,
                    height: fh,
                    width: fw,
                };
                if fits(&rect, &roofs, p.min_gap) {
                    draw_roof(&mut img, &rect, &mut rng);
                    objects.push(SceneObject {
                        class: ObjectClass::Building,
                        rect,
                        decoy: false,
                        cluster: Some(k),
                    });
                    roofs.push(rect);
                    break;
                }
            }
            tries += 1;
            if tries >= p.max_retries {
                return Err(Error::Infeasible(format!(
                    "house {i} of {n_houses}: no spot in cluster {k} (radius {}) keeping min_gap {} from other roofs, off roads, {} from the border",
                    p.cluster_radius, p.min_gap, margin
                )));
            }
        }
    }

    let group = p.decoy_group.max(1);
    let mut anchor = (0.0, 0.0);
    let mut group_start = roofs.len();
    for i in 0..n_decoys {
        let first = i % group == 0;
        if first {
            group_start = roofs.len();
        }
        let mut tries = 0;
        loop {
            let horiz = rng.gen_bool(0.5);
            let (fh, fw) = footprint(&mut rng, p, horiz);
            let rect = if first {
                Rect {
                    row: rng.gen_range(0..=h - fh),
                    col: rng.gen_range(0..=w - fw),
                    height: fh,
                    width: fw,
                }
            } else {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = p.decoy_group_radius as f64 * rng.gen_range(0.0f64..1.0).sqrt();
                let cr = anchor.0 + dist * ang.sin() - fh as f64 / 2.0;
                let cc = anchor.1 + dist * ang.cos() - fw as f64 / 2.0;
                Rect {
                    row: cr.max(0.0) as usize,
                    col: cc.max(0.0) as usize,
                    height: fh,
                    width: fw,
                }
            };
            let (rr, rc) = rect.center();
            // roofs[group_start..] are this group's earlier members
            let isolated = roofs[..group_start].iter().all(|o| o.gap(&rect) >= p.decoy_clearance)
                && centers.iter().all(|c| {
                    ((c.0 - rr).powi(2) + (c.1 - rc).powi(2)).sqrt() >= radius + p.decoy_clearance as f64
                });
            if isolated && fits(&rect, &roofs, p.min_gap) {
                draw_roof(&mut img, &rect, &mut rng);
                objects.push(SceneObject {
                    class: ObjectClass::Building,
                    rect,
                    decoy: true,
                    cluster: None,
                });
                roofs.push(rect);
                if first {
                    anchor = (rr, rc);
                }
                break;
            }
            tries += 1;
            if tries >= p.max_retries {
                return Err(Error::Infeasible(format!(
                    "decoy {i} of {n_decoys}: no spot keeping decoy_clearance {} from other roofs and cluster discs{}",
                    p.decoy_clearance,
                    if first { String::new() } else { format!(" within decoy_group_radius {}", p.decoy_group_radius) }
                )));
            }
        }
    }

    let mask = rasterize(&objects, ObjectClass::Building, h, w);
    Ok(Scene {
        image: img,
        mask,
        objects,
    })
}
