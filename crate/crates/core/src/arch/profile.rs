//! Architecture profiles: window sizes, stem layer stacks and head widths.
//!
//! Profiles serialise to plain `key=value` text:
//!
//! ```text
//! name=desk
//! local.input=64
//! global.input=256
//! output=16
//! local.layers=conv:8:3:1:1,conv:8:3:1:1,pool:2,conv:16:3:1:1,conv:8:3:1:1,pool:2
//! local.features=64
//! global.layers=conv:8:7:4:3,pool:2,conv:16:5:1:2,pool:2,conv:16:3:1:1,pool:2
//! global.features=32
//! fusion.hidden=64,64
//! ```
//!
//! `conv:F:K:S:P` is a `K×K` convolution with `F` filters, stride `S`, pad `P`
//! (always followed by a ReLU); `pool:N` is `N×N` max pooling with stride `N`.
//! Single convolutions can be overridden with `local.conv2.filters=12`
//! (also `kernel`, `stride`, `pad`; counting from 1).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::layers::{ConvSpec, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StemLayer {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StemSpec {
    pub layers: Vec<StemLayer>,
    /// Width of the stem's fully connected feature layer.
    pub features: usize,
}

impl StemSpec {
    /// Conv/pool layer specs for an input with `channels` channels.
    pub fn layer_specs(&self, channels: usize) -> Vec<LayerSpec> {
        let mut c = channels;
        self.layers
            .iter()
            .map(|l| match *l {
                StemLayer::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                } => {
                    let s = ConvSpec::square(c, filters, kernel, stride, pad);
                    c = filters;
                    LayerSpec::Conv(s)
                }
                StemLayer::Pool { size } => LayerSpec::MaxPool { size },
            })
            .collect()
    }

    /// `[C,H,W]` after the last conv/pool layer for a square RGB input.
    pub fn conv_output(&self, input: usize) -> Result<[usize; 3]> {
        let mut shape = vec![3, input, input];
        for spec in self.layer_specs(3) {
            shape = spec.output_item_shape(&shape)?;
        }
        Ok([shape[0], shape[1], shape[2]])
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, StemLayer::Conv { .. })).count()
    }

    /// Input rows seen by each row of the final conv/pool map (one axis;
    /// the stems are square). Interval ends are clipped to the input.
    pub fn receptive_fields(&self, input: usize) -> Result<Vec<(usize, usize)>> {
        let [_, out, _] = self.conv_output(input)?;
        // propagate intervals from the output back to the input
        let mut fields: Vec<(isize, isize)> = (0..out as isize).map(|o| (o, o)).collect();
        for l in self.layers.iter().rev() {
            let (k, s, p) = match *l {
                StemLayer::Conv {
                    kernel, stride, pad, ..
                } => (kernel as isize, stride as isize, pad as isize),
                StemLayer::Pool { size } => (size as isize, size as isize, 0),
            };
            for f in &mut fields {
                *f = (f.0 * s - p, f.1 * s - p + k - 1);
            }
        }
        Ok(fields
            .into_iter()
            .map(|(lo, hi)| (lo.max(0) as usize, hi.min(input as isize - 1) as usize))
            .collect())
    }

    fn layers_text(&self) -> String {
        self.layers
            .iter()
            .map(|l| match *l {
                StemLayer::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                } => format!("conv:{filters}:{kernel}:{stride}:{pad}"),
                StemLayer::Pool { size } => format!("pool:{size}"),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub name: String,
    /// Local window width `w_l`.
    pub local_input: usize,
    /// Global window width `w_g`.
    pub global_input: usize,
    /// Label window width `w_m`.
    pub output: usize,
    pub local: StemSpec,
    pub global: StemSpec,
    /// Hidden widths of the first two of the three fusion-head layers.
    pub fusion_hidden: [usize; 2],
}

fn conv(filters: usize, kernel: usize, stride: usize, pad: usize) -> StemLayer {
    StemLayer::Conv {
        filters,
        kernel,
        stride,
        pad,
    }
}

fn pool() -> StemLayer {
    StemLayer::Pool { size: 2 }
}

impl Profile {
    /// CPU-sized profile used by the tests and the default CLI runs.
    pub fn desk() -> Self {
        Profile {
            name: "desk".into(),
            local_input: 64,
            global_input: 256,
            output: 16,
            local: StemSpec {
                layers: vec![
                    conv(8, 3, 1, 1),
                    conv(8, 3, 1, 1),
                    pool(),
                    conv(16, 3, 1, 1),
                    conv(8, 3, 1, 1),
                    pool(),
                ],
                features: 64,
            },
            global: StemSpec {
                layers: vec![
                    conv(8, 7, 4, 3),
                    pool(),
                    conv(16, 5, 1, 2),
                    pool(),
                    conv(16, 3, 1, 1),
                    pool(),
                ],
                features: 32,
            },
            fusion_hidden: [64, 64],
        }
    }

    /// VGG-like local stem and AlexNet-like global stem with reduced widths.
    pub fn paper_shaped() -> Self {
        Profile {
            name: "paper-shaped".into(),
            local_input: 64,
            global_input: 256,
            output: 16,
            local: StemSpec {
                layers: vec![
                    conv(32, 3, 1, 1),
                    conv(32, 3, 1, 1),
                    pool(),
                    conv(64, 3, 1, 1),
                    conv(64, 3, 1, 1),
                    pool(),
                    conv(128, 3, 1, 1),
                    conv(128, 3, 1, 1),
                    conv(128, 3, 1, 1),
                    pool(),
                ],
                features: 512,
            },
            global: StemSpec {
                layers: vec![
                    conv(48, 11, 4, 5),
                    pool(),
                    conv(128, 5, 1, 2),
                    pool(),
                    conv(192, 3, 1, 1),
                    conv(192, 3, 1, 1),
                    conv(128, 3, 1, 1),
                    pool(),
                ],
                features: 512,
            },
            fusion_hidden: [512, 512],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-shaped" | "paper" => Ok(Self::paper_shaped()),
            other => Err(Error::invalid(format!(
                "unknown profile {other:?} (expected desk or paper-shaped)"
            ))),
        }
    }

    /// Checks spatial arithmetic and the topology rules of both stems.
    pub fn validate(&self) -> Result<()> {
        if self.output == 0 || self.output > self.local_input || self.local_input > self.global_input {
            return Err(Error::invalid(format!(
                "window widths must satisfy 0 < output ≤ local ≤ global, got {}/{}/{}",
                self.output, self.local_input, self.global_input
            )));
        }
        for (stem, input, which) in [
            (&self.local, self.local_input, "local"),
            (&self.global, self.global_input, "global"),
        ] {
            if stem.features == 0 {
                return Err(Error::invalid(format!("{which}.features must be positive")));
            }
            if stem.conv_count() == 0 {
                return Err(Error::invalid(format!("{which} stem has no convolutions")));
            }
            stem.conv_output(input)
                .map_err(|e| Error::invalid(format!("{which} stem: {e}")))?;
        }
        for l in &self.local.layers {
            match *l {
                StemLayer::Conv {
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    ..
                }
                | StemLayer::Pool { size: 2 } => {}
                other => {
                    return Err(Error::invalid(format!(
                        "local stem allows only 3×3/s1/p1 convs and 2×2 pools, got {other:?}"
                    )))
                }
            }
        }
        match self.global.layers.first() {
            Some(StemLayer::Conv { kernel, stride, .. }) if *kernel >= 5 && *stride > 1 => {}
            other => {
                return Err(Error::invalid(format!(
                    "global stem must open with a large (≥5), strided conv, got {other:?}"
                )))
            }
        }
        if self.fusion_hidden.contains(&0) {
            return Err(Error::invalid("fusion.hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "local.input={}", self.local_input);
        let _ = writeln!(s, "global.input={}", self.global_input);
        let _ = writeln!(s, "output={}", self.output);
        let _ = writeln!(s, "local.layers={}", self.local.layers_text());
        let _ = writeln!(s, "local.features={}", self.local.features);
        let _ = writeln!(s, "global.layers={}", self.global.layers_text());
        let _ = writeln!(s, "global.features={}", self.global.features);
        let _ = writeln!(s, "fusion.hidden={},{}", self.fusion_hidden[0], self.fusion_hidden[1]);
        s
    }

    /// Parses `key=value` text. Keys missing from the text keep the values
    /// of the named base profile (`name=`, default `desk`).
    pub fn parse(text: &str) -> Result<Self> {
        let entries: Vec<(usize, &str, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(n, l)| {
                l.split_once('=')
                    .map(|(k, v)| (n, k.trim(), v.trim()))
                    .ok_or_else(|| Error::invalid(format!("profile line {n}: expected key=value")))
            })
            .collect::<Result<_>>()?;

        let base = entries
            .iter()
            .find(|(_, k, _)| *k == "name")
            .map(|(_, _, v)| *v)
            .unwrap_or("desk");
        let mut p = Self::by_name(base).unwrap_or_else(|_| {
            let mut d = Self::desk();
            d.name = base.to_string();
            d
        });

        let num = |n: usize, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::invalid(format!("profile line {n}: {v:?} is not a non-negative integer")))
        };
        let mut overrides = Vec::new();
        for &(n, k, v) in &entries {
            match k {
                "name" => p.name = v.to_string(),
                "local.input" => p.local_input = num(n, v)?,
                "global.input" => p.global_input = num(n, v)?,
                "output" => p.output = num(n, v)?,
                "local.layers" => p.local.layers = parse_layers(n, v)?,
                "global.layers" => p.global.layers = parse_layers(n, v)?,
                "local.features" => p.local.features = num(n, v)?,
                "global.features" => p.global.features = num(n, v)?,
                "fusion.hidden" => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(Error::invalid(format!("profile line {n}: fusion.hidden takes two widths")));
                    }
                    p.fusion_hidden = [num(n, parts[0])?, num(n, parts[1])?];
                }
                _ => overrides.push((n, k, v)),
            }
        }
        // per-conv overrides apply after the layer lists are final
        for (n, k, v) in overrides {
            let parts: Vec<&str> = k.split('.').collect();
            let (stem, idx, field) = match parts.as_slice() {
                [s @ ("local" | "global"), c, f] if c.starts_with("conv") => {
                    let idx: usize = c[4..]
                        .parse()
                        .map_err(|_| Error::invalid(format!("profile line {n}: bad conv index in {k:?}")))?;
                    (*s, idx, *f)
                }
                _ => return Err(Error::invalid(format!("profile line {n}: unknown key {k:?}"))),
            };
            let stem = if stem == "local" { &mut p.local } else { &mut p.global };
            let layer = stem
                .layers
                .iter_mut()
                .filter(|l| matches!(l, StemLayer::Conv { .. }))
                .nth(idx.wrapping_sub(1))
                .ok_or_else(|| Error::invalid(format!("profile line {n}: {k:?} names a missing conv")))?;
            let value = num(n, v)?;
            if let StemLayer::Conv {
                filters,
                kernel,
                stride,
                pad,
            } = layer
            {
                match field {
                    "filters" => *filters = value,
                    "kernel" => *kernel = value,
                    "stride" => *stride = value,
                    "pad" => *pad = value,
                    _ => return Err(Error::invalid(format!("profile line {n}: unknown field {field:?}"))),
                }
            }
        }
        p.validate()?;
        Ok(p)
    }
}

fn parse_layers(line: usize, v: &str) -> Result<Vec<StemLayer>> {
    v.split(',')
        .map(str::trim)
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            let nums: std::result::Result<Vec<usize>, _> = parts[1..].iter().map(|s| s.parse::<usize>()).collect();
            let bad = || Error::invalid(format!("profile line {line}: bad layer {item:?}"));
            let nums = nums.map_err(|_| bad())?;
            match (parts[0], nums.as_slice()) {
                ("conv", &[f, k, s, p]) => Ok(conv(f, k, s, p)),
                ("pool", &[n]) => Ok(StemLayer::Pool { size: n }),
                _ => Err(bad()),
            }
        })
        .collect()
}
