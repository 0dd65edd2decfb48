//! Training configuration as a `key=value` file.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::arch::Mode;
use crate::data::synth::ObjectClass;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Mini-batches per epoch.
    pub iterations_per_epoch: usize,
    pub seed: u64,
    pub profile: String,
    pub mode: Mode,
    /// Metadata class treated as foreground.
    pub class: ObjectClass,
    /// Share of positive training patches (quota sampled).
    pub positive_fraction: f64,
    /// Share of the negative patches drawn from windows touching decoy
    /// roofs; 0 samples negatives uniformly.
    pub decoy_negative_fraction: f64,
    /// Multiply the learning rate by `lr_decay` every `lr_step_epochs`
    /// epochs; 1.0 keeps it fixed.
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Relaxation radius for validation mean F.
    pub rho: usize,
    /// Standardize inputs per channel with statistics of the training
    /// images (stored in the checkpoint).
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            momentum: 0.9,
            lr: 1e-4,
            weight_decay: 5e-4,
            epochs: 10,
            iterations_per_epoch: 100,
            seed: 0,
            profile: "desk".into(),
            mode: Mode::Dual,
            class: ObjectClass::Building,
            positive_fraction: 0.5,
            decoy_negative_fraction: 0.0,
            lr_decay: 1.0,
            lr_step_epochs: 1,
            patience: 3,
            rho: 3,
            standardize: true,
        }
    }
}

impl TrainConfig {
    /// Settings used for the desk runs on the designed scenes: a lower step
    /// size and half of the negatives drawn around decoys.
    pub fn designed() -> Self {
        TrainConfig {
            lr: 3e-5,
            decoy_negative_fraction: 0.5,
            epochs: 4,
            iterations_per_epoch: 500,
            patience: 0,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::default()),
            "designed" => Ok(Self::designed()),
            _ => Err(Error::invalid(format!("unknown training preset {name:?}"))),
        }
    }

    /// The residential classifier is trained in the 1 : 7 regime.
    pub fn ra_default() -> Self {
        TrainConfig {
            mode: Mode::RaClassifier,
            positive_fraction: 0.125,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if self.batch_size == 0 || self.epochs == 0 || self.iterations_per_epoch == 0 || self.lr_step_epochs == 0 {
            return Err(Error::invalid("batch_size, epochs, iterations_per_epoch and lr_step_epochs must be ≥ 1"));
        }
        pos("momentum", self.momentum)?;
        pos("weight_decay", self.weight_decay)?;
        pos("lr_decay", self.lr_decay)?;
        if !(self.lr >= 0.0) {
            return Err(Error::invalid(format!("lr must be ≥ 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) || !(0.0..=1.0).contains(&self.decoy_negative_fraction) {
            return Err(Error::invalid("positive_fraction and decoy_negative_fraction must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "momentum={}", self.momentum);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "iterations_per_epoch={}", self.iterations_per_epoch);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "profile={}", self.profile);
        let _ = writeln!(s, "mode={}", self.mode.name());
        let _ = writeln!(s, "class={}", self.class.name());
        let _ = writeln!(s, "positive_fraction={}", self.positive_fraction);
        let _ = writeln!(s, "decoy_negative_fraction={}", self.decoy_negative_fraction);
        let _ = writeln!(s, "lr_decay={}", self.lr_decay);
        let _ = writeln!(s, "lr_step_epochs={}", self.lr_step_epochs);
        let _ = writeln!(s, "patience={}", self.patience);
        let _ = writeln!(s, "rho={}", self.rho);
        let _ = writeln!(s, "standardize={}", self.standardize);
        s
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("{k}: cannot parse {v:?}")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "iterations_per_epoch" => self.iterations_per_epoch = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "profile" => self.profile = v.to_string(),
            "mode" => self.mode = Mode::parse(v)?,
            "class" => self.class = ObjectClass::parse(v)?,
            "positive_fraction" => self.positive_fraction = num(key, v)?,
            "decoy_negative_fraction" => self.decoy_negative_fraction = num(key, v)?,
            "lr_decay" => self.lr_decay = num(key, v)?,
            "lr_step_epochs" => self.lr_step_epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "standardize" => self.standardize = num(key, v)?,
            _ => return Err(Error::invalid(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(TrainConfig::default(), text)
    }

    pub fn parse_over(mut c: TrainConfig, text: &str) -> Result<Self> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", n + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
