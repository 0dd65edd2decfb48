//! Mini-batch SGD training with validation-based checkpointing.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::arch::{InputNorm, Mode, Network, Profile};
use crate::data::image::{Mask, ProbMap};
use crate::data::io::write_bytes;
use crate::error::{Error, Result};
use crate::eval::{best_mean_f, f_measure, threshold_grid, Aggregate};
use crate::experiments::config::TrainConfig;
use crate::experiments::dataset::{assemble, sample_examples, Blank, SceneData};
use crate::experiments::predict::{predict_image, predict_tiles};
use crate::nn::optim::{Sgd, SgdParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    EarlyStop,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub config_hash: String,
    pub seed: u64,
    /// Summed loss of every mini-batch.
    pub losses: Vec<f64>,
    /// Validation score after each epoch (empty without validation scenes).
    pub val_f: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stop: StopReason,
    pub wall_clock_s: f64,
}

impl RunLog {
    /// SHA-256 over everything but wall-clock time.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(self.seed.to_le_bytes());
        for v in self.losses.iter().chain(&self.val_f) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(format!("{:?}{:?}", self.best_epoch, self.stop).as_bytes());
        hex::encode(h.finalize())
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{},{l:.6}", i + 1);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "iterations={}", self.losses.len());
        let _ = writeln!(s, "val_f={}", self.val_f.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","));
        let _ = writeln!(s, "best_epoch={}", self.best_epoch.map_or("-".into(), |e| e.to_string()));
        let _ = writeln!(s, "stop={:?}", self.stop);
        let _ = writeln!(s, "wall_clock_s={:.3}", self.wall_clock_s);
        let _ = writeln!(s, "log_hash={}", self.hash());
        s
    }
}

pub struct TrainOutcome {
    /// Parameters with the best validation score (the final ones without
    /// validation scenes).
    pub net: Network,
    pub log: RunLog,
}

/// Validation score: best mean F over the 0.01 grid for segmentation modes,
/// best patch-level F of the residential decision for RA-Seg.
pub fn validation_score(net: &Network, val: &[SceneData], rho: usize) -> Result<f64> {
    let grid = threshold_grid(0.01)?;
    if net.mode == Mode::RaClassifier {
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for s in val {
            let (g, out) = predict_tiles(net, &s.image, Blank::None)?;
            probs.extend(out);
            labels.extend(g.centers.iter().map(|&c| s.residential(c)));
        }
        let mut best = 0.0f64;
        for &t in &grid {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&p, &l) in probs.iter().zip(&labels) {
                match (p as f64 >= t, l) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let prec = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let rec = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
            best = best.max(f_measure(prec, rec));
        }
        return Ok(best);
    }
    let maps = predict_maps(net, val)?;
    Ok(best_mean_f(&maps, &grid, rho, Aggregate::MeanOverImages)?.1)
}

pub fn predict_maps(net: &Network, scenes: &[SceneData]) -> Result<Vec<(ProbMap, Mask)>> {
    scenes
        .iter()
        .map(|s| Ok((predict_image(net, &s.image)?, s.mask.clone())))
        .collect()
}

/// Trains from scratch. With `out`, writes `best.ckpt` on every validation
/// improvement, `last_good.ckpt` on divergence, and the loss curve and run
/// summary at the end.
pub fn train(cfg: &TrainConfig, train: &[SceneData], val: &[SceneData], out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let profile = Profile::by_name(&cfg.profile)?;
    let net = Network::new(&profile, cfg.mode, cfg.seed)?;
    train_from(cfg, net, train, val, out)
}

pub fn train_from(cfg: &TrainConfig, mut net: Network, train: &[SceneData], val: &[SceneData], out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let t0 = Instant::now();
    if cfg.standardize {
        net.input_norm = InputNorm::from_pixels(train.iter().map(|s| s.image.data.as_slice()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(
        SgdParams {
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
        &net.param_shapes(),
    );
    let mut log = RunLog {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        losses: Vec::new(),
        val_f: Vec::new(),
        best_epoch: None,
        stop: StopReason::Budget,
        wall_clock_s: 0.0,
    };
    let mut best: Option<(f64, Network)> = None;
    let mut stale = 0;
    let per_epoch = cfg.iterations_per_epoch * cfg.batch_size;

    'epochs: for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.lr_step_epochs == 0 {
            opt.params.lr *= cfg.lr_decay;
        }
        let mut examples = sample_examples(
            train,
            per_epoch,
            cfg.mode,
            cfg.positive_fraction,
            cfg.decoy_negative_fraction,
            &mut rng,
        )?;
        examples.shuffle(&mut rng);
        for batch in examples.chunks(cfg.batch_size) {
            let (l, g, target) = assemble(train, batch, cfg.mode)?;
            let (loss, grads) = net.loss_and_grads(l.as_ref(), g.as_ref(), &target)?;
            log.losses.push(loss);
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                let iteration = log.losses.len();
                if let Some(dir) = out {
                    let good = best.as_ref().map(|b| &b.1).unwrap_or(&net);
                    save_net(good, &dir.join("last_good.ckpt"))?;
                }
                return Err(Error::Diverged { iteration, loss });
            }
            opt.step(net.params_mut(), &grads)?;
        }
        if val.is_empty() {
            continue;
        }
        let f = validation_score(&net, val, cfg.rho)?;
        log.val_f.push(f);
        if best.as_ref().map_or(true, |b| f > b.0) {
            best = Some((f, net.clone()));
            log.best_epoch = Some(epoch);
            stale = 0;
            if let Some(dir) = out {
                save_net(&net, &dir.join("best.ckpt"))?;
            }
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                log.stop = StopReason::EarlyStop;
                break 'epochs;
            }
        }
    }
    log.wall_clock_s = t0.elapsed().as_secs_f64();
    let net = best.map(|b| b.1).unwrap_or(net);
    if let Some(dir) = out {
        if val.is_empty() {
            save_net(&net, &dir.join("best.ckpt"))?;
        }
        write_bytes(&dir.join("loss.csv"), log.loss_csv().as_bytes())?;
        write_bytes(&dir.join("run.txt"), log.summary().as_bytes())?;
        write_bytes(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    }
    Ok(TrainOutcome { net, log })
}

fn save_net(net: &Network, path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
    }
    net.save(path)
}
