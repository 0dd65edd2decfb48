//! Command-line front end: synth, train, predict, eval, tree-opt, count, ablate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aeroseg::arch::{Mode, Network, Profile};
use aeroseg::combiner::{self, DescentOptions, TreeInputs};
use aeroseg::data::io::{load_raw_map, save_image, save_map_pgm, save_raw_map, write_bytes};
use aeroseg::data::manifest::{Manifest, Split};
use aeroseg::data::synth::{ObjectClass, SynthParams};
use aeroseg::data::ProbMap;
use aeroseg::eval::{self, Aggregate};
use aeroseg::experiments::dataset::{load_split, write_synth_dataset, Blank, SceneData, SplitSizes};
use aeroseg::experiments::predict::{complementarity, decoy_false_positives, mean_boundary_f};
use aeroseg::experiments::TrainConfig;
use aeroseg::postproc::{self, CountOptions};
use aeroseg::{Error, Result};

#[derive(Parser)]
#[command(name = "aeroseg", version, about = "Dual-stream patch segmentation of aerial imagery")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (images, masks, object tables, manifest).
    Synth(SynthArgs),
    /// Train a network on the train split, selecting on the val split.
    Train(TrainArgs),
    /// Predict probability maps for one split.
    Predict(PredictArgs),
    /// Relaxed threshold sweep of predicted maps against ground truth.
    Eval(EvalArgs),
    /// Optimise the RA-Seg / L-Seg threshold triplet.
    TreeOpt(TreeArgs),
    /// Count buildings from predicted maps.
    Count(CountArgs),
    /// Pathway-blanking ablation of a dual-stream checkpoint.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Synth parameter file (`key=value`) applied over the preset; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// base | designed
    #[arg(long, default_value = "designed")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    decoy_fraction: Option<f64>,
    #[arg(long, default_value_t = 8)]
    train: usize,
    #[arg(long, default_value_t = 2)]
    val: usize,
    #[arg(long, default_value_t = 4)]
    test: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config file (`key=value`) applied over the preset; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// base | designed
    #[arg(long, default_value = "designed")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// desk | paper-shaped | path to a profile file
    #[arg(long)]
    profile: Option<String>,
    /// dual | local | global | ra
    #[arg(long)]
    mode: Option<String>,
    /// building | road | meadow | water | forest
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    rho: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of `<scene_id>.map` files.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 3)]
    rho: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    #[arg(long, default_value = "building")]
    class: String,
    /// F from pooled counts instead of the mean over images.
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long)]
    ra_maps: PathBuf,
    #[arg(long)]
    lseg_maps: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long, default_value_t = 3)]
    rho: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Refine with half grid steps after convergence.
    #[arg(long)]
    half_step: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Fixed threshold; by default the mean best threshold over the val maps.
    #[arg(long)]
    threshold: Option<f64>,
    /// Map directory holding val-split maps for threshold selection
    /// (defaults to --maps).
    #[arg(long)]
    val_maps: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rho: usize,
    #[arg(long, default_value_t = 1)]
    erode_radius: usize,
    #[arg(long, default_value_t = 4)]
    min_area: usize,
    #[arg(long, default_value_t = 2.0)]
    multiplier: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// none | local | global | all
    #[arg(long, default_value = "all")]
    blank: String,
    /// Shared threshold for decoy false positives and boundary F; by default
    /// each blanking condition uses its own best mean-F threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 3)]
    rho: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Records what a command wrote; flushed as `index.txt` with SHA-256 sums.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        write_bytes(&p, text.as_bytes())
    }

    fn finish(self, command: &str, resolved: &str) -> Result<()> {
        use sha2::{Digest, Sha256};
        let cfg = self.dir.join(format!("{command}.config.txt"));
        write_bytes(&cfg, resolved.as_bytes())?;
        let mut idx = format!("command={command}\n");
        let mut files = self.files;
        files.push(cfg);
        files.sort();
        files.dedup();
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| Error::file(&f, e))?;
            let rel = f.strip_prefix(&self.dir).unwrap_or(&f);
            let _ = writeln!(idx, "{}\t{}\t{}", rel.display(), bytes.len(), hex::encode(Sha256::digest(&bytes)));
        }
        write_bytes(&self.dir.join("index.txt"), idx.as_bytes())
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::file(p, e))
}

fn load_profile(name: &str) -> Result<Profile> {
    Profile::by_name(name).or_else(|_| Profile::parse(&read_text(Path::new(name))?))
}

fn split_of(manifest: &Manifest, split: Split) -> Result<()> {
    if manifest.split(split).next().is_none() {
        return Err(Error::invalid(format!("manifest has no {} scenes", split.name())));
    }
    Ok(())
}

fn load_maps(dir: &Path, scenes: &[SceneData]) -> Result<Vec<(ProbMap, aeroseg::data::Mask)>> {
    scenes
        .iter()
        .map(|s| Ok((load_raw_map(&dir.join(format!("{}.map", s.id)))?, s.mask.clone())))
        .collect()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut p = SynthParams::preset(&a.preset)?;
    if let Some(c) = &a.config {
        p = SynthParams::parse_over(p, &read_text(c)?)?;
    }
    if let Some(s) = a.seed {
        p.seed = s;
    }
    if let Some(s) = a.size {
        p.height = s;
        p.width = s;
    }
    if let Some(d) = a.decoy_fraction {
        p.decoy_fraction = d;
    }
    let sizes = SplitSizes {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let mut out = Outputs::new(&a.out)?;
    let m = write_synth_dataset(&a.out, &p, sizes)?;
    for e in &m.entries {
        out.files.push(e.image.clone());
        out.files.push(e.mask.clone());
        out.files.push(e.objects_path());
    }
    out.files.push(a.out.join("manifest.tsv"));
    out.files.push(a.out.join("synth.txt"));
    let resolved = format!("{}train={}\nval={}\ntest={}\n", p.to_text(), a.train, a.val, a.test);
    println!("wrote {} scenes to {}", m.entries.len(), a.out.display());
    out.finish("synth", &resolved)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::preset(&a.preset)?;
    if let Some(c) = &a.config {
        cfg = TrainConfig::parse_over(cfg, &read_text(c)?)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.profile {
        cfg.profile = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = Mode::parse(&v)?;
        if cfg.mode == Mode::RaClassifier && a.config.is_none() {
            cfg.positive_fraction = TrainConfig::ra_default().positive_fraction;
            cfg.decoy_negative_fraction = 0.0;
        }
    }
    if let Some(v) = a.class {
        cfg.class = ObjectClass::parse(&v)?;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations_per_epoch = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.lr_decay {
        cfg.lr_decay = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    let manifest = Manifest::load(&a.manifest)?;
    split_of(&manifest, Split::Train)?;
    let tr = load_split(&manifest, Split::Train, cfg.class)?;
    let va = load_split(&manifest, Split::Val, cfg.class)?;
    let profile = load_profile(&cfg.profile)?;
    let net = Network::new(&profile, cfg.mode, cfg.seed)?;
    let mut out = Outputs::new(&a.out)?;
    let outcome = aeroseg::experiments::train::train_from(&cfg, net, &tr, &va, Some(&a.out))?;
    for f in ["best.ckpt", "loss.csv", "run.txt", "config.txt"] {
        out.path(f);
    }
    write_bytes(&a.out.join("profile.txt"), profile.to_text().as_bytes())?;
    out.path("profile.txt");
    print!("{}", outcome.log.summary());
    out.finish("train", &cfg.to_text())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let net = Network::load(&a.checkpoint, &profile)?;
    let manifest = Manifest::load(&a.manifest)?;
    let split = Split::parse(&a.split)?;
    split_of(&manifest, split)?;
    let mut out = Outputs::new(&a.out)?;
    for e in manifest.split(split) {
        let img = e.load_image()?;
        let map = aeroseg::experiments::predict_image(&net, &img)?;
        save_raw_map(&out.path(&format!("{}.map", e.scene_id)), &map)?;
        save_map_pgm(&out.path(&format!("{}.pgm", e.scene_id)), &map)?;
    }
    let resolved = format!(
        "checkpoint={}\nprofile={}\nmanifest={}\nsplit={}\nmode={}\n",
        a.checkpoint.display(),
        a.profile,
        a.manifest.display(),
        a.split,
        net.mode.name()
    );
    out.finish("predict", &resolved)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let split = Split::parse(&a.split)?;
    split_of(&manifest, split)?;
    let scenes = load_split(&manifest, split, ObjectClass::parse(&a.class)?)?;
    let maps = load_maps(&a.maps, &scenes)?;
    let grid = eval::threshold_grid(a.grid_step)?;
    let mut out = Outputs::new(&a.out)?;
    for (s, (m, g)) in scenes.iter().zip(&maps) {
        let rows = eval::sweep(m, g, &grid, a.rho)?;
        out.write(&format!("{}.csv", s.id), &eval::rows_to_csv(&rows))?;
    }
    let agg = if a.pooled { Aggregate::Pooled } else { Aggregate::MeanOverImages };
    let curve = eval::mean_f_curve(&maps, &grid, a.rho, agg)?;
    let mut s = String::from("threshold,mean_f\n");
    for (t, f) in grid.iter().zip(&curve) {
        let _ = writeln!(s, "{t:.6},{f:.6}");
    }
    out.write("mean_f.csv", &s)?;
    let (bt, bf) = eval::best_mean_f(&maps, &grid, a.rho, agg)?;
    println!("best threshold {bt:.2} mean F {bf:.4} over {} images", maps.len());
    let resolved = format!(
        "maps={}\nmanifest={}\nsplit={}\nrho={}\ngrid_step={}\nclass={}\naggregate={:?}\nbest_threshold={bt}\nbest_mean_f={bf}\n",
        a.maps.display(),
        a.manifest.display(),
        a.split,
        a.rho,
        a.grid_step,
        a.class,
        agg
    );
    out.finish("eval", &resolved)
}

fn cmd_tree(a: TreeArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let split = Split::parse(&a.split)?;
    split_of(&manifest, split)?;
    let scenes = load_split(&manifest, split, ObjectClass::Building)?;
    let mut data = Vec::new();
    for s in &scenes {
        data.push(TreeInputs {
            ra: load_raw_map(&a.ra_maps.join(format!("{}.map", s.id)))?,
            lseg: load_raw_map(&a.lseg_maps.join(format!("{}.map", s.id)))?,
            gt: s.mask.clone(),
        });
    }
    let grid = eval::threshold_grid(a.grid_step)?;
    let ra_maps: Vec<_> = data.iter().map(|d| (d.ra.clone(), d.gt.clone())).collect();
    let (l1, _) = eval::best_mean_f(&ra_maps, &grid, a.rho, Aggregate::MeanOverImages)?;
    let (l2, base) = combiner::lseg_baseline(&data, &grid, a.rho)?;
    let opts = DescentOptions {
        rho: a.rho,
        half_step: a.half_step,
        ..Default::default()
    };
    let res = combiner::optimize_triplet(&data, &grid, (l1, l2), &opts)?;
    let mut out = Outputs::new(&a.out)?;
    out.write("trace.csv", &combiner::trace_to_csv(&res.trace))?;
    println!(
        "L1={:.4} L2={:.4} L3={:.4} mean F {:.4} (L-Seg alone {:.4} at {:.2})",
        res.triplet.l1, res.triplet.l2, res.triplet.l3, res.mean_f, base, l2
    );
    let resolved = format!(
        "ra_maps={}\nlseg_maps={}\nmanifest={}\nsplit={}\nrho={}\ngrid_step={}\nhalf_step={}\ninit_l1={l1}\ninit_l2={l2}\nL1={}\nL2={}\nL3={}\nmean_f={}\nlseg_best_mean_f={base}\n",
        a.ra_maps.display(),
        a.lseg_maps.display(),
        a.manifest.display(),
        a.split,
        a.rho,
        a.grid_step,
        a.half_step,
        res.triplet.l1,
        res.triplet.l2,
        res.triplet.l3,
        res.mean_f
    );
    out.finish("tree-opt", &resolved)
}

fn cmd_count(a: CountArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let split = Split::parse(&a.split)?;
    split_of(&manifest, split)?;
    let threshold = match a.threshold {
        Some(t) => t,
        None => {
            let val = load_split(&manifest, Split::Val, ObjectClass::Building)?;
            if val.is_empty() {
                return Err(Error::invalid("no val scenes for threshold selection; pass --threshold"));
            }
            let dir = a.val_maps.as_deref().unwrap_or(&a.maps);
            postproc::select_threshold(&load_maps(dir, &val)?, a.rho)?
        }
    };
    let opts = CountOptions {
        erode_radius: a.erode_radius,
        min_area: a.min_area,
        multiplier: a.multiplier,
        ..Default::default()
    };
    let scenes = load_split(&manifest, split, ObjectClass::Building)?;
    let mut out = Outputs::new(&a.out)?;
    let mut rows = Vec::new();
    for s in &scenes {
        let map = load_raw_map(&a.maps.join(format!("{}.map", s.id)))?;
        let boxes = postproc::detect_boxes(&map.binarize(threshold), &opts);
        let refs: Vec<_> = s
            .objects
            .iter()
            .filter(|o| o.class == ObjectClass::Building && !o.decoy)
            .map(|o| o.rect)
            .filter(|r| {
                let v = map.valid;
                r.row >= v.row && r.col >= v.col && r.bottom() <= v.row + v.rows && r.right() <= v.col + v.cols
            })
            .collect();
        let (rep, _) = postproc::count_report(&boxes, &refs, &opts);
        save_image(&out.path(&format!("{}_overlay.ppm", s.id)), &postproc::overlay(&s.image, &boxes, [255, 255, 0]))?;
        rows.push((s.id.clone(), rep));
    }
    out.write("counts.csv", &postproc::reports_to_csv(&rows, a.multiplier))?;
    for (id, r) in &rows {
        println!("{id}: human {} detected {} precision {:.3} recall {:.3}", r.human_count, r.detected_count, r.precision, r.recall);
    }
    let resolved = format!(
        "maps={}\nmanifest={}\nsplit={}\nthreshold={threshold}\nrho={}\nerode_radius={}\nmin_area={}\nmultiplier={}\niou={}\ncoverage={}\n",
        a.maps.display(),
        a.manifest.display(),
        a.split,
        a.rho,
        opts.erode_radius,
        opts.min_area,
        opts.multiplier,
        opts.iou,
        opts.coverage
    );
    out.finish("count", &resolved)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let net = Network::load(&a.checkpoint, &profile)?;
    if net.mode != Mode::Dual {
        return Err(Error::invalid("ablation needs a dual-stream checkpoint"));
    }
    let manifest = Manifest::load(&a.manifest)?;
    let split = Split::parse(&a.split)?;
    split_of(&manifest, split)?;
    let scenes = load_split(&manifest, split, ObjectClass::Building)?;
    let blanks: Vec<Blank> = if a.blank == "all" {
        vec![Blank::None, Blank::Global, Blank::Local]
    } else {
        vec![Blank::parse(&a.blank)?]
    };
    let mut out = Outputs::new(&a.out)?;
    let mut per_blank = Vec::new();
    for &b in &blanks {
        let mut maps = Vec::new();
        for s in &scenes {
            let m = complementarity(&net, &s.image, b)?;
            let name = format!("{:?}", b).to_lowercase();
            save_raw_map(&out.path(&format!("{name}/{}.map", s.id)), &m)?;
            save_map_pgm(&out.path(&format!("{name}/{}.pgm", s.id)), &m)?;
            maps.push((m, s.mask.clone()));
        }
        per_blank.push((b, maps));
    }
    let grid = eval::threshold_grid(0.01)?;
    let mut csv = String::from("blank,threshold,decoy_false_positives,decoy_pixels,boundary_f,best_mean_f\n");
    for (b, maps) in &per_blank {
        let (best_t, best) = eval::best_mean_f(maps, &grid, a.rho, Aggregate::MeanOverImages)?;
        let threshold = a.threshold.unwrap_or(best_t);
        let (mut fp, mut decoys) = (0, 0);
        let mut bf = 0.0;
        for (s, (m, g)) in scenes.iter().zip(maps) {
            fp += decoy_false_positives(m, &s.objects, threshold);
            decoys += decoy_false_positives(m, &s.objects, f64::NEG_INFINITY);
            bf += mean_boundary_f(m, &s.objects, g, threshold)?;
        }
        let _ = writeln!(
            csv,
            "{},{threshold:.2},{fp},{decoys},{:.6},{best:.6}",
            format!("{b:?}").to_lowercase(),
            bf / scenes.len() as f64
        );
    }
    out.write("ablation.csv", &csv)?;
    print!("{csv}");
    let resolved = format!(
        "checkpoint={}\nprofile={}\nmanifest={}\nsplit={}\nblank={}\nthreshold={}\nrho={}\n",
        a.checkpoint.display(),
        a.profile,
        a.manifest.display(),
        a.split,
        a.blank,
        a.threshold.map_or("per-blank-best".to_string(), |t| t.to_string()),
        a.rho
    );
    out.finish("ablate", &resolved)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AEROSEG_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("AEROSEG_THREADS={v:?} is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<()> {
        init_threads()?;
        match cli.cmd {
            Cmd::Synth(a) => cmd_synth(a),
            Cmd::Train(a) => cmd_train(a),
            Cmd::Predict(a) => cmd_predict(a),
            Cmd::Eval(a) => cmd_eval(a),
            Cmd::TreeOpt(a) => cmd_tree(a),
            Cmd::Count(a) => cmd_count(a),
            Cmd::Ablate(a) => cmd_ablate(a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
