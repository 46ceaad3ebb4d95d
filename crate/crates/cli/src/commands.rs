use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use oce_metrics::{CalMetrics, Mask, MetricReport};
use oce_net::checkpoint;
use oce_net::data::{load_dataset, pair_stems, png_files, sample_patches, PatchSet};
use oce_net::gabor::{gabor_bank, orientations, to_gray8};
use oce_net::infer::{infer_confidence, infer_full_image, threshold};
use oce_net::preprocess::{binarize, load_png, luminance, preprocess, save_gray_png, save_rgb_png, to_u8, Pixels};
use oce_net::train::fit;
use oce_net::uarm::region;
use oce_net::{Config, Error, Model, Result};

use crate::{resolve_config, split_pair, Cli, Command, EvalArgs, GaborArgs, InferArgs, PreprocessArgs, TrainArgs};

pub fn dispatch(cli: &Cli, env_seed: Option<&str>) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a, env_seed),
        Command::Infer(a) => infer(cli, a, env_seed),
        Command::Eval(a) => eval(cli, a, env_seed),
        Command::GaborDump(a) => gabor_dump(cli, a, env_seed),
        Command::Preprocess(a) => preprocess_cmd(cli, a, env_seed),
    }
}

pub const SNAPSHOT: &str = "config.txt";
pub const CHECKPOINT: &str = "model.ocen";
pub const LOSS_CSV: &str = "loss.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_snapshot(dir: &Path, cfg: &Config) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(SNAPSHOT);
    std::fs::write(&path, cfg.to_string()).map_err(|e| Error::io(path, e))
}

/// The configuration a checkpoint was trained with: `--config` if given,
/// else the snapshot beside the checkpoint, else defaults.
fn checkpoint_config(cli: &Cli, ckpt: &Path, env_seed: Option<&str>) -> Result<Config> {
    let beside = ckpt.parent().map(|d| d.join(SNAPSHOT)).filter(|p| p.is_file());
    let file = cli.config.clone().or(beside);
    let cfg = resolve_config(file.as_deref(), env_seed, &cli.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cfg: &Config, ckpt: &Path) -> Result<Model<f32>> {
    let mut model = Model::<f32>::build(cfg.network.clone(), cfg.seed)?;
    checkpoint::load(&mut model.store, ckpt)?;
    Ok(model)
}

/// `(stem, path)` of a single PNG or of every PNG in a directory.
fn inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_file() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        return Ok(vec![(stem, path.to_path_buf())]);
    }
    let files = png_files(path)?;
    if files.is_empty() {
        return Err(Error::io(path, "no PNG images"));
    }
    Ok(files.into_iter().collect())
}

fn train(cli: &Cli, a: &TrainArgs, env_seed: Option<&str>) -> Result<()> {
    let mut cfg = resolve_config(cli.config.as_deref(), env_seed, &cli.overrides)?;
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.patches {
        cfg.train.num_patches = v;
    }
    for s in &a.ablate {
        let (k, v) = split_pair(s)?;
        cfg.ablate(k, v)?;
    }
    cfg.validate()?;
    write_snapshot(&a.out, &cfg)?;

    let t = &cfg.train;
    let ds = load_dataset(&a.data, &cfg.preprocess)?;
    let sizes: Vec<(usize, usize)> = ds.samples.iter().map(|s| (s.image.width, s.image.height)).collect();
    let index = sample_patches(&sizes, t.num_patches, t.patch_size, cfg.seed)?;
    let (train_set, val_set) = PatchSet::extract(&ds, &index, t.patch_size).split_tail(t.val_fraction);
    let mut model = Model::<f32>::build(cfg.network.clone(), cfg.seed)?;
    eprintln!(
        "{} images, {} training and {} validation patches, {} parameters",
        ds.samples.len(),
        train_set.len(),
        val_set.len(),
        model.num_parameters()
    );

    let csv_path = a.out.join(LOSS_CSV);
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
    let mut io_err = None;
    let mut log_line = |line: String| {
        if io_err.is_none() {
            io_err = writeln!(csv, "{line}").and_then(|_| csv.flush()).err();
        }
    };
    log_line("epoch,steps,lr,train_loss,val_loss".into());
    let report = fit(&mut model, t, &train_set, &val_set, cfg.seed, |log| {
        eprintln!(
            "epoch {:>3}  steps {:>6}  lr {:.2e}  train {:.5}  val {:.5}",
            log.epoch, log.steps, log.lr, log.train_loss, log.val_loss
        );
        log_line(format!("{},{},{:e},{:.8},{:.8}", log.epoch, log.steps, log.lr, log.train_loss, log.val_loss));
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(csv_path, e));
    }
    checkpoint::save(&model.store, &a.out.join(CHECKPOINT))?;
    eprintln!("best epoch {} (val {:.5}); wrote {}", report.best_epoch, report.best_val_loss, a.out.display());
    Ok(())
}

fn overlay(px: &Pixels, mask: &[u8]) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(mask.len() * 3);
    for (i, &m) in mask.iter().enumerate() {
        let c = if px.channels == 3 { [px.data[3 * i], px.data[3 * i + 1], px.data[3 * i + 2]] } else { [px.data[i]; 3] };
        if m == 1 {
            rgb.extend_from_slice(&[c[0] / 2, c[1] / 2 + 128, c[2] / 2]);
        } else {
            rgb.extend_from_slice(&c);
        }
    }
    rgb
}

/// Nearest-neighbour upscaling of a `k x k` kernel.
fn save_kernel(path: &Path, kernel: &[f64], k: usize, scale: usize) -> Result<()> {
    let g = to_gray8(kernel);
    let s = scale.max(1);
    let n = k * s;
    let big: Vec<u8> = (0..n * n).map(|i| g[(i / n / s) * k + (i % n) / s]).collect();
    save_gray_png(path, n, n, &big)
}

/// Effective orientation kernels of the first orientation block: the
/// standardized bank under its learned affine.
fn learned_kernels(model: &Model<f32>) -> Option<(Vec<Vec<f64>>, usize)> {
    let conv = &model.net.first_dcoa()?.conv;
    let k = conv.kernel;
    let gamma = model.store.value(conv.kernel_gamma).data();
    let beta = model.store.value(conv.kernel_beta).data();
    let kernels = conv
        .standardized
        .data()
        .chunks(k * k)
        .enumerate()
        .map(|(i, g)| g.iter().map(|&v| v * gamma[i] as f64 + beta[i] as f64).collect())
        .collect();
    Some((kernels, k))
}

fn raw_kernels(cfg: &Config) -> Result<(Vec<Vec<f64>>, usize)> {
    let thetas = orientations(cfg.network.num_orientations, cfg.network.orientation_spacing)?;
    let bank = gabor_bank(&thetas, 3)?;
    Ok((bank.data().chunks(9).map(<[f64]>::to_vec).collect(), 3))
}

fn write_kernels(dir: &Path, kernels: &[Vec<f64>], k: usize, scale: usize) -> Result<()> {
    create_dir(dir)?;
    for (i, kernel) in kernels.iter().enumerate() {
        save_kernel(&dir.join(format!("gabor_{i}.png")), kernel, k, scale)?;
    }
    Ok(())
}

fn infer(cli: &Cli, a: &InferArgs, env_seed: Option<&str>) -> Result<()> {
    let cfg = checkpoint_config(cli, &a.checkpoint, env_seed)?;
    let mut model = load_model(&cfg, &a.checkpoint)?;
    if a.dump_uarm_regions && !cfg.network.use_uarm {
        return Err(Error::Config("--dump-uarm-regions needs a model with use_uarm = true".into()));
    }
    write_snapshot(&a.out, &cfg)?;
    let files = inputs(&a.input)?;
    let mut dirs = vec!["prob", "mask"];
    if a.overlay {
        dirs.push("overlay");
    }
    if a.dump_uarm_regions {
        dirs.push("uarm");
    }
    for d in dirs {
        create_dir(&a.out.join(d))?;
    }
    let (size, stride, batch) = (cfg.train.patch_size, cfg.infer.stride, cfg.train.micro_batch);
    for (stem, path) in &files {
        let px = load_png(path)?;
        let img = preprocess(&px, &cfg.preprocess);
        let map = infer_full_image(&mut model, &img, size, stride, batch)?;
        let (w, h) = (map.width, map.height);
        let mask = threshold(&map.values, cfg.infer.threshold);
        let name = format!("{stem}.png");
        save_gray_png(&a.out.join("prob").join(&name), w, h, &to_u8(&map.values))?;
        let mask_px: Vec<u8> = mask.iter().map(|&m| m * 255).collect();
        save_gray_png(&a.out.join("mask").join(&name), w, h, &mask_px)?;
        if a.overlay {
            save_rgb_png(&a.out.join("overlay").join(&name), w, h, &overlay(&px, &mask))?;
        }
        if a.dump_uarm_regions {
            let conf = infer_confidence(&mut model, &img, size, stride, batch)?
                .ok_or_else(|| Error::Config("model has no refinement stage".into()))?;
            let levels: Vec<u8> = conf.values.iter().map(|&p| region(p as f64) * 127).collect();
            save_gray_png(&a.out.join("uarm").join(&name), w, h, &levels)?;
        }
        eprintln!("{stem}: {} vessel pixels of {}", mask.iter().filter(|&&m| m == 1).count(), w * h);
    }
    if a.dump_gabor {
        let (kernels, k) = match learned_kernels(&model) {
            Some(v) => v,
            None => raw_kernels(&cfg)?,
        };
        write_kernels(&a.out.join("gabor"), &kernels, k, 16)?;
    }
    Ok(())
}

fn gabor_dump(cli: &Cli, a: &GaborArgs, env_seed: Option<&str>) -> Result<()> {
    let (cfg, kernels, k) = match &a.checkpoint {
        Some(ckpt) => {
            let cfg = checkpoint_config(cli, ckpt, env_seed)?;
            let model = load_model(&cfg, ckpt)?;
            let (kernels, k) = match learned_kernels(&model) {
                Some(v) => v,
                None => raw_kernels(&cfg)?,
            };
            (cfg, kernels, k)
        }
        None => {
            let cfg = resolve_config(cli.config.as_deref(), env_seed, &cli.overrides)?;
            cfg.validate()?;
            let (kernels, k) = raw_kernels(&cfg)?;
            (cfg, kernels, k)
        }
    };
    write_snapshot(&a.out, &cfg)?;
    write_kernels(&a.out, &kernels, k, a.scale)
}

fn preprocess_cmd(cli: &Cli, a: &PreprocessArgs, env_seed: Option<&str>) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), env_seed, &cli.overrides)?;
    cfg.validate()?;
    write_snapshot(&a.out, &cfg)?;
    for (stem, path) in inputs(&a.input)? {
        let img = preprocess(&load_png(&path)?, &cfg.preprocess);
        save_gray_png(&a.out.join(format!("{stem}.png")), img.width, img.height, &to_u8(&img.data))?;
    }
    Ok(())
}

struct EvalItem {
    stem: String,
    pred: PathBuf,
    gt: PathBuf,
    prob: Option<PathBuf>,
    fov: Option<PathBuf>,
}

struct EvalRow {
    report: MetricReport,
    /// (thin, thick) scores; a part absent from the ground truth has none.
    split: Option<(Option<CalMetrics>, Option<CalMetrics>)>,
}

fn load_mask(path: &Path) -> Result<Mask> {
    let px = load_png(path)?;
    Mask::from_bytes(px.width, px.height, &binarize(&px)).map_err(|e| Error::io(path, e))
}

fn score(item: &EvalItem, thin: bool) -> Result<EvalRow> {
    let bad = |e: oce_metrics::Error| Error::Format { what: "evaluation input", msg: format!("{}: {e}", item.stem) };
    let pred = load_mask(&item.pred)?;
    let gt = load_mask(&item.gt)?;
    let prob = match &item.prob {
        Some(p) => Some(luminance(&load_png(p)?).into_iter().map(|v| v / 255.0).collect::<Vec<f64>>()),
        None => None,
    };
    let fov = item.fov.as_deref().map(load_mask).transpose()?;
    let report = oce_metrics::evaluate(&pred, &gt, prob.as_deref(), fov.as_ref()).map_err(bad)?;
    let split = if thin {
        let (pt, pk) = oce_metrics::separate_thin(&pred);
        let (gt_thin, gt_thick) = oce_metrics::separate_thin(&gt);
        let part = |p: &Mask, g: &Mask| (g.count() > 0).then(|| oce_metrics::cal_metrics(p, g)).transpose();
        Some((part(&pt, &gt_thin).map_err(bad)?, part(&pk, &gt_thick).map_err(bad)?))
    } else {
        None
    };
    Ok(EvalRow { report, split })
}

fn optional_dir(dir: Option<&Path>, stems: &[&str]) -> Result<Vec<Option<PathBuf>>> {
    let Some(dir) = dir else { return Ok(vec![None; stems.len()]) };
    let files = png_files(dir)?;
    let missing: Vec<&str> = stems.iter().copied().filter(|s| !files.contains_key(*s)).collect();
    if !missing.is_empty() {
        return Err(Error::io(dir, format!("missing files for: {}", missing.join(", "))));
    }
    Ok(stems.iter().map(|s| Some(files[*s].clone())).collect())
}

fn eval(cli: &Cli, a: &EvalArgs, env_seed: Option<&str>) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), env_seed, &cli.overrides)?;
    let preds = png_files(&a.pred)?;
    let gts = png_files(&a.gt)?;
    let pairs = pair_stems(&preds, &gts).map_err(|e| match e {
        Error::Io { msg, .. } => Error::io(&a.pred, format!("{msg} (against {})", a.gt.display())),
        other => other,
    })?;
    if pairs.is_empty() {
        return Err(Error::io(&a.pred, "no PNG images"));
    }
    let stems: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let probs = optional_dir(a.prob.as_deref(), &stems)?;
    let fovs = optional_dir(a.masks.as_deref(), &stems)?;
    let items: Vec<EvalItem> = pairs
        .iter()
        .zip(probs.into_iter().zip(fovs))
        .map(|((stem, p, g), (prob, fov))| EvalItem {
            stem: stem.to_string(),
            pred: p.to_path_buf(),
            gt: g.to_path_buf(),
            prob,
            fov,
        })
        .collect();

    // images are independent; results come back in stem order
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    let chunk = items.len().div_ceil(workers);
    let results: Vec<Result<EvalRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|it| score(it, a.thin)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut rows = Vec::new();
    let mut split_rows = Vec::new();
    for (item, r) in items.iter().zip(results) {
        let r = r?;
        if let Some((thin, thick)) = r.split {
            for (part, m) in [("thin", thin), ("thick", thick)] {
                match m {
                    Some(m) => split_rows.push((item.stem.clone(), part, m)),
                    None => eprintln!("{}: no {part} vessels in the ground truth", item.stem),
                }
            }
        }
        rows.push((item.stem.clone(), r.report));
    }

    write_snapshot(&a.out, &cfg)?;
    let path = a.out.join("report.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    oce_metrics::write_csv(BufWriter::new(file), &rows).map_err(|e| Error::io(&path, e))?;
    if a.thin {
        let path = a.out.join("thin.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        oce_metrics::write_thin_csv(BufWriter::new(file), &split_rows).map_err(|e| Error::io(&path, e))?;
    }
    eprintln!("scored {} images; wrote {}", rows.len(), a.out.display());
    Ok(())
}
