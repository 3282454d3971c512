//! The seven subcommands, as plain functions returning their run manifest.
//!
//! Every command follows the same shape: create the output directory, write
//! the effective configuration (stage seeds already derived) to
//! `config.json`, do the work while timing each stage, then write
//! `manifest.json` naming and hashing every artifact. `cmd_pipeline` chains
//! the stages in memory; if one fails, the manifest is still written with
//! its `partial` flag set so whatever landed on disk is accounted for.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use noduleseg_core::energy::total_energy;
use noduleseg_core::ga::{refine_mask, TraceRow};
use noduleseg_core::imaging::pgm::{
    load_pgm, load_pgm_with_depth, save_pgm, save_ppm, BitDepth,
};
use noduleseg_core::imaging::phantom::{generate_phantom, PhantomSpec};
use noduleseg_core::imaging::{
    gamma_correct, intensity_window, median_filter, overlay_mask, GrayImage, LabelMask,
};
use noduleseg_core::indrnn::bptt::train;
use noduleseg_core::indrnn::checkpoint::Checkpoint;
use noduleseg_core::indrnn::{binarize, predict_prob_map, IndRnnNetwork, ProbMap};
use noduleseg_core::metrics::evaluate;
use noduleseg_core::rng::derive_seed;
use serde::Serialize;

use crate::config::{
    stage_seed, PipelineConfig, PreprocessConfig, STAGE_PHANTOM, STAGE_REFINE, STAGE_TRAIN,
};
use crate::manifest::{sha256_hex, RunManifest};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output dir {}", dir.display()))
}

/// Write the effective configuration next to the other artifacts and return
/// the digest of its bytes; the manifest pins that digest so a reviewer can
/// re-hash `config.json` and confirm nothing drifted.
fn write_config_json<T: Serialize>(dir: &Path, config: &T) -> Result<String> {
    let mut json =
        serde_json::to_string_pretty(config).context("serializing config")?;
    json.push('\n');
    let path = dir.join("config.json");
    fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
    Ok(sha256_hex(json.as_bytes()))
}

/// Median denoise, then intensity windowing, then gamma correction.
fn preprocess_stages(
    image: &GrayImage,
    config: &PreprocessConfig,
) -> Result<[GrayImage; 3]> {
    let median = median_filter(image, config.median_radius)?;
    let windowed = intensity_window(&median, config.window_level, config.window_width)?;
    let gammaed = gamma_correct(&windowed, config.gamma)?;
    Ok([median, windowed, gammaed])
}

fn parse_index(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.strip_suffix(".pgm")?.parse().ok()
}

/// Find `img_N.pgm` / `mask_N.pgm` pairs in a directory, ordered by index.
/// Every image must have its mask and vice versa.
fn discover_pairs(data_dir: &Path) -> Result<Vec<(usize, PathBuf, PathBuf)>> {
    let mut images = BTreeMap::new();
    let mut masks = BTreeMap::new();
    let entries = fs::read_dir(data_dir)
        .with_context(|| format!("reading data dir {}", data_dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(index) = parse_index(name, "img_") {
            images.insert(index, path);
        } else if let Some(index) = parse_index(name, "mask_") {
            masks.insert(index, path);
        }
    }
    for index in images.keys() {
        if !masks.contains_key(index) {
            bail!("img_{index}.pgm has no matching mask_{index}.pgm");
        }
    }
    for index in masks.keys() {
        if !images.contains_key(index) {
            bail!("mask_{index}.pgm has no matching img_{index}.pgm");
        }
    }
    if images.is_empty() {
        bail!(
            "no img_N.pgm/mask_N.pgm pairs found in {}",
            data_dir.display()
        );
    }
    Ok(images
        .into_iter()
        .map(|(index, image)| {
            let mask = masks.remove(&index).expect("checked above");
            (index, image, mask)
        })
        .collect())
}

/// Load all pairs and preprocess each image exactly the way the pipeline
/// preprocesses its input at inference time, so training sees the same
/// intensity statistics the deployed network will.
fn load_training_pairs(
    data_dir: &Path,
    config: &PreprocessConfig,
) -> Result<Vec<(GrayImage, LabelMask)>> {
    let mut pairs = Vec::new();
    for (index, image_path, mask_path) in discover_pairs(data_dir)? {
        let image = load_pgm(&image_path)
            .with_context(|| format!("loading {}", image_path.display()))?;
        let [_, _, preprocessed] = preprocess_stages(&image, config)?;
        let mask_image = load_pgm(&mask_path)
            .with_context(|| format!("loading {}", mask_path.display()))?;
        let mask = LabelMask::from_gray(&mask_image, 0.5);
        ensure!(
            mask.width() == preprocessed.width() && mask.height() == preprocessed.height(),
            "pair {index}: image {}x{} but mask {}x{}",
            preprocessed.width(),
            preprocessed.height(),
            mask.width(),
            mask.height()
        );
        pairs.push((preprocessed, mask));
    }
    Ok(pairs)
}

struct TrainedModel {
    network: IndRnnNetwork,
    losses: Vec<f64>,
}

/// Initialize a fresh network per the model config and train it. The recurrent
/// weight bound uses the widest image as the sequence horizon.
fn run_training(
    pairs: &[(GrayImage, LabelMask)],
    config: &PipelineConfig,
) -> Result<TrainedModel> {
    let train_config = &config.model.train;
    let max_width = pairs.iter().map(|(img, _)| img.width()).max().unwrap_or(1);
    let input_dim = train_config.neighborhood_k * train_config.neighborhood_k;
    let mut network = IndRnnNetwork::init(
        input_dim,
        &config.model.layer_units,
        train_config.clip_gamma,
        max_width,
        train_config.seed,
    )?;
    let losses = train(&mut network, pairs, train_config)?;
    Ok(TrainedModel { network, losses })
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,mean-loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        text.push_str(&format!("{},{}\n", epoch + 1, loss));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut text = String::from("window-index,generation,best-energy\n");
    for row in trace {
        text.push_str(&format!(
            "{},{},{}\n",
            row.window_index, row.generation, row.best_energy
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Load a checkpoint and require its neighborhood to match the config, since
/// the segment stage encodes inputs with the configured `k`.
fn load_model(path: &Path, config: &PipelineConfig) -> Result<IndRnnNetwork> {
    let checkpoint =
        Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let k = config.model.train.neighborhood_k;
    if checkpoint.neighborhood_k != k {
        bail!(
            "model {} expects neighborhood {} but the config says {k}",
            path.display(),
            checkpoint.neighborhood_k
        );
    }
    Ok(checkpoint.to_network()?)
}

/// Generate `count` phantom image/mask pairs from a geometry spec file.
/// Pair `i` draws from a seed derived from the phantom stage seed and `i`,
/// so regenerating with the same spec and seed reproduces identical bytes.
pub fn cmd_phantom(
    spec_path: &Path,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<RunManifest> {
    ensure_dir(out_dir)?;
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec: PhantomSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing spec {}", spec_path.display()))?;
    spec.validate()?;

    #[derive(Serialize)]
    #[serde(rename_all = "kebab-case")]
    struct PhantomRunConfig<'a> {
        spec: &'a PhantomSpec,
        count: usize,
        seed: u64,
    }
    let digest = write_config_json(
        out_dir,
        &PhantomRunConfig {
            spec: &spec,
            count,
            seed,
        },
    )?;

    let mut manifest = RunManifest::new("phantom", seed, digest);
    manifest.record_input("spec", spec_path);
    let pair_stream = stage_seed(seed, STAGE_PHANTOM);
    manifest.record_stage_seed(STAGE_PHANTOM, pair_stream);

    let started = Instant::now();
    for index in 0..count {
        let (image, mask) = generate_phantom(&spec, derive_seed(pair_stream, index as u64))?;
        let image_path = out_dir.join(format!("img_{index}.pgm"));
        let mask_path = out_dir.join(format!("mask_{index}.pgm"));
        save_pgm(&image, &image_path, BitDepth::Eight)?;
        save_pgm(&mask.to_gray(), &mask_path, BitDepth::Eight)?;
        manifest.record_artifact(&format!("img_{index}"), &image_path)?;
        manifest.record_artifact(&format!("mask_{index}"), &mask_path)?;
    }
    manifest.record_timing("generate", started.elapsed());
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Run the three preprocessing stages on one image, writing each stage's
/// output (`median.pgm`, `window.pgm`, `gamma.pgm`) at the input's depth.
pub fn cmd_preprocess(
    image_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("preprocess", config.seed, digest);
    manifest.record_input("image", image_path);

    let (image, depth) = load_pgm_with_depth(image_path)
        .with_context(|| format!("loading {}", image_path.display()))?;
    let started = Instant::now();
    let [median, windowed, gammaed] = preprocess_stages(&image, &config.preprocess)?;
    manifest.record_timing("preprocess", started.elapsed());

    for (name, stage) in [
        ("median", &median),
        ("window", &windowed),
        ("gamma", &gammaed),
    ] {
        let path = out_dir.join(format!("{name}.pgm"));
        save_pgm(stage, &path, depth)?;
        manifest.record_artifact(name, &path)?;
    }
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Train a network on the `img_N.pgm`/`mask_N.pgm` pairs in a directory,
/// writing `model.json` and a per-epoch `loss.csv`.
pub fn cmd_train(
    data_dir: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("train", config.seed, digest);
    manifest.record_input("data-dir", data_dir);
    manifest.record_stage_seed(STAGE_TRAIN, config.model.train.seed);

    let started = Instant::now();
    let pairs = load_training_pairs(data_dir, &config.preprocess)?;
    manifest.record_timing("load", started.elapsed());
    manifest.note(format!("{} training pairs", pairs.len()));

    let started = Instant::now();
    let trained = run_training(&pairs, &config)?;
    manifest.record_timing("train", started.elapsed());
    if let (Some(first), Some(last)) = (trained.losses.first(), trained.losses.last()) {
        manifest.note(format!("epoch mean loss: first {first}, final {last}"));
    }

    let model_path = out_dir.join("model.json");
    Checkpoint::from_network(
        &trained.network,
        config.model.train.clip_gamma,
        config.model.train.neighborhood_k,
        config.model.train.seed,
    )
    .save(&model_path)?;
    manifest.record_artifact("model", &model_path)?;

    let loss_path = out_dir.join("loss.csv");
    write_loss_csv(&loss_path, &trained.losses)?;
    manifest.record_artifact("loss", &loss_path)?;

    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Run a trained model over an image: 16-bit probability map, thresholded
/// mask, and a red-tinted overlay for eyeballing.
pub fn cmd_segment(
    image_path: &Path,
    model_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("segment", config.seed, digest);
    manifest.record_input("image", image_path);
    manifest.record_input("model", model_path);

    let image = load_pgm(image_path)
        .with_context(|| format!("loading {}", image_path.display()))?;
    let network = load_model(model_path, &config)?;

    let started = Instant::now();
    let probmap = predict_prob_map(&network, &image, config.model.train.neighborhood_k)?;
    let mask = binarize(&probmap, config.binarize_threshold);
    manifest.record_timing("segment", started.elapsed());

    let probmap_path = out_dir.join("probmap.pgm");
    save_pgm(&probmap.to_gray(), &probmap_path, BitDepth::Sixteen)?;
    manifest.record_artifact("probmap", &probmap_path)?;

    let mask_path = out_dir.join("mask.pgm");
    save_pgm(&mask.to_gray(), &mask_path, BitDepth::Eight)?;
    manifest.record_artifact("mask", &mask_path)?;

    let overlay_path = out_dir.join("overlay.ppm");
    save_ppm(&overlay_mask(&image, &mask)?, &overlay_path)?;
    manifest.record_artifact("overlay", &overlay_path)?;

    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Refine a mask by window-wise energy minimization. The manifest records
/// the total energy before and after; the refined energy is never higher.
pub fn cmd_refine(
    mask_path: &Path,
    probmap_path: &Path,
    image_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("refine", config.seed, digest);
    manifest.record_input("mask", mask_path);
    manifest.record_input("probmap", probmap_path);
    manifest.record_input("image", image_path);
    manifest.record_stage_seed(STAGE_REFINE, config.ga.seed);

    let image = load_pgm(image_path)
        .with_context(|| format!("loading {}", image_path.display()))?;
    let probmap = ProbMap::from_gray(
        &load_pgm(probmap_path)
            .with_context(|| format!("loading {}", probmap_path.display()))?,
    );
    let mask = LabelMask::from_gray(
        &load_pgm(mask_path).with_context(|| format!("loading {}", mask_path.display()))?,
        0.5,
    );

    let params = config.energy.resolve(&image)?;
    manifest.note(format!("pairwise sigma {}", params.sigma));
    let energy_before = total_energy(&mask, &probmap, &image, &params)?;

    let started = Instant::now();
    let outcome = refine_mask(&mask, &probmap, &image, &params, &config.ga)?;
    manifest.record_timing("refine", started.elapsed());

    let energy_after = total_energy(&outcome.mask, &probmap, &image, &params)?;
    ensure!(
        energy_after <= energy_before,
        "refinement raised total energy from {energy_before} to {energy_after}"
    );
    manifest.energy_before = Some(energy_before);
    manifest.energy_after = Some(energy_after);

    let refined_path = out_dir.join("refined.pgm");
    save_pgm(&outcome.mask.to_gray(), &refined_path, BitDepth::Eight)?;
    manifest.record_artifact("refined", &refined_path)?;

    let trace_path = out_dir.join("trace.csv");
    write_trace_csv(&trace_path, &outcome.trace)?;
    manifest.record_artifact("trace", &trace_path)?;

    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Score a predicted mask against ground truth, writing `metrics.json`.
pub fn cmd_eval(
    pred_path: &Path,
    truth_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("eval", config.seed, digest);
    manifest.record_input("pred", pred_path);
    manifest.record_input("truth", truth_path);

    let pred = LabelMask::from_gray(
        &load_pgm(pred_path).with_context(|| format!("loading {}", pred_path.display()))?,
        0.5,
    );
    let truth = LabelMask::from_gray(
        &load_pgm(truth_path)
            .with_context(|| format!("loading {}", truth_path.display()))?,
        0.5,
    );
    let report = evaluate(&pred, &truth)?;

    let metrics_path = out_dir.join("metrics.json");
    let mut json = serde_json::to_string_pretty(&report).context("serializing metrics")?;
    json.push('\n');
    fs::write(&metrics_path, json)
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    manifest.record_artifact("metrics", &metrics_path)?;
    manifest.metrics = Some(report);

    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Where `cmd_pipeline` gets its network from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    /// Load an existing checkpoint.
    Checkpoint(PathBuf),
    /// Train from `img_N.pgm`/`mask_N.pgm` pairs in this directory first.
    TrainDir(PathBuf),
}

/// Run the whole pipeline on one image, numbering each stage's artifact so
/// the output directory reads in processing order. When a stage fails the
/// manifest is still written, flagged partial, so the directory's contents
/// stay accounted for.
pub fn cmd_pipeline(
    image_path: &Path,
    truth_path: Option<&Path>,
    model: &ModelSource,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let config = config.clone().with_derived_seeds();
    let digest = write_config_json(out_dir, &config)?;
    let mut manifest = RunManifest::new("pipeline", config.seed, digest);
    manifest.record_input("image", image_path);
    if let Some(truth) = truth_path {
        manifest.record_input("truth", truth);
    }

    match pipeline_stages(image_path, truth_path, model, &config, out_dir, &mut manifest) {
        Ok(()) => {
            manifest.save(out_dir)?;
            Ok(manifest)
        }
        Err(err) => {
            manifest.partial = true;
            manifest.note(format!("failed: {err:#}"));
            manifest.save(out_dir)?;
            Err(err)
        }
    }
}

fn pipeline_stages(
    image_path: &Path,
    truth_path: Option<&Path>,
    model: &ModelSource,
    config: &PipelineConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let save_stage = |manifest: &mut RunManifest,
                      name: &str,
                      image: &GrayImage,
                      depth: BitDepth|
     -> Result<()> {
        let path = out_dir.join(format!("{name}.pgm"));
        save_pgm(image, &path, depth)?;
        manifest.record_artifact(name, &path)
    };

    let started = Instant::now();
    let (input, depth) = load_pgm_with_depth(image_path)
        .with_context(|| format!("loading {}", image_path.display()))
        .context("stage input")?;
    save_stage(manifest, "01_input", &input, depth).context("stage input")?;
    manifest.record_timing("input", started.elapsed());

    let started = Instant::now();
    let [median, windowed, gammaed] =
        preprocess_stages(&input, &config.preprocess).context("stage preprocess")?;
    save_stage(manifest, "02_median", &median, depth).context("stage preprocess")?;
    save_stage(manifest, "03_window", &windowed, depth).context("stage preprocess")?;
    save_stage(manifest, "04_gamma", &gammaed, depth).context("stage preprocess")?;
    manifest.record_timing("preprocess", started.elapsed());
    let preprocessed = gammaed;

    let started = Instant::now();
    let network = match model {
        ModelSource::Checkpoint(path) => {
            manifest.record_input("model", path);
            load_model(path, config).context("stage model")?
        }
        ModelSource::TrainDir(data_dir) => {
            manifest.record_input("train-dir", data_dir);
            manifest.record_stage_seed(STAGE_TRAIN, config.model.train.seed);
            let pairs =
                load_training_pairs(data_dir, &config.preprocess).context("stage model")?;
            let trained = run_training(&pairs, config).context("stage model")?;
            if let (Some(first), Some(last)) =
                (trained.losses.first(), trained.losses.last())
            {
                manifest.note(format!("epoch mean loss: first {first}, final {last}"));
            }
            let model_path = out_dir.join("model.json");
            Checkpoint::from_network(
                &trained.network,
                config.model.train.clip_gamma,
                config.model.train.neighborhood_k,
                config.model.train.seed,
            )
            .save(&model_path)
            .context("stage model")?;
            manifest.record_artifact("model", &model_path)?;
            let loss_path = out_dir.join("loss.csv");
            write_loss_csv(&loss_path, &trained.losses)?;
            manifest.record_artifact("loss", &loss_path)?;
            trained.network
        }
    };
    manifest.record_timing("model", started.elapsed());

    let started = Instant::now();
    let probmap =
        predict_prob_map(&network, &preprocessed, config.model.train.neighborhood_k)
            .context("stage segment")?;
    let mask = binarize(&probmap, config.binarize_threshold);
    let probmap_path = out_dir.join("05_probmap.pgm");
    save_pgm(&probmap.to_gray(), &probmap_path, BitDepth::Sixteen)
        .context("stage segment")?;
    manifest.record_artifact("05_probmap", &probmap_path)?;
    save_stage(manifest, "06_mask", &mask.to_gray(), BitDepth::Eight)
        .context("stage segment")?;
    manifest.record_timing("segment", started.elapsed());

    manifest.record_stage_seed(STAGE_REFINE, config.ga.seed);
    let params = config.energy.resolve(&preprocessed).context("stage refine")?;
    manifest.note(format!("pairwise sigma {}", params.sigma));
    let energy_before =
        total_energy(&mask, &probmap, &preprocessed, &params).context("stage refine")?;
    let started = Instant::now();
    let outcome = refine_mask(&mask, &probmap, &preprocessed, &params, &config.ga)
        .context("stage refine")?;
    manifest.record_timing("refine", started.elapsed());
    let energy_after = total_energy(&outcome.mask, &probmap, &preprocessed, &params)
        .context("stage refine")?;
    ensure!(
        energy_after <= energy_before,
        "refinement raised total energy from {energy_before} to {energy_after}"
    );
    manifest.energy_before = Some(energy_before);
    manifest.energy_after = Some(energy_after);
    save_stage(manifest, "07_refined", &outcome.mask.to_gray(), BitDepth::Eight)
        .context("stage refine")?;
    let trace_path = out_dir.join("trace.csv");
    write_trace_csv(&trace_path, &outcome.trace)?;
    manifest.record_artifact("trace", &trace_path)?;

    let overlay_path = out_dir.join("08_overlay.ppm");
    save_ppm(&overlay_mask(&input, &outcome.mask).context("stage overlay")?, &overlay_path)
        .context("stage overlay")?;
    manifest.record_artifact("08_overlay", &overlay_path)?;

    match truth_path {
        Some(truth_path) => {
            let truth = LabelMask::from_gray(
                &load_pgm(truth_path)
                    .with_context(|| format!("loading {}", truth_path.display()))
                    .context("stage eval")?,
                0.5,
            );
            let report = evaluate(&outcome.mask, &truth).context("stage eval")?;
            let metrics_path = out_dir.join("metrics.json");
            let mut json =
                serde_json::to_string_pretty(&report).context("serializing metrics")?;
            json.push('\n');
            fs::write(&metrics_path, json)
                .with_context(|| format!("writing {}", metrics_path.display()))?;
            manifest.record_artifact("metrics", &metrics_path)?;
            manifest.metrics = Some(report);
        }
        None => manifest.note("eval skipped: no ground truth supplied"),
    }
    Ok(())
}
