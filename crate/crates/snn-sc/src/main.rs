//! Command-line driver: dataset generation, the three-stage training
//! schedule, accuracy-vs-noise sweeps, ablations, report generation, and
//! the TCP split-inference server/client.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. A `--config`
//! file of `key = value` lines overrides the corresponding flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use snn_sc::baselines::separate::SeparateCodingConfig;
use snn_sc::baselines::CnnScModel;
use snn_sc::channel::{ChannelConfig, ChannelKind};
use snn_sc::checkpoint;
use snn_sc::error::{Error, Result};
use snn_sc::harness::experiment::{
    self, eval_cnn, eval_separate, eval_snn, mean_std, write_sweep_csv, EvalData, SweepRow,
};
use snn_sc::harness::report::generate_report;
use snn_sc::harness::{ConfigMap, Dataset, DatasetSpec};
use snn_sc::nn::{Backbone, Geometry, NeuronVariant, SnnScModel};
use snn_sc::training::{
    train_backbone, train_cnn_sc, train_snn_sc, MetricsWriter, Stage, TrainConfig,
};
use snn_sc::transport::{edge_run, CloudServer, CloudState};

#[derive(Parser)]
#[command(
    name = "snn-sc",
    version,
    about = "Spiking semantic communication for split edge-cloud inference"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic blob dataset.
    GenData(GenDataArgs),
    /// Train the backbone and a semantic-communication module.
    Train(TrainArgs),
    /// Accuracy-vs-noise sweep over trained checkpoints.
    Sweep(SweepArgs),
    /// Neuron-variant and entropy-target ablations.
    Ablate(AblateArgs),
    /// Run the cloud half of the split model on a TCP listener.
    Serve(ServeArgs),
    /// Classify one dataset sample through a running cloud server.
    Infer(InferArgs),
    /// Summarize a sweep CSV into series files and a text report.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let usage_ok = matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if usage_ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let run = match cli.cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Infer(a) => infer(a),
        Cmd::Report(a) => report(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigMap> {
    match path {
        Some(p) => ConfigMap::from_file(p),
        None => Ok(ConfigMap::default()),
    }
}

fn parse_p_list(raw: &str) -> Result<Vec<f64>> {
    let ps: Vec<f64> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad probability `{s}`")))
        })
        .collect::<Result<_>>()?;
    if ps.is_empty() || ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("test probabilities must lie in [0, 1]".into()));
    }
    Ok(ps)
}

// ---------------------------------------------------------------- gen-data

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1200)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    img: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Pixel noise standard deviation in [0, 1] intensity units.
    #[arg(long, default_value_t = 0.08)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let spec = DatasetSpec {
        n: cfg.override_parsed("n", a.n)?,
        img: cfg.override_parsed("img", a.img)?,
        channels: cfg.override_parsed("channels", a.channels)?,
        classes: cfg.override_parsed("classes", a.classes)?,
        train_fraction: cfg.override_parsed("train_fraction", a.train_fraction)?,
        noise: cfg.override_parsed("noise", a.noise)?,
        seed: cfg.override_parsed("seed", a.seed)?,
    };
    let data = Dataset::generate(spec)?;
    data.save(&a.out)?;
    println!(
        "wrote {} ({} samples, {}x{}x{}, {} classes, {} train / {} test)",
        a.out.display(),
        data.n,
        data.c,
        data.h,
        data.w,
        data.classes,
        data.n_train,
        data.n - data.n_train
    );
    Ok(())
}

// -------------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Directory for checkpoints (created if missing).
    #[arg(long, default_value = "models")]
    out_dir: PathBuf,
    /// Which module to train: `snn` or `cnn`.
    #[arg(long, default_value = "snn")]
    model: String,
    /// Reconstructor output neuron: `ihf`, `if` or `ihfm`.
    #[arg(long, default_value = "ihf")]
    variant: String,
    /// Channel during training: `bsc` or `bec`.
    #[arg(long, default_value = "bsc")]
    channel: String,
    /// Channel error/erasure probability during training.
    #[arg(long, default_value_t = 0.15)]
    train_p: f64,
    /// Entropy target for the regularizer.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Spiking time steps T (also the CNN quantization depth n).
    #[arg(long, default_value_t = 4)]
    time_steps: usize,
    /// Split-point feature channels.
    #[arg(long, default_value_t = 64)]
    feat_c: usize,
    #[arg(long, default_value_t = 6)]
    backbone_epochs: usize,
    #[arg(long, default_value_t = 8)]
    sc_epochs: usize,
    /// Joint fine-tune epochs (0 skips the stage).
    #[arg(long, default_value_t = 0)]
    joint_epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_backbone: f64,
    /// Desk-scale schedule: halved every 10 epochs.
    #[arg(long, default_value_t = 1e-4)]
    lr_sc: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr_joint: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Training metrics CSV (optional).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Checkpoint file name override (without directory).
    #[arg(long)]
    out_name: Option<String>,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Load the shared backbone from `dir`, training and saving it first if the
/// checkpoint does not exist yet.
#[allow(clippy::too_many_arguments)]
fn ensure_backbone(
    dir: &Path,
    data: &Dataset,
    feat_c: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    metrics: &mut MetricsWriter,
) -> Result<Backbone> {
    let path = dir.join("backbone.ckpt");
    if path.exists() {
        return checkpoint::load_backbone(&path);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bb = Backbone::new(&mut rng, data.c, data.h, data.classes, feat_c)?;
    let cfg = TrainConfig {
        alpha: 0.0,
        epochs,
        batch_size,
        lr,
        lr_decay: (0.5, 10),
        channel: ChannelConfig::new(ChannelKind::Bsc, 0.0, seed)?,
        stage: Stage::Backbone,
        seed,
    };
    train_backbone(&mut bb, &data.train_images(), data.train_labels(), &cfg, metrics)?;
    checkpoint::save_backbone(&path, &mut bb)?;
    println!("trained backbone -> {}", path.display());
    Ok(bb)
}

fn sc_geometry(data: &Dataset, feat_c: usize, time_steps: usize) -> Geometry {
    Geometry::plan(feat_c, data.h / 4, data.w / 4, time_steps)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let model_kind = cfg.get("model").unwrap_or(&a.model).to_string();
    let variant = NeuronVariant::from_tag(cfg.get("variant").unwrap_or(&a.variant))?;
    let kind = ChannelKind::from_tag(cfg.get("channel").unwrap_or(&a.channel))?;
    let train_p = cfg.override_parsed("train_p", a.train_p)?;
    let alpha = cfg.override_parsed("alpha", a.alpha)?;
    let time_steps = cfg.override_parsed("time_steps", a.time_steps)?;
    let feat_c = cfg.override_parsed("feat_c", a.feat_c)?;
    let backbone_epochs = cfg.override_parsed("backbone_epochs", a.backbone_epochs)?;
    let sc_epochs = cfg.override_parsed("sc_epochs", a.sc_epochs)?;
    let joint_epochs = cfg.override_parsed("joint_epochs", a.joint_epochs)?;
    let batch_size = cfg.override_parsed("batch_size", a.batch_size)?;
    let lr_backbone = cfg.override_parsed("lr_backbone", a.lr_backbone)?;
    let lr_sc = cfg.override_parsed("lr_sc", a.lr_sc)?;
    let lr_joint = cfg.override_parsed("lr_joint", a.lr_joint)?;
    let seed = cfg.override_parsed("seed", a.seed)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config("alpha must lie in [0, 1]".into()));
    }

    let data = Dataset::load(&a.data)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut metrics = MetricsWriter::create(a.metrics.as_deref())?;
    let mut bb = ensure_backbone(
        &a.out_dir,
        &data,
        feat_c,
        backbone_epochs,
        lr_backbone,
        batch_size,
        seed,
        &mut metrics,
    )?;

    let geom = sc_geometry(&data, feat_c, time_steps);
    let images = data.train_images();
    let labels = data.train_labels();
    let channel = ChannelConfig::new(kind, train_p, seed)?;
    let stage_cfg = |stage: Stage, epochs: usize, lr: f64| TrainConfig {
        alpha,
        epochs,
        batch_size,
        lr,
        lr_decay: (0.5, 10),
        channel,
        stage,
        seed,
    };

    match model_kind.as_str() {
        "snn" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = SnnScModel::new(&mut rng, geom, variant)?;
            train_snn_sc(
                &mut bb,
                &mut model,
                &images,
                labels,
                &stage_cfg(Stage::ScOnly, sc_epochs, lr_sc),
                &mut metrics,
            )?;
            if joint_epochs > 0 {
                train_snn_sc(
                    &mut bb,
                    &mut model,
                    &images,
                    labels,
                    &stage_cfg(Stage::JointFinetune, joint_epochs, lr_joint),
                    &mut metrics,
                )?;
            }
            let name = a
                .out_name
                .unwrap_or_else(|| format!("snn-{}.ckpt", variant.tag()));
            let path = a.out_dir.join(&name);
            checkpoint::save_snn(&path, &mut model)?;
            println!("trained snn-{} -> {}", variant.tag(), path.display());
            if joint_epochs > 0 {
                // keep the shared backbone.ckpt pristine for other variants
                let bb_path = a.out_dir.join(format!("{}-backbone.ckpt", name.trim_end_matches(".ckpt")));
                checkpoint::save_backbone(&bb_path, &mut bb)?;
                println!("joint fine-tune touched the backbone -> {}", bb_path.display());
            }
        }
        "cnn" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = CnnScModel::new(&mut rng, geom)?;
            train_cnn_sc(
                &mut bb,
                &mut model,
                &images,
                labels,
                &stage_cfg(Stage::ScOnly, sc_epochs, lr_sc),
                &mut metrics,
            )?;
            let name = a.out_name.unwrap_or_else(|| "cnn.ckpt".to_string());
            let path = a.out_dir.join(name);
            checkpoint::save_cnn(&path, &mut model)?;
            println!("trained cnn -> {}", path.display());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model `{other}` (expected snn or cnn)"
            )))
        }
    }
    Ok(())
}

// -------------------------------------------------------------------- sweep

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "models")]
    models_dir: PathBuf,
    /// Comma list of variants: snn-ihf, snn-if, snn-ihfm, cnn, separate.
    #[arg(long, default_value = "snn-ihf,cnn,separate")]
    variants: String,
    #[arg(long, default_value = "bsc")]
    channel: String,
    /// Comma list of test error probabilities.
    #[arg(long, default_value = "0,0.05,0.1,0.15,0.2,0.25")]
    test_ps: String,
    /// Channel realizations per grid point.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Recorded as metadata alongside every row.
    #[arg(long, default_value_t = 0.15)]
    train_p: f64,
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64 * 1_000_003)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let variants: Vec<String> = cfg
        .get("variants")
        .unwrap_or(&a.variants)
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let kind = ChannelKind::from_tag(cfg.get("channel").unwrap_or(&a.channel))?;
    let test_ps = parse_p_list(cfg.get("test_ps").unwrap_or(&a.test_ps))?;
    let trials = cfg.override_parsed("trials", a.trials)?;
    let train_p = cfg.override_parsed("train_p", a.train_p)?;
    let seed = cfg.override_parsed("seed", a.seed)?;
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }

    let data = Dataset::load(&a.data)?;
    let bb = checkpoint::load_backbone(&a.models_dir.join("backbone.ckpt"))?;
    let test_images = data.test_images();
    let eval = EvalData { images: &test_images, labels: data.test_labels() };
    let feature_bits = {
        let (c, h, w) = bb.feature_shape();
        32 * c * h * w
    };

    let mut rows = Vec::new();
    for variant in &variants {
        let accs_at = |f: &mut dyn FnMut(f64, u64) -> Result<f64>| -> Result<Vec<(f64, f64, f64)>> {
            let mut out = Vec::new();
            for &p in &test_ps {
                let accs: Vec<f64> = (0..trials)
                    .map(|t| f(p, trial_seed(seed, t)))
                    .collect::<Result<_>>()?;
                let (m, s) = mean_std(&accs);
                out.push((p, m, s));
            }
            Ok(out)
        };
        let (points, bits): (Vec<(f64, f64, f64)>, usize) = if let Some(tag) = variant.strip_prefix("snn-") {
            NeuronVariant::from_tag(tag)?;
            let mut model = checkpoint::load_snn(&a.models_dir.join(format!("{variant}.ckpt")))?;
            let bits = model.geom.bits_per_inference();
            let pts = accs_at(&mut |p, s| eval_snn(&bb, &mut model, eval, kind, p, s))?;
            (pts, bits)
        } else if variant == "cnn" {
            let mut model = checkpoint::load_cnn(&a.models_dir.join("cnn.ckpt"))?;
            let bits = model.bits_per_inference();
            let pts = accs_at(&mut |p, s| eval_cnn(&bb, &mut model, eval, kind, p, s))?;
            (pts, bits)
        } else if variant == "separate" {
            let sep = SeparateCodingConfig::default();
            let mut bits = 0;
            let pts = accs_at(&mut |p, s| {
                let r = eval_separate(&bb, &sep, eval, kind, p, s)?;
                bits = r.channel_bits;
                Ok(r.accuracy)
            })?;
            (pts, bits)
        } else {
            return Err(Error::Config(format!("unknown variant `{variant}`")));
        };
        for (p, mean_acc, std_acc) in points {
            rows.push(SweepRow {
                variant: variant.clone(),
                train_p,
                channel: kind,
                test_p: p,
                trials,
                mean_acc,
                std_acc,
                bits_per_inference: bits,
                compression_ratio: feature_bits as f64 / bits as f64,
            });
        }
    }

    // bit-budget parity for paired digital-SC comparisons
    let snn_bits: Vec<usize> = rows
        .iter()
        .filter(|r| r.variant.starts_with("snn"))
        .map(|r| r.bits_per_inference)
        .collect();
    if let Some(cnn_bits) = rows
        .iter()
        .find(|r| r.variant == "cnn")
        .map(|r| r.bits_per_inference)
    {
        if snn_bits.iter().any(|&b| b != cnn_bits) {
            return Err(Error::Config(
                "bit budget mismatch: SNN time steps and CNN quantization depth differ".into(),
            ));
        }
    }

    // monotonicity post-check: noise should never help
    let max_p = test_ps.iter().cloned().fold(0.0, f64::max);
    for variant in &variants {
        let at = |p: f64| {
            rows.iter()
                .find(|r| &r.variant == variant && (r.test_p - p).abs() < 1e-9)
                .map(|r| r.mean_acc)
        };
        if let (Some(a0), Some(am)) = (at(0.0), at(max_p)) {
            if a0 < am {
                println!("warning: {variant} accuracy at p=0 ({a0:.4}) below p={max_p} ({am:.4})");
            }
        }
    }

    write_sweep_csv(&a.out, &rows)?;
    println!("wrote {} ({} rows)", a.out.display(), rows.len());
    Ok(())
}

// ------------------------------------------------------------------- ablate

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "models")]
    models_dir: PathBuf,
    /// Entropy targets for the alpha ablation (IHF variant).
    #[arg(long, default_value = "0.25,0.5,0.75,1.0")]
    alphas: String,
    /// Neuron variants for the architecture ablation.
    #[arg(long, default_value = "ihf,if,ihfm")]
    variants: String,
    #[arg(long, default_value = "bsc")]
    channel: String,
    #[arg(long, default_value_t = 0.15)]
    train_p: f64,
    #[arg(long, default_value = "0,0.1,0.2,0.25")]
    test_ps: String,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Train missing ablation checkpoints instead of failing.
    #[arg(long)]
    train_missing: bool,
    #[arg(long, default_value_t = 8)]
    sc_epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr_sc: f64,
    #[arg(long, default_value_t = 4)]
    time_steps: usize,
    #[arg(long, default_value_t = 64)]
    feat_c: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "ablate.csv")]
    out: PathBuf,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let kind = ChannelKind::from_tag(cfg.get("channel").unwrap_or(&a.channel))?;
    let alphas = parse_p_list(cfg.get("alphas").unwrap_or(&a.alphas))?;
    let variants: Vec<NeuronVariant> = cfg
        .get("variants")
        .unwrap_or(&a.variants)
        .split(',')
        .map(|s| NeuronVariant::from_tag(s.trim()))
        .collect::<Result<_>>()?;
    let test_ps = parse_p_list(cfg.get("test_ps").unwrap_or(&a.test_ps))?;
    let trials = cfg.override_parsed("trials", a.trials)?;
    let train_p = cfg.override_parsed("train_p", a.train_p)?;
    let sc_epochs = cfg.override_parsed("sc_epochs", a.sc_epochs)?;
    let seed = cfg.override_parsed("seed", a.seed)?;

    let data = Dataset::load(&a.data)?;
    let mut bb = checkpoint::load_backbone(&a.models_dir.join("backbone.ckpt"))?;
    let geom = sc_geometry(&data, a.feat_c, a.time_steps);
    let images = data.train_images();
    let labels = data.train_labels();
    let test_images = data.test_images();
    let eval = EvalData { images: &test_images, labels: data.test_labels() };
    let feature_bits = {
        let (c, h, w) = bb.feature_shape();
        32 * c * h * w
    };

    // (row label, variant, alpha)
    let mut cases: Vec<(String, NeuronVariant, f64)> = alphas
        .iter()
        .map(|&al| (format!("snn-ihf-a{al:.2}"), NeuronVariant::Ihf, al))
        .collect();
    for v in &variants {
        cases.push((format!("snn-{}", v.tag()), *v, 1.0));
    }

    let mut rows = Vec::new();
    for (name, variant, alpha) in cases {
        let path = a.models_dir.join(format!("{name}.ckpt"));
        let mut model = if path.exists() {
            checkpoint::load_snn(&path)?
        } else if a.train_missing {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = SnnScModel::new(&mut rng, geom, variant)?;
            let tc = TrainConfig {
                alpha,
                epochs: sc_epochs,
                batch_size: a.batch_size,
                lr: a.lr_sc,
                lr_decay: (0.5, 10),
                channel: ChannelConfig::new(kind, train_p, seed)?,
                stage: Stage::ScOnly,
                seed,
            };
            let mut metrics = MetricsWriter::create(None)?;
            train_snn_sc(&mut bb, &mut model, &images, labels, &tc, &mut metrics)?;
            checkpoint::save_snn(&path, &mut model)?;
            println!("trained {name} -> {}", path.display());
            model
        } else {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        };
        for &p in &test_ps {
            let accs: Vec<f64> = (0..trials)
                .map(|t| eval_snn(&bb, &mut model, eval, kind, p, trial_seed(seed + 77, t)))
                .collect::<Result<_>>()?;
            let (mean_acc, std_acc) = mean_std(&accs);
            rows.push(SweepRow {
                variant: name.clone(),
                train_p,
                channel: kind,
                test_p: p,
                trials,
                mean_acc,
                std_acc,
                bits_per_inference: model.geom.bits_per_inference(),
                compression_ratio: feature_bits as f64 / model.geom.bits_per_inference() as f64,
            });
        }
    }
    write_sweep_csv(&a.out, &rows)?;
    println!("wrote {} ({} rows)", a.out.display(), rows.len());
    Ok(())
}

// -------------------------------------------------------------------- serve

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long)]
    backbone: PathBuf,
    /// Spiking module checkpoint (reconstructor half is used).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "bsc")]
    channel: String,
    /// Channel error probability injected at the receiver.
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let kind = ChannelKind::from_tag(cfg.get("channel").unwrap_or(&a.channel))?;
    let p = cfg.override_parsed("p", a.p)?;
    let seed = cfg.override_parsed("seed", a.seed)?;
    let listen = cfg.get("listen").unwrap_or(&a.listen).to_string();

    let bb = checkpoint::load_backbone(&a.backbone)?;
    let model = checkpoint::load_snn(&a.model)?;
    let state = CloudState::new(model, bb, kind, p, seed)?;
    let server = CloudServer::bind(listen.as_str(), state)?;
    println!("listening on {} ({} p={p})", server.local_addr()?, kind.tag());
    server.serve_forever()
}

// -------------------------------------------------------------------- infer

#[derive(Args)]
struct InferArgs {
    /// Cloud server address.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long)]
    backbone: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Test-split sample index to classify.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Session id (defaults to the sample index).
    #[arg(long)]
    session: Option<u32>,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn infer(a: InferArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let index = cfg.override_parsed("index", a.index)?;
    let addr = cfg.get("addr").unwrap_or(&a.addr).to_string();

    let bb = checkpoint::load_backbone(&a.backbone)?;
    let mut model = checkpoint::load_snn(&a.model)?;
    model.set_training(false);
    let data = Dataset::load(&a.data)?;
    let test = data.test_images();
    if index >= data.test_labels().len() {
        return Err(Error::InvalidArgument(format!(
            "index {index} outside the test split (size {})",
            data.test_labels().len()
        )));
    }
    let eval = EvalData { images: &test, labels: data.test_labels() };
    let image = eval_sample(&eval, index);
    let session = a.session.unwrap_or(index as u32);
    let (label, logits) = edge_run(addr.as_str(), session, &bb, &mut model, &image)?;
    println!(
        "sample {index}: predicted {label}, true {}, logits {:?}",
        data.test_labels()[index], logits
    );
    Ok(())
}

fn eval_sample(eval: &EvalData, i: usize) -> ndarray::ArrayD<f64> {
    let s = eval.images.shape();
    let plane = s[1] * s[2] * s[3];
    let src = eval.images.as_slice().unwrap();
    ndarray::ArrayD::from_shape_vec(
        ndarray::IxDyn(&[1, s[1], s[2], s[3]]),
        src[i * plane..][..plane].to_vec(),
    )
    .unwrap()
}

// ------------------------------------------------------------------- report

#[derive(Args)]
struct ReportArgs {
    /// Sweep CSV produced by `sweep` or `ablate`.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
    /// key = value file; entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn report(a: ReportArgs) -> Result<()> {
    let _ = load_config(&a.config)?;
    let rep = generate_report(&a.sweep, &a.out_dir)?;
    for f in &rep.series_files {
        println!("series: {}", f.display());
    }
    println!("summary: {}", rep.summary_file.display());
    print!("{}", std::fs::read_to_string(&rep.summary_file)?);
    let _ = experiment::SWEEP_HEADER; // format contract lives in the library
    Ok(())
}
