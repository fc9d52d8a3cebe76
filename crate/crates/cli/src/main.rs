//! `irisloc` command-line tool.
//!
//! Every option can also come from a plain `key=value` file given with
//! `--config`; flags on the command line win. Each run writes a
//! `run_manifest.json` next to its outputs.

mod settings;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use irisloc::codec::{self, AnnotationRecord, EllipseRecord, EyeSide, Layout};
use irisloc::evaluation::{self, EvalRecord};
use irisloc::geometry::{rubber_sheet, Affine2, EllipseParams, LandmarkSet, Point};
use irisloc::masking::{recognition_mask, MaskStatus};
use irisloc::nets::{self, ModelConfig, NetworkParams};
use irisloc::raster::{mask_to_gray, read_pgm, write_pgm, GrayF};
use irisloc::traindata::{self, Corpus, CorpusManifest, JitterStd, Sample, Split};
use irisloc::training::{self, Task, TrainConfig, TrainError, TrainOutputs, TrainState};

use settings::Settings;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    BadArgs(String),
    #[error("{0}")]
    BadInput(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::BadArgs(_) => 2,
            CliError::BadInput(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::BadArgs(_) => "bad_arguments",
            CliError::BadInput(_) => "bad_input",
            CliError::Numeric(_) => "numeric_failure",
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::BadInput(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::BadArgs(e.to_string()),
            other => CliError::BadInput(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "irisloc", version, about = "Segmentation-free iris localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Plain key=value file; keys are long flag names without dashes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Weights file (ILN, or the model being evaluated).
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Input scale s [default: 0.2].
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Channel-width multiplier m [default: 0.25].
    #[arg(long, global = true)]
    width: Option<f64>,
    /// Output directory (or file for `infer`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch work; the bench timed region always uses one.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic corpus with manifest and split file.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Training images [default: 2000].
        #[arg(long)]
        train: Option<usize>,
        /// Test images [default: 400].
        #[arg(long)]
        test: Option<usize>,
        /// Validation images [default: 200].
        #[arg(long)]
        val: Option<usize>,
    },
    /// Train the landmark network (or the 25-element ellipse head).
    TrainIln {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// Train the ellipse head (d = 25) with anisotropic augmentation.
        #[arg(long)]
        ellipse: bool,
        /// Loss weight on the six circle elements [default: 3.0].
        #[arg(long)]
        circle_weight: Option<f64>,
    },
    /// Train the pupil refinement network.
    TrainPrn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// ILN weights used to measure the crop jitter on the validation split.
        #[arg(long)]
        iln: Option<PathBuf>,
        /// Explicit jitter std "x,y,r" instead of measuring it.
        #[arg(long)]
        jitter: Option<String>,
    },
    /// Predict landmarks for PGM images or a corpus split.
    Infer {
        #[command(flatten)]
        common: Common,
        /// PGM file, directory of PGM files, or corpus directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Corpus split to run when `--input` is a corpus [default: test].
        #[arg(long)]
        split: Option<String>,
        /// Optional PRN weights for pupil refinement.
        #[arg(long)]
        prn: Option<PathBuf>,
    },
    /// Write eyelid + IQR iris masks as PGM.
    Mask {
        #[command(flatten)]
        common: Common,
        /// Predictions (or annotations) JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Directory image paths are relative to [default: JSONL directory].
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Write polar-unwrapped iris sheets as PGM.
    Rubbersheet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        /// Angular samples [default: 256].
        #[arg(long)]
        n_theta: Option<usize>,
        /// Radial samples [default: 32].
        #[arg(long)]
        n_rho: Option<usize>,
    },
    /// Score predictions against annotations; CSV summaries and CED plots.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Single-image CPU latency of a model (optionally with PRN).
    Bench {
        #[command(flatten)]
        common: Common,
        /// Corpus directory or PGM directory; synthetic images when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        prn: Option<PathBuf>,
        /// Untimed passes [default: 2].
        #[arg(long)]
        warmup: Option<usize>,
        /// Timed passes over the images [default: 5].
        #[arg(long)]
        reps: Option<usize>,
        /// Images to time [default: 20].
        #[arg(long)]
        images_count: Option<usize>,
        /// Comma-separated scales to sweep with fresh models instead of
        /// loading weights, e.g. "0.1,0.2,0.5".
        #[arg(long)]
        sweep: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Corpus directory written by `synth`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Iterations [default: 5000].
    #[arg(long)]
    iters: Option<usize>,
    /// Batch size [default: 32].
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate [default: 0.001]; drops 10x at 90% of the run.
    #[arg(long)]
    lr: Option<f64>,
    /// Weight decay [default: 0.00001].
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Heavy-ball momentum [default: 0.9].
    #[arg(long)]
    momentum: Option<f64>,
    /// Checkpoint interval in iterations [default: 500].
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Resume from the checkpoint written at this iteration.
    #[arg(long)]
    resume: Option<usize>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tool_version: &'static str,
    weights_hash: Option<String>,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    settings: &mut Settings,
    inputs: &[&Path],
    outputs: &[&Path],
    weights: Option<&Path>,
) -> CliResult<()> {
    let seed = settings.seed()?;
    let m = RunManifest {
        command,
        config: settings.resolved(),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
        weights_hash: weights.map(sha256_file).transpose()?,
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_text(&dir.join("run_manifest.json"), &text)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| input_err(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| input_err(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_weights(path: &Path) -> CliResult<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    NetworkParams::from_bytes(&bytes).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// The image as stored, in its own pixel frame.
fn load_raw(path: &Path) -> CliResult<GrayF> {
    let f = fs::File::open(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let img = read_pgm(std::io::BufReader::new(f))
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(img.to_f32())
}

/// The image in the 640x480 network frame, and the map back to its own
/// pixel frame.
fn load_gray(path: &Path) -> CliResult<(GrayF, Affine2)> {
    let (img, map) = traindata::aspect_correct(&load_raw(path)?).map_err(input_err)?;
    let back = map
        .inverse()
        .ok_or_else(|| input_err(format!("{}: degenerate image size", path.display())))?;
    Ok((img, back))
}

fn read_records(path: &Path) -> CliResult<Vec<AnnotationRecord>> {
    let text =
        fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    codec::read_jsonl(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn parse_split(s: &str) -> CliResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "validation" | "val" => Ok(Split::Validation),
        other => Err(CliError::BadArgs(format!("unknown split {other}"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.kind(),
                "code": e.code(),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            common,
            train,
            test,
            val,
        } => {
            let mut s = Settings::load(&common)?;
            let n_train = s.get("train", train, 2000)?;
            let n_test = s.get("test", test, 400)?;
            let n_val = s.get("val", val, 200)?;
            cmd_synth(&mut s, n_train, n_test, n_val)
        }
        Command::TrainIln {
            common,
            train,
            ellipse,
            circle_weight,
        } => {
            let mut s = Settings::load(&common)?;
            let ellipse = s.get_flag("ellipse", ellipse)?;
            let cw = s.get("circle_weight", circle_weight, 3.0)?;
            let task = if ellipse { Task::Ellipse } else { Task::Iln };
            cmd_train(&mut s, &train, task, Some(cw), "train-iln")
        }
        Command::TrainPrn {
            common,
            train,
            iln,
            jitter,
        } => {
            let mut s = Settings::load(&common)?;
            let iln = s.get_opt::<PathBuf>("iln", iln)?;
            let jitter = s.get_opt::<String>("jitter", jitter)?;
            cmd_train_prn(&mut s, &train, iln, jitter)
        }
        Command::Infer {
            common,
            input,
            split,
            prn,
        } => {
            let mut s = Settings::load(&common)?;
            let input = s.require::<PathBuf>("input", input)?;
            let split = s.get("split", split, "test".to_string())?;
            let prn = s.get_opt::<PathBuf>("prn", prn)?;
            cmd_infer(&mut s, &input, &split, prn.as_deref())
        }
        Command::Mask {
            common,
            predictions,
            images,
        } => {
            let mut s = Settings::load(&common)?;
            let preds = s.require::<PathBuf>("predictions", predictions)?;
            let images = s.get_opt::<PathBuf>("images", images)?;
            cmd_mask(&mut s, &preds, images)
        }
        Command::Rubbersheet {
            common,
            predictions,
            images,
            n_theta,
            n_rho,
        } => {
            let mut s = Settings::load(&common)?;
            let preds = s.require::<PathBuf>("predictions", predictions)?;
            let images = s.get_opt::<PathBuf>("images", images)?;
            let n_theta = s.get("n_theta", n_theta, 256)?;
            let n_rho = s.get("n_rho", n_rho, 32)?;
            cmd_rubbersheet(&mut s, &preds, images, n_theta, n_rho)
        }
        Command::Eval {
            common,
            predictions,
            annotations,
        } => {
            let mut s = Settings::load(&common)?;
            let preds = s.require::<PathBuf>("predictions", predictions)?;
            let ann = s.require::<PathBuf>("annotations", annotations)?;
            cmd_eval(&mut s, &preds, &ann)
        }
        Command::Bench {
            common,
            input,
            prn,
            warmup,
            reps,
            images_count,
            sweep,
        } => {
            let mut s = Settings::load(&common)?;
            let input = s.get_opt::<PathBuf>("input", input)?;
            let prn = s.get_opt::<PathBuf>("prn", prn)?;
            let warmup = s.get("warmup", warmup, 2)?;
            let reps = s.get("reps", reps, 5)?;
            let count = s.get("images_count", images_count, 20)?;
            let sweep = s.get_opt::<String>("sweep", sweep)?;
            cmd_bench(&mut s, input, prn, warmup, reps, count, sweep)
        }
    }
}

fn cmd_synth(s: &mut Settings, n_train: usize, n_test: usize, n_val: usize) -> CliResult<()> {
    let seed = s.seed()?;
    let out = s.out()?;
    let manifest = CorpusManifest::synthetic(seed, n_train, n_test, n_val);
    let corpus = Corpus::synthesize(&manifest).map_err(input_err)?;
    corpus.write(&out, Some(&manifest)).map_err(input_err)?;
    write_manifest(&out, "synth", s, &[], &[&out], None)?;
    eprintln!(
        "wrote {} train / {} test / {} validation images to {}",
        n_train,
        n_test,
        n_val,
        out.display()
    );
    Ok(())
}

fn train_config(s: &mut Settings, a: &TrainArgs, layout: Layout) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::desk(layout);
    c.seed = s.seed()?;
    c.total_iters = s.get("iters", a.iters, c.total_iters)?;
    c.batch_size = s.get("batch", a.batch, c.batch_size)?;
    c.lr = s.get("lr", a.lr, c.lr)?;
    c.lr_after = c.lr / 10.0;
    c.weight_decay = s.get("weight_decay", a.weight_decay, c.weight_decay)?;
    c.momentum = s.get("momentum", a.momentum, c.momentum)?;
    c.checkpoint_every = s.get("checkpoint_every", a.checkpoint_every, 500)?;
    c.validate(layout).map_err(|e| CliError::BadArgs(e.to_string()))?;
    Ok(c)
}

fn run_training(
    s: &mut Settings,
    a: &TrainArgs,
    task: Task,
    model: ModelConfig,
    config: &TrainConfig,
    samples: &[Sample],
) -> CliResult<PathBuf> {
    let out = s.out()?;
    let resume = s.get_opt::<usize>("resume", a.resume)?;
    let state = match resume {
        Some(iter) => training::load_checkpoint(&out, iter, config.momentum > 0.0)?,
        None => TrainState::fresh(model, config)?,
    };
    let outputs = TrainOutputs {
        dir: Some(out.clone()),
        print_every: 100,
    };
    training::train_from(task, state, config, samples, &outputs)?;
    Ok(out)
}

fn load_corpus(s: &mut Settings, a: &TrainArgs) -> CliResult<(PathBuf, Corpus)> {
    let dir = s.require::<PathBuf>("corpus", a.corpus.clone())?;
    let corpus = Corpus::load(&dir).map_err(input_err)?;
    if corpus.train.is_empty() {
        return Err(CliError::BadInput(format!(
            "{}: corpus has no training images",
            dir.display()
        )));
    }
    Ok((dir, corpus))
}

fn cmd_train(
    s: &mut Settings,
    a: &TrainArgs,
    task: Task,
    circle_weight: Option<f64>,
    name: &str,
) -> CliResult<()> {
    let layout = task.layout();
    let scale = s.scale()?;
    let width = s.width()?;
    let model = match task {
        Task::Ellipse => ModelConfig::ellipse(scale, width),
        _ => ModelConfig::iln(scale, width),
    };
    let mut config = train_config(s, a, layout)?;
    if let Some(cw) = circle_weight {
        let n = if layout == Layout::Ellipses { 9 } else { 6 };
        config.loss_weights[..n].fill(cw as f32);
        config
            .validate(layout)
            .map_err(|e| CliError::BadArgs(e.to_string()))?;
    }
    let (dir, corpus) = load_corpus(s, a)?;
    let out = run_training(s, a, task, model, &config, &corpus.train)?;
    let weights = out.join("final.ilnw");
    if task == Task::Iln && !corpus.validation.is_empty() {
        let params = load_weights(&weights)?;
        let std = training::iln_error_std(&params, &corpus.validation)?;
        let text = serde_json::to_string_pretty(&std).expect("serializes");
        write_text(&out.join("iln_val_error_std.json"), &text)?;
    }
    write_manifest(&out, name, s, &[&dir], &[&weights], Some(&weights))
}

fn cmd_train_prn(
    s: &mut Settings,
    a: &TrainArgs,
    iln: Option<PathBuf>,
    jitter: Option<String>,
) -> CliResult<()> {
    let width = s.width()?;
    let config = train_config(s, a, Layout::PupilRoi)?;
    let (dir, corpus) = load_corpus(s, a)?;
    let std = match (jitter, iln) {
        (Some(j), _) => {
            let v: Vec<f64> = j
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::BadArgs(format!("--jitter: {e}")))?;
            if v.len() != 3 {
                return Err(CliError::BadArgs("--jitter expects x,y,r".into()));
            }
            JitterStd {
                x: v[0],
                y: v[1],
                r: v[2],
            }
        }
        (None, Some(p)) => {
            let params = load_weights(&p)?;
            if corpus.validation.is_empty() {
                return Err(CliError::BadInput("corpus has no validation split".into()));
            }
            training::iln_error_std(&params, &corpus.validation)?
        }
        (None, None) => {
            return Err(CliError::BadArgs(
                "train-prn needs --iln <weights> or --jitter x,y,r".into(),
            ))
        }
    };
    std.validate()
        .map_err(|e| CliError::BadArgs(e.to_string()))?;
    s.record("jitter_used", format!("{},{},{}", std.x, std.y, std.r));
    let out = run_training(s, a, Task::Prn(std), ModelConfig::prn(width), &config, &corpus.train)?;
    let weights = out.join("final.ilnw");
    write_manifest(&out, "train-prn", s, &[&dir], &[&weights], Some(&weights))
}

/// One image to run: record name, eye side, network-frame raster and the
/// map from the network frame back to the image's own pixels.
struct InputImage {
    name: String,
    side: EyeSide,
    image: GrayF,
    back: Affine2,
}

fn collect_inputs(input: &Path, split: &str) -> CliResult<Vec<InputImage>> {
    if input.is_file() {
        let (image, back) = load_gray(input)?;
        return Ok(vec![InputImage {
            name: input.display().to_string(),
            side: EyeSide::L,
            image,
            back,
        }]);
    }
    if input.join("annotations.jsonl").is_file() {
        let split = parse_split(split)?;
        let corpus = Corpus::load(input).map_err(input_err)?;
        return corpus
            .split(split)
            .iter()
            .map(|s| {
                let rec = s.annotation();
                let (image, back) = load_gray(&input.join(&rec.image))?;
                Ok(InputImage {
                    name: rec.image,
                    side: s.side,
                    image,
                    back,
                })
            })
            .collect();
    }
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| input_err(format!("{}: {e}", input.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        return paths
            .iter()
            .map(|p| {
                let (image, back) = load_gray(p)?;
                Ok(InputImage {
                    name: p
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    side: EyeSide::L,
                    image,
                    back,
                })
            })
            .collect();
    }
    Err(CliError::BadInput(format!("{}: no such input", input.display())))
}

/// Ellipse seen through `map`, which is an axis-aligned, nearly uniform
/// scale: centers map exactly, axes scale by the geometric mean factor.
fn map_ellipse(e: &EllipseParams, map: &Affine2) -> EllipseParams {
    let c = map.apply(Point::new(e.x, e.y));
    let k = map.det().abs().sqrt();
    EllipseParams {
        x: c.x,
        y: c.y,
        a: e.a * k,
        b: e.b * k,
        theta: e.theta,
    }
}

fn cmd_infer(s: &mut Settings, input: &Path, split: &str, prn: Option<&Path>) -> CliResult<()> {
    let wpath = s.weights()?;
    let model = load_weights(&wpath)?;
    let prn_model = prn.map(load_weights).transpose()?;
    let out = s.out()?;
    let images = collect_inputs(input, split)?;
    let mut records = Vec::with_capacity(images.len());
    for InputImage { name, side, image: img, back } in &images {
        let rec = match model.layout() {
            Layout::Landmarks => {
                let l = nets::localize(img, &model, prn_model.as_ref()).map_err(input_err)?;
                AnnotationRecord::new(name.clone(), &l.transformed(back), *side)
            }
            Layout::Ellipses => {
                let mut e = nets::ellipse_forward(img, &model).map_err(input_err)?;
                e.pupil = map_ellipse(&e.pupil, back);
                e.iris = map_ellipse(&e.iris, back);
                e.eyelid = e.eyelid.map(|p| back.apply(p));
                let approx = LandmarkSet {
                    pupil: irisloc::geometry::Circle::new(
                        e.pupil.x,
                        e.pupil.y,
                        (e.pupil.a * e.pupil.b).sqrt(),
                    ),
                    iris: irisloc::geometry::Circle::new(
                        e.iris.x,
                        e.iris.y,
                        (e.iris.a * e.iris.b).sqrt(),
                    ),
                    eyelid: e.eyelid,
                };
                let mut r = AnnotationRecord::new(name.clone(), &approx, *side);
                r.ellipses = Some(EllipseRecord::from_ellipses(&e.pupil, &e.iris));
                r
            }
            Layout::PupilRoi => {
                return Err(CliError::BadArgs(
                    "infer --weights expects an ILN or ellipse model; pass PRN with --prn".into(),
                ))
            }
        };
        records.push(rec);
    }
    let pred_path = if out.extension().is_some_and(|e| e == "jsonl") {
        out.clone()
    } else {
        out.join("predictions.jsonl")
    };
    write_text(&pred_path, &codec::write_jsonl(&records))?;
    let dir = pred_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    write_manifest(
        &dir,
        "infer",
        s,
        &[input],
        &[&pred_path],
        Some(&wpath),
    )?;
    eprintln!("wrote {} predictions to {}", records.len(), pred_path.display());
    Ok(())
}

fn image_root(preds: &Path, images: Option<PathBuf>) -> PathBuf {
    images.unwrap_or_else(|| preds.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn stem(image: &str) -> String {
    Path::new(image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image.replace('/', "_"))
}

fn resolve_image(root: &Path, image: &str) -> PathBuf {
    let p = Path::new(image);
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn cmd_mask(s: &mut Settings, preds: &Path, images: Option<PathBuf>) -> CliResult<()> {
    let out = s.out()?;
    let root = image_root(preds, images);
    let recs = read_records(preds)?;
    let mut report = String::from("image,status,self_intersecting,usable_pixels\n");
    for r in &recs {
        let img = load_raw(&resolve_image(&root, &r.image))?;
        let l = r.landmarks();
        let (iqr, lid) = recognition_mask(&img, &l).map_err(input_err)?;
        let mut buf = Vec::new();
        write_pgm(&mut buf, &mask_to_gray(&iqr.mask)).map_err(input_err)?;
        write_bytes(&out.join(format!("{}_mask.pgm", stem(&r.image))), &buf)?;
        let status = match iqr.status {
            MaskStatus::Ok => "ok",
            MaskStatus::EmptyRegion => {
                eprintln!("warning: {}: empty iris region", r.image);
                "empty_region"
            }
        };
        let usable = iqr.mask.data().iter().filter(|&&v| v).count();
        report.push_str(&format!(
            "{},{status},{},{usable}\n",
            r.image, lid.self_intersecting
        ));
    }
    write_text(&out.join("masks.csv"), &report)?;
    write_manifest(&out, "mask", s, &[preds], &[&out], None)
}

fn cmd_rubbersheet(
    s: &mut Settings,
    preds: &Path,
    images: Option<PathBuf>,
    n_theta: usize,
    n_rho: usize,
) -> CliResult<()> {
    let out = s.out()?;
    let root = image_root(preds, images);
    for r in &read_records(preds)? {
        let img = load_raw(&resolve_image(&root, &r.image))?;
        let l = r.landmarks();
        let sheet = rubber_sheet(&img, &l.pupil, &l.iris, n_theta, n_rho)
            .map_err(|e| input_err(format!("{}: {e}", r.image)))?;
        let mut buf = Vec::new();
        write_pgm(&mut buf, &sheet.to_u8()).map_err(input_err)?;
        write_bytes(&out.join(format!("{}_sheet.pgm", stem(&r.image))), &buf)?;
    }
    write_manifest(&out, "rubbersheet", s, &[preds], &[&out], None)
}

fn cmd_eval(s: &mut Settings, preds: &Path, ann: &Path) -> CliResult<()> {
    let out = s.out()?;
    let p = read_records(preds)?;
    let truth: BTreeMap<String, AnnotationRecord> = read_records(ann)?
        .into_iter()
        .map(|r| (r.image.clone(), r))
        .collect();
    let mut records = Vec::new();
    for r in &p {
        let Some(t) = truth.get(&r.image) else {
            return Err(CliError::BadInput(format!(
                "{}: no annotation for {}",
                ann.display(),
                r.image
            )));
        };
        let rec = EvalRecord::new(r.image.clone(), r.landmarks(), t.landmarks()).ok_or_else(
            || CliError::BadInput(format!("{}: eye width must be positive", r.image)),
        )?;
        records.push(rec);
    }
    let summary = evaluation::summarize(&records).map_err(input_err)?;
    write_text(&out.join("records.csv"), &evaluation::records_csv(&records))?;
    write_text(&out.join("summary.csv"), &evaluation::summary_csv(&summary))?;
    let th = evaluation::thresholds(0.1, 101);
    for (name, errs) in [
        (
            "pupil",
            records.iter().map(EvalRecord::pupil_error).collect::<Vec<_>>(),
        ),
        ("iris", records.iter().map(EvalRecord::iris_error).collect()),
    ] {
        let curve = evaluation::ced_curve(&errs, &th).map_err(input_err)?;
        let mut csv = String::from("threshold,fraction\n");
        for (t, f) in th.iter().zip(&curve) {
            csv.push_str(&format!("{t},{f}\n"));
        }
        write_text(&out.join(format!("ced_{name}.csv")), &csv)?;
        let svg = evaluation::ced_svg(
            &format!("{name} normalized Hausdorff CED"),
            &th,
            &[("predictions", curve)],
        );
        write_text(&out.join(format!("ced_{name}.svg")), &svg)?;
    }
    write_manifest(&out, "eval", s, &[preds, ann], &[&out], None)?;
    eprintln!(
        "{} records: mean pupil {:.5}, iris {:.5}",
        summary.count, summary.mean_pupil, summary.mean_iris
    );
    Ok(())
}

fn bench_images(input: Option<&Path>, count: usize, seed: u64) -> CliResult<Vec<GrayF>> {
    let mut imgs = match input {
        Some(p) => collect_inputs(p, "test")?
            .into_iter()
            .map(|i| i.image)
            .collect::<Vec<_>>(),
        None => CorpusManifest::synthetic(seed, 0, count, 0)
            .render(Split::Test)
            .map_err(input_err)?
            .into_iter()
            .map(|s| s.image.to_f32())
            .collect(),
    };
    imgs.truncate(count.max(1));
    if imgs.is_empty() {
        return Err(CliError::BadInput("no images to benchmark".into()));
    }
    Ok(imgs)
}

fn cmd_bench(
    s: &mut Settings,
    input: Option<PathBuf>,
    prn: Option<PathBuf>,
    warmup: usize,
    reps: usize,
    count: usize,
    sweep: Option<String>,
) -> CliResult<()> {
    let out = s.out()?;
    let seed = s.seed()?;
    let images = bench_images(input.as_deref(), count, seed)?;
    let mut table = String::from("model,scale,width,mean_ms,p95_ms,samples\n");
    let mut models: Vec<(String, NetworkParams)> = Vec::new();
    let mut weights_path = None;
    match sweep {
        Some(list) => {
            let width = s.width()?;
            for t in list.split(',') {
                let sc: f64 = t
                    .trim()
                    .parse()
                    .map_err(|e| CliError::BadArgs(format!("--sweep: {e}")))?;
                let p = NetworkParams::init(ModelConfig::iln(sc, width), seed)
                    .map_err(|e| CliError::BadArgs(e.to_string()))?;
                models.push(("ILN".into(), p));
            }
        }
        None => {
            let w = s.weights()?;
            models.push(("ILN".into(), load_weights(&w)?));
            weights_path = Some(w);
        }
    }
    let prn_model = prn.as_deref().map(load_weights).transpose()?;
    let bench_err = |e: evaluation::EvalError| CliError::BadArgs(e.to_string());
    let row = |name: &str, cfg: ModelConfig, st: &evaluation::LatencyStats| {
        format!(
            "{name},{},{},{:.4},{:.4},{}\n",
            cfg.scale,
            cfg.width,
            st.mean_ms,
            st.p95_ms,
            st.samples.len()
        )
    };
    for (name, m) in &models {
        let st = evaluation::bench_latency(
            |img| {
                let _ = nets::iln_forward(img, m);
            },
            &images,
            warmup,
            reps,
        )
        .map_err(bench_err)?;
        table.push_str(&row(name, m.config(), &st));
        if let Some(p) = &prn_model {
            let st = evaluation::bench_latency(
                |img| {
                    let _ = nets::localize(img, m, Some(p));
                },
                &images,
                warmup,
                reps,
            )
            .map_err(bench_err)?;
            table.push_str(&row("ILN+PRN", m.config(), &st));
        }
    }
    let header = "# timed region: one forward pass per image including resize (and PRN crop), excluding decode; single thread\n";
    write_text(&out.join("latency.csv"), &format!("{header}{table}"))?;
    print!("{table}");
    write_manifest(&out, "bench", s, &[], &[&out], weights_path.as_deref())
}
