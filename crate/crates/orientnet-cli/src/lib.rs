//! Command-line surface: dataset construction, training, evaluation,
//! prediction, correction, and saliency export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! `ORIENTNET_THREADS` caps the worker pool (0 = single-threaded
//! deterministic mode). `--json` switches machine-readable output on the
//! reporting subcommands; `--dry-run` validates and prints without writing.

use clap::{Args, Parser, Subcommand};
use orientnet::datapipe::{
    expand_manifest, load_manifest, sample_protocol, save_manifest, synth_scene, DatasetManifest,
    OrientationLabel, Protocol, Sample,
};
use orientnet::evaluator::{compare_protocols, comparison_csv, evaluate, EvalReport, Predictor};
use orientnet::imageio;
use orientnet::netspec::{
    build_desk_net, build_full_net, load_checkpoint, network_from_spec, save_checkpoint,
    NetworkSpec, DESK_INIT_STD, DESK_INPUT_SIDE, DESK_WIDTHS, INIT_STD,
};
use orientnet::saliency::{grad_cam, map_csv, render_overlay};
use orientnet::trainer::{
    finetune_workflow, train, write_history_csv, StopReason, TrainConfig, TrainOutput,
};
use orientnet::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "orientnet",
    about = "Detects and corrects the canonical orientation of photographs (0/90/180/270 degrees).",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or synthesize dataset manifests.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train a model from manifests.
    Train(TrainArgs),
    /// Evaluate a checkpoint under a protocol.
    Eval(EvalArgs),
    /// Evaluate one checkpoint under several protocols and render a table.
    Compare(CompareArgs),
    /// Predict the orientation of one image (JSON on stdout).
    Predict(PredictArgs),
    /// Rotate images upright according to the model (or a given theta).
    Correct(CorrectArgs),
    /// Write a saliency heatmap overlay for one image.
    Explain(ExplainArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build manifests: scan a directory, expand rotations, or sample a
    /// protocol.
    Build(DatasetBuildArgs),
    /// Generate synthetic upright scenes plus their manifest.
    Synth(DatasetSynthArgs),
}

#[derive(Args)]
struct DatasetBuildArgs {
    /// Directory of upright images to scan into a manifest.
    #[arg(long, conflicts_with = "manifest")]
    dir: Option<PathBuf>,
    /// Existing upright manifest to transform.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Emit four rotation-labeled entries per source.
    #[arg(long, conflicts_with = "protocol")]
    expand: bool,
    /// Sample a test split: bal4, orig3 or bal3.
    #[arg(long)]
    protocol: Option<String>,
    /// Number of sources to draw (default: all).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct DatasetSynthArgs {
    /// Number of upright scenes to generate.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = DESK_INPUT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory that receives the PPM scene files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Manifest path to write.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: "desk" or "full".
    #[arg(long, default_value = "desk")]
    net: String,
    /// Input side for the desk net.
    #[arg(long)]
    input_side: Option<usize>,
    /// Conv widths for the desk net, comma separated.
    #[arg(long)]
    widths: Option<String>,
    #[arg(long = "train")]
    train_manifest: PathBuf,
    #[arg(long = "val")]
    val_manifest: PathBuf,
    /// JSON TrainConfig; explicit flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Constant learning rate (replaces the schedule).
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from this checkpoint's conv trunk instead of from scratch.
    #[arg(long)]
    finetune_from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV (epoch, lr, train_loss, val_loss, val_acc).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// bal4, orig3 or bal3.
    #[arg(long)]
    protocol: String,
    #[arg(long)]
    json: bool,
    /// Write the JSON report here as well.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    /// Upright source pool shared by every protocol.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated protocol list.
    #[arg(long, default_value = "bal4,orig3,bal3")]
    protocols: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
    /// Write the comparison grid as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    image: PathBuf,
}

#[derive(Args)]
struct CorrectArgs {
    /// Checkpoint used to predict each image's orientation.
    #[arg(long, required_unless_present = "theta")]
    model: Option<PathBuf>,
    /// Skip prediction and apply this orientation label to every input.
    #[arg(long)]
    theta: Option<u8>,
    /// Overwrite the input files.
    #[arg(long, conflicts_with_all = ["out_dir", "suffix"])]
    in_place: bool,
    /// Write corrected files into this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Filename suffix for corrected copies.
    #[arg(long, default_value = "_corrected")]
    suffix: String,
    /// Print predicted labels only; write nothing.
    #[arg(long)]
    dry_run: bool,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    image: PathBuf,
    /// Overlay output path (.ppm or .png).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    /// Explain this class instead of the predicted one.
    #[arg(long)]
    target: Option<u8>,
    /// Also dump the raw map as a CSV grid.
    #[arg(long)]
    map_csv: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Dataset { command } => match command {
            DatasetCommand::Build(args) => dataset_build(args),
            DatasetCommand::Synth(args) => dataset_synth(args),
        },
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Correct(args) => cmd_correct(args),
        Command::Explain(args) => cmd_explain(args),
    }
}

fn parse_protocol(s: &str) -> Result<Protocol> {
    s.parse()
}

fn dataset_build(args: DatasetBuildArgs) -> Result<i32> {
    let source = match (&args.dir, &args.manifest) {
        (Some(dir), None) => {
            let mut entries = Vec::new();
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| imageio::ImageFormat::from_extension(p).is_some())
                .collect();
            paths.sort();
            for path in paths {
                entries.push(Sample {
                    path,
                    theta: OrientationLabel::UPRIGHT,
                });
            }
            DatasetManifest::new(entries, dir.display().to_string())?
        }
        (None, Some(path)) => load_manifest(path)?,
        _ => {
            return Err(Error::Usage(
                "dataset build needs exactly one of --dir or --manifest".into(),
            ))
        }
    };

    let out = if args.expand {
        expand_manifest(&source)?
    } else if let Some(proto) = &args.protocol {
        let protocol = parse_protocol(proto)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        sample_protocol(&source, protocol, args.size, &mut rng)?
    } else {
        source
    };

    if args.dry_run {
        println!(
            "dry-run: would write {} entries (classes {:?}) to {}",
            out.len(),
            out.class_counts(),
            args.out.display()
        );
        return Ok(0);
    }
    save_manifest(&args.out, &out)?;
    println!(
        "wrote {} entries (classes {:?}) to {}",
        out.len(),
        out.class_counts(),
        args.out.display()
    );
    Ok(0)
}

fn dataset_synth(args: DatasetSynthArgs) -> Result<i32> {
    if args.count == 0 {
        return Err(Error::Usage("--count must be positive".into()));
    }
    if args.side < 32 {
        return Err(Error::Usage("--side must be at least 32".into()));
    }
    if args.dry_run {
        println!(
            "dry-run: would write {} scenes of side {} under {}",
            args.count,
            args.side,
            args.out_dir.display()
        );
        return Ok(0);
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let (img, _) = synth_scene(&mut rng, args.side, OrientationLabel::UPRIGHT);
        let path = args.out_dir.join(format!("scene{i:05}.ppm"));
        imageio::write_image(&path, &img, imageio::ImageFormat::Ppm, None)?;
        entries.push(Sample {
            path,
            theta: OrientationLabel::UPRIGHT,
        });
    }
    let manifest = DatasetManifest::new(entries, "synth")?;
    save_manifest(&args.manifest, &manifest)?;
    println!(
        "wrote {} upright scenes and manifest {}",
        args.count,
        args.manifest.display()
    );
    Ok(0)
}

fn desk_spec(args: &TrainArgs) -> Result<NetworkSpec> {
    let widths: Vec<usize> = match &args.widths {
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Usage(format!("bad conv width {t:?}")))
            })
            .collect::<Result<_>>()?,
        None => DESK_WIDTHS.to_vec(),
    };
    build_desk_net(args.input_side.unwrap_or(DESK_INPUT_SIDE), &widths)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_slice::<TrainConfig>(&bytes)
                .map_err(|e| Error::Data(format!("bad config {}: {e}", path.display())))?
        }
        None => TrainConfig::desk_default(),
    };
    // Explicit flags win over the config file.
    if let Some(epochs) = args.epochs {
        cfg.max_epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        cfg.lr_schedule = vec![(0, lr)];
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let train_m = load_manifest(&args.train_manifest)?;
    let val_m = load_manifest(&args.val_manifest)?;

    let output: TrainOutput = if let Some(base_path) = &args.finetune_from {
        let base = load_checkpoint(base_path)?;
        if args.dry_run {
            println!(
                "dry-run: would fine-tune from {} on {} train / {} val entries",
                base_path.display(),
                train_m.len(),
                val_m.len()
            );
            return Ok(0);
        }
        finetune_workflow(&base, &train_m, &val_m, &cfg)?
    } else {
        let (spec, init_std) = match args.net.as_str() {
            "desk" => (desk_spec(&args)?, DESK_INIT_STD),
            "full" => (build_full_net(), INIT_STD),
            other => {
                return Err(Error::Usage(format!(
                    "unknown net {other:?} (expected desk or full)"
                )))
            }
        };
        if args.dry_run {
            println!(
                "dry-run: would train {} net on {} train / {} val entries for up to {} epochs",
                args.net,
                train_m.len(),
                val_m.len(),
                cfg.max_epochs
            );
            return Ok(0);
        }
        let mut net = network_from_spec(
            &spec,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
            init_std,
        )?;
        train(&mut net, &train_m, &val_m, &cfg)?
    };

    save_checkpoint(&args.out, &output.checkpoint)?;
    if let Some(history) = &args.history {
        write_history_csv(history, &output.history)?;
    }
    match &output.stop {
        StopReason::Aborted {
            epoch,
            batch,
            detail,
        } => {
            eprintln!(
                "training aborted at epoch {epoch} batch {batch}: {detail}; best checkpoint retained at {}",
                args.out.display()
            );
            Ok(3)
        }
        stop => {
            let last = output.history.last();
            println!(
                "trained {} epochs ({:?}); val_acc {:.4}; checkpoint {}",
                output.history.len(),
                stop,
                last.map(|h| h.val_acc).unwrap_or(0.0),
                args.out.display()
            );
            Ok(0)
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let protocol = parse_protocol(&args.protocol)?;
    let ckpt = load_checkpoint(&args.model)?;
    let predictor = Predictor::from_checkpoint(&ckpt)?;
    let manifest = load_manifest(&args.manifest)?;
    if args.dry_run {
        println!(
            "dry-run: would evaluate {} entries under {}",
            manifest.len(),
            protocol.name()
        );
        return Ok(0);
    }
    let report = evaluate(&predictor, &manifest, protocol, &manifest.source)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render_text());
    }
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json()).map_err(|e| Error::io(out, e))?;
    }
    Ok(0)
}

fn cmd_compare(args: CompareArgs) -> Result<i32> {
    let protocols: Vec<Protocol> = args
        .protocols
        .split(',')
        .map(|t| parse_protocol(t.trim()))
        .collect::<Result<_>>()?;
    if protocols.is_empty() {
        return Err(Error::Usage("need at least one protocol".into()));
    }
    let ckpt = load_checkpoint(&args.model)?;
    let predictor = Predictor::from_checkpoint(&ckpt)?;
    let sources = load_manifest(&args.manifest)?;
    if args.dry_run {
        println!(
            "dry-run: would compare protocols {:?} over {} sources",
            args.protocols,
            sources.len()
        );
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let reports = compare_protocols(&predictor, &sources, &protocols, &mut rng)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&reports).expect("reports serialize")
        );
    } else {
        print!("{}", report_render(&reports));
    }
    if let Some(csv) = &args.csv {
        std::fs::write(csv, comparison_csv(&reports)).map_err(|e| Error::io(csv, e))?;
    }
    Ok(0)
}

/// Plain-text comparison table: rows are protocols, columns are dataset
/// tags, cells are accuracy in percent with two decimals.
pub fn report_render(reports: &[EvalReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut protocols: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !protocols.contains(&r.protocol.as_str()) {
            protocols.push(&r.protocol);
        }
    }
    let proto_width = protocols
        .iter()
        .map(|p| p.len())
        .max()
        .unwrap_or(0)
        .max("protocol".len());
    let col_width = datasets.iter().map(|d| d.len()).max().unwrap_or(0).max(6);

    let mut out = format!("{:<proto_width$}", "protocol");
    for d in &datasets {
        out.push_str(&format!("  {d:>col_width$}"));
    }
    out.push('\n');
    for p in &protocols {
        out.push_str(&format!("{p:<proto_width$}"));
        for d in &datasets {
            let cell = reports
                .iter()
                .find(|r| r.protocol == *p && r.dataset == *d)
                .map(|r| format!("{:.2}", r.accuracy * 100.0))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("  {cell:>col_width$}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&args.model)?;
    let predictor = Predictor::from_checkpoint(&ckpt)?;
    let decoded = imageio::decode(&args.image)?;
    let (theta, probs) = predictor.predict(&decoded.pixels)?;
    let json = serde_json::json!({
        "path": args.image.display().to_string(),
        "theta": theta.theta(),
        "degrees": theta.degrees(),
        "probabilities": probs,
        "exif_orientation": decoded.exif_orientation,
    });
    println!("{json}");
    Ok(0)
}

fn correct_output_path(input: &Path, args: &CorrectArgs) -> PathBuf {
    if args.in_place {
        return input.to_path_buf();
    }
    if let Some(dir) = &args.out_dir {
        return dir.join(input.file_name().unwrap_or_default());
    }
    let stem = input.file_stem().unwrap_or_default().to_string_lossy();
    let ext = input.extension().unwrap_or_default().to_string_lossy();
    input.with_file_name(format!("{stem}{}.{ext}", args.suffix))
}

fn cmd_correct(args: CorrectArgs) -> Result<i32> {
    let predictor = match (&args.model, args.theta) {
        (_, Some(t)) => {
            OrientationLabel::new(t)?;
            None
        }
        (Some(model), None) => {
            let ckpt = load_checkpoint(model)?;
            Some(Predictor::from_checkpoint(&ckpt)?)
        }
        (None, None) => unreachable!("clap requires one of --model/--theta"),
    };
    if let Some(dir) = &args.out_dir {
        if !args.dry_run {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }

    let mut failures = 0usize;
    for image in &args.images {
        let outcome = (|| -> Result<(OrientationLabel, Option<bool>)> {
            let theta = match (&predictor, args.theta) {
                (_, Some(t)) => OrientationLabel::new(t)?,
                (Some(p), None) => {
                    let decoded = imageio::decode(image)?;
                    p.predict(&decoded.pixels)?.0
                }
                (None, None) => unreachable!(),
            };
            if args.dry_run {
                return Ok((theta, None));
            }
            let out = correct_output_path(image, &args);
            let result = imageio::correct_file(image, &out, theta)?;
            Ok((theta, Some(result.recompressed)))
        })();
        match outcome {
            Ok((theta, recompressed)) => {
                let note = match recompressed {
                    Some(true) => " (recompressed)",
                    _ => "",
                };
                println!(
                    "{}: theta {} ({} deg){}{}",
                    image.display(),
                    theta.theta(),
                    theta.degrees(),
                    if args.dry_run { " [dry-run]" } else { "" },
                    note
                );
            }
            Err(e) => {
                eprintln!("{}: {e}", image.display());
                failures += 1;
            }
        }
    }
    println!(
        "corrected {} of {} image(s){}",
        args.images.len() - failures,
        args.images.len(),
        if args.dry_run { " [dry-run]" } else { "" }
    );
    Ok(if failures > 0 { 2 } else { 0 })
}

fn cmd_explain(args: ExplainArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&args.model)?;
    let predictor = Predictor::from_checkpoint(&ckpt)?;
    let decoded = imageio::decode(&args.image)?;
    let target = match args.target {
        Some(t) => Some(OrientationLabel::new(t)?),
        None => None,
    };
    let input = predictor.preprocess_input(&decoded.pixels)?;
    let map = grad_cam(predictor.network(), &input, target)?;

    // Overlay on the resized image so map and image resolutions agree.
    let side = predictor.input_side();
    let resized = orientnet::tensor::bilinear_resize(&decoded.pixels, side, side)?;
    let overlay = render_overlay(&resized, &map, args.alpha)?;
    if args.dry_run {
        println!(
            "dry-run: would write overlay (target theta {}) to {}",
            map.target.theta(),
            args.out.display()
        );
        return Ok(0);
    }
    let format = imageio::ImageFormat::from_extension(&args.out).ok_or_else(|| {
        Error::Data(format!(
            "unsupported overlay format for {} (use .ppm or .png)",
            args.out.display()
        ))
    })?;
    imageio::write_image(&args.out, &overlay, format, None)?;
    if let Some(csv) = &args.map_csv {
        std::fs::write(csv, map_csv(&map)).map_err(|e| Error::io(csv, e))?;
    }
    println!(
        "wrote overlay for theta {} to {}",
        map.target.theta(),
        args.out.display()
    );
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(protocol: &str, dataset: &str, acc: f64) -> EvalReport {
        EvalReport {
            protocol: protocol.into(),
            dataset: dataset.into(),
            n_samples: 100,
            accuracy: acc,
            per_class_recall: [None; 4],
            confusion: [[0; 4]; 4],
        }
    }

    #[test]
    fn single_report_renders_one_by_one() {
        let table = report_render(&[report("bal4", "synth", 0.9516)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("95.16"), "{table}");
    }

    #[test]
    fn accuracy_renders_with_two_decimals() {
        let table = report_render(&[report("orig3", "pool", 0.72)]);
        assert!(table.contains("72.00"), "{table}");
    }

    #[test]
    fn column_order_follows_input_order() {
        let table = report_render(&[
            report("bal4", "zeta", 0.5),
            report("bal4", "alpha", 0.25),
            report("orig3", "zeta", 0.75),
        ]);
        let header = table.lines().next().unwrap();
        let zeta = header.find("zeta").unwrap();
        let alpha = header.find("alpha").unwrap();
        assert!(zeta < alpha, "{header}");
        let rows: Vec<&str> = table.lines().skip(1).collect();
        assert!(rows[0].starts_with("bal4"));
        assert!(rows[1].starts_with("orig3"));
        assert!(rows[1].contains('-'), "missing cell renders a dash: {table}");
    }
}
