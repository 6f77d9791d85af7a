use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use log::info;

use pestid_cli::{router, AppState, DEFAULT_PAGE_SIZE};
use pestid_core::augment::{apply_geometric, sample_rng, AugmentationConfig};
use pestid_core::catalog::{ingest_manifest_with, validate_records, write_manifest, Crop, Manifest, Taxonomy};
use pestid_core::classes::{build_class_scheme, coverage, ClassScheme, Scenario, ScenarioConfig};
use pestid_core::classify::{train, ReferenceCnn, TrainConfig, TrainingData};
use pestid_core::cleanse::{cleanse, CleanseConfig, PixelEmbedder};
use pestid_core::evaluate::{
    compute_report, confusion_image, generate_synthetic_dataset, read_labels, run_scenario_experiment,
    ExperimentScenario, SyntheticSpec,
};
use pestid_core::imaging::{load_rgb, resize_bilinear, save_png, FsImageSource, ImageSource};
use pestid_core::jsonl;
use pestid_core::pipeline::{run_pipeline, IdentificationService, PipelineConfig};
use pestid_core::roi::{
    extract_roi_crops_with_warnings, AnnotationStore, ForegroundPredicate, ForegroundThresholdSegmenter,
    PolygonAnnotation, ReviewResult,
};
use pestid_core::split::{
    audit_leakage, split_date_fallback, split_different_farm, split_same_farm, Role, SplitAssignment, SplitPolicy,
    DEFAULT_DATE_FALLBACK_FRACTION,
};
use pestid_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_LEAKAGE: u8 = 3;

/// Plant pest identification pipeline.
#[derive(Parser)]
#[command(name = "pestid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and report flagged rows.
    Ingest(IngestArgs),
    /// Drop burst frames and near-duplicates.
    Cleanse(CleanseArgs),
    /// Assign records to train/test, or audit an existing assignment.
    Split(SplitArgs),
    /// Build or inspect class schemes.
    #[command(subcommand)]
    Classes(ClassesCommand),
    /// ROI crops and the self-training annotation loop.
    #[command(subcommand)]
    Roi(RoiCommand),
    /// Train the classifier on an audited split.
    Train(TrainArgs),
    /// Metrics reports and synthetic experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve identification and annotation review over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Augmentation previews.
    #[command(subcommand)]
    Augment(AugmentCommand),
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory image URIs are relative to; defaults to the manifest's.
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

impl ManifestArgs {
    fn root(&self) -> PathBuf {
        self.image_root
            .clone()
            .unwrap_or_else(|| self.manifest.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    fn load(&self) -> anyhow::Result<Manifest> {
        let taxonomy = match &self.taxonomy {
            Some(p) => Taxonomy::load(p)?,
            None => Taxonomy::seeded(),
        };
        let outcome = ingest_manifest_with(&self.manifest, &self.root(), taxonomy)?;
        for f in &outcome.flagged {
            log::warn!("line {}: {}", f.line, f.reason);
        }
        Ok(outcome.manifest)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: ManifestArgs,
    /// Write flagged rows here.
    #[arg(long)]
    flags_out: Option<PathBuf>,
}

#[derive(Args)]
struct CleanseArgs {
    #[command(flatten)]
    input: ManifestArgs,
    #[arg(long, default_value_t = 1.0)]
    burst_interval: f64,
    #[arg(long, default_value_t = 0.05)]
    dup_threshold: f64,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the kept records as a manifest.
    #[arg(long)]
    kept_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    input: ManifestArgs,
    /// same-farm, different-farm or date-fallback.
    #[arg(long, default_value = "different-farm")]
    policy: SplitPolicy,
    #[arg(long, value_delimiter = ',')]
    test_fields: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DATE_FALLBACK_FRACTION)]
    test_fraction: f64,
    /// Identity class names split by capture date (date-fallback only).
    #[arg(long, value_delimiter = ',')]
    date_classes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "audit")]
    out: Option<PathBuf>,
    /// Audit an existing assignment instead of splitting.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ClassesCommand {
    /// Scheme for a class-definition scenario.
    Build {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        target: Crop,
        #[arg(long, value_delimiter = ',')]
        donor_crops: Vec<Crop>,
        #[arg(long, value_delimiter = ',')]
        donor_classes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// The closed 25-class scheme of the main framework.
    Main {
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve every known combination through a scheme.
    Coverage {
        #[arg(long)]
        scheme: PathBuf,
    },
}

#[derive(Subcommand)]
enum RoiCommand {
    /// Square, black-background crops for accepted polygons.
    Extract {
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 1024)]
        side: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// One self-training round: retrain on accepted polygons, propose on
    /// unannotated records.
    Propose {
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value = "excess-green")]
        predicate: String,
        #[arg(long, default_value_t = 60.0)]
        threshold: f64,
    },
    /// Import reviewer verdicts from a line-delimited file.
    Import {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        reviews: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: ManifestArgs,
    #[arg(long)]
    split: PathBuf,
    /// Accepted polygons; without them whole frames are used.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Training config file; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    input_side: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Metrics from truth and prediction label files.
    Report {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Defaults to every class present in the truth file.
        #[arg(long, value_delimiter = ',')]
        evaluated: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        confusion_png: Option<PathBuf>,
    },
    /// A two-arm synthetic experiment.
    Experiment {
        #[arg(long)]
        scenario: ExperimentScenario,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 20)]
        epochs: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Saved model directory; without it `/identify` answers 503.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Manifest used to resolve annotation images.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    image_root: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: usize,
    /// Include Grad-CAM peaks in identification results.
    #[arg(long)]
    attention: bool,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value_t = 5)]
    fields: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_cell: usize,
    #[arg(long, default_value_t = 1.0)]
    confound: f64,
    #[arg(long, default_value_t = 6)]
    cue: u32,
    #[arg(long, default_value_t = 10.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long, default_value_t = 32)]
    side: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_fields: self.fields,
            n_classes: self.classes,
            images_per_cell: self.per_cell,
            confound_strength: self.confound,
            cue_size_px: self.cue,
            background_noise: self.noise,
            distractors: self.distractors,
            image_side: self.side,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AugmentCommand {
    /// Grid of augmented variants of one image.
    Preview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 4)]
        grid: u32,
        #[arg(long, default_value_t = 128)]
        side: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let leakage = e.chain().any(|cause| {
        let mut err = cause.downcast_ref::<Error>();
        while let Some(inner) = err {
            match inner {
                Error::Leakage(_) => return true,
                Error::Stage { source, .. } => err = Some(source),
                _ => err = None,
            }
        }
        false
    });
    if leakage {
        EXIT_LEAKAGE
    } else {
        EXIT_VALIDATION
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Cleanse(a) => cleanse_cmd(a),
        Command::Split(a) => split(a),
        Command::Classes(c) => classes(c),
        Command::Roi(c) => roi(c),
        Command::Train(a) => train_cmd(a),
        Command::Eval(c) => eval(c),
        Command::Run { config } => {
            let config = PipelineConfig::load(&config)?;
            let out = run_pipeline(&config)?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
            info!("run written to {}", out.run_dir.display());
            Ok(())
        }
        Command::Serve(a) => serve(a),
        Command::Synth(a) => {
            let ds = generate_synthetic_dataset(&a.spec.spec())?;
            ds.write(&a.out)?;
            info!("wrote {} records to {}", ds.records.len(), a.out.display());
            Ok(())
        }
        Command::Augment(AugmentCommand::Preview {
            image,
            grid,
            side,
            seed,
            out,
        }) => augment_preview(&image, grid, side, seed, &out),
    }
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let taxonomy = match &a.input.taxonomy {
        Some(p) => Taxonomy::load(p)?,
        None => Taxonomy::seeded(),
    };
    let outcome = ingest_manifest_with(&a.input.manifest, &a.input.root(), taxonomy)?;
    let issues = validate_records(&outcome.manifest);
    for issue in &issues {
        log::warn!("{}: {}", issue.record_id, issue.message);
    }
    if let Some(p) = &a.flags_out {
        jsonl::write_lines(p, &outcome.flagged)?;
    }
    println!(
        "{} records accepted, {} rows flagged, {} validation issues",
        outcome.manifest.records.len(),
        outcome.flagged.len(),
        issues.len()
    );
    Ok(())
}

fn cleanse_cmd(a: CleanseArgs) -> anyhow::Result<()> {
    let manifest = a.input.load()?;
    let config = CleanseConfig {
        burst_interval_s: a.burst_interval,
        dup_threshold: a.dup_threshold,
    };
    let images = FsImageSource::new(a.input.root());
    let report = cleanse(&manifest.records, &images, &PixelEmbedder::default(), &config);
    report.write(&a.out)?;
    if let Some(p) = &a.kept_manifest {
        let kept: BTreeSet<&str> = report.kept.iter().map(String::as_str).collect();
        let records: Vec<_> = manifest
            .records
            .iter()
            .filter(|r| kept.contains(r.record_id.as_str()))
            .cloned()
            .collect();
        write_manifest(p, &records)?;
    }
    println!(
        "kept {}, dropped {} burst and {} duplicate, {} flagged for review",
        report.kept.len(),
        report.dropped_burst.len(),
        report.dropped_duplicate.len(),
        report.flagged_for_review.len()
    );
    Ok(())
}

fn split(a: SplitArgs) -> anyhow::Result<()> {
    let manifest = a.input.load()?;
    let assignment = match &a.audit {
        Some(path) => SplitAssignment::load(path)?,
        None => {
            let fields: BTreeSet<String> = a.test_fields.iter().cloned().collect();
            let assignment = match a.policy {
                SplitPolicy::SameFarmRandom => split_same_farm(&manifest.records, a.test_fraction, a.seed)?,
                SplitPolicy::DifferentFarm => split_different_farm(&manifest.records, &fields)?,
                SplitPolicy::DateFallback => {
                    let classes = a.date_classes.iter().cloned().collect();
                    split_date_fallback(&manifest.records, &classes, a.test_fraction, &fields)?
                }
            };
            let out = a.out.as_ref().expect("clap requires --out without --audit");
            assignment.save(out)?;
            for flag in &assignment.flags {
                log::warn!("{flag}");
            }
            assignment
        }
    };
    let audit = audit_leakage(&assignment, &manifest.records);
    for v in &audit.violations {
        eprintln!("leakage: {}", serde_json::to_string(v)?);
    }
    println!(
        "{}: {} train, {} test, {} excluded; audit {}",
        assignment.policy,
        assignment.count(Role::Train),
        assignment.count(Role::Test),
        assignment.count(Role::Excluded),
        if audit.is_clean() { "clean" } else { "FAILED" }
    );
    audit.certificate()?;
    Ok(())
}

fn classes(c: ClassesCommand) -> anyhow::Result<()> {
    let taxonomy = Taxonomy::seeded();
    match c {
        ClassesCommand::Build {
            scenario,
            target,
            donor_crops,
            donor_classes,
            out,
        } => {
            let config = ScenarioConfig {
                scenario,
                target_crop: target,
                donor_crops: donor_crops.into_iter().collect(),
                donor_classes: donor_classes.into_iter().collect(),
            };
            let scheme = build_class_scheme(&taxonomy, &config)?;
            scheme.save(&out)?;
            println!("{} rules, hash {}", scheme.rules.len(), scheme.hash());
        }
        ClassesCommand::Main { out } => {
            let scheme = ClassScheme::main_framework(&taxonomy);
            scheme.save(&out)?;
            println!("{} classes, hash {}", scheme.rule_classes().len(), scheme.hash());
        }
        ClassesCommand::Coverage { scheme } => {
            let scheme = ClassScheme::load(&scheme, &taxonomy)?;
            let mut uncovered = 0;
            for (combo, class) in coverage(&scheme) {
                match class {
                    Ok(c) => println!("{combo}\t{c}"),
                    Err(e) => {
                        uncovered += 1;
                        println!("{combo}\t<{e}>");
                    }
                }
            }
            if uncovered > 0 {
                bail!("{uncovered} combinations not covered");
            }
        }
    }
    Ok(())
}

fn accepted_by_record(path: &Path) -> anyhow::Result<BTreeMap<String, Vec<PolygonAnnotation>>> {
    let mut out: BTreeMap<String, Vec<PolygonAnnotation>> = BTreeMap::new();
    for a in jsonl::read_lines::<PolygonAnnotation>(path)? {
        if a.is_trainable() {
            out.entry(a.record_id.clone()).or_default().push(a);
        }
    }
    Ok(out)
}

fn roi(c: RoiCommand) -> anyhow::Result<()> {
    match c {
        RoiCommand::Extract {
            input,
            annotations,
            side,
            out,
        } => {
            let manifest = input.load()?;
            let images = FsImageSource::new(input.root());
            let polygons = accepted_by_record(&annotations)?;
            let mut index = Vec::new();
            for r in &manifest.records {
                let Some(polys) = polygons.get(&r.record_id) else {
                    continue;
                };
                let (crops, warnings) = extract_roi_crops_with_warnings(&images.load(r)?, polys, side);
                for w in warnings {
                    log::warn!("{w}");
                }
                for (info, img) in crops {
                    save_png(&img, &out.join(info.file_name()))?;
                    index.push(info);
                }
            }
            jsonl::write_lines(&out.join("index.jsonl"), &index)?;
            println!("{} crops written to {}", index.len(), out.display());
        }
        RoiCommand::Propose {
            input,
            store,
            batch_size,
            predicate,
            threshold,
        } => {
            let manifest = input.load()?;
            let images = FsImageSource::new(input.root());
            let predicate = match predicate.as_str() {
                "excess-green" | "excess_green" => ForegroundPredicate::ExcessGreen,
                "brightness" => ForegroundPredicate::Brightness,
                other => bail!("unknown predicate {other:?}"),
            };
            let mut backend = ForegroundThresholdSegmenter {
                predicate,
                threshold,
                ..IdentificationService::default_segmenter()
            };
            let mut store = AnnotationStore::open(&store)?;
            let batch = store.run_self_training_round(&manifest.records, &images, &mut backend, batch_size)?;
            println!(
                "round {}: {} records, {} proposals, {} flagged",
                batch.round,
                batch.records.len(),
                batch.annotation_ids.len(),
                batch.flagged.len()
            );
        }
        RoiCommand::Import { store, reviews } => {
            let mut store = AnnotationStore::open(&store)?;
            let results: Vec<ReviewResult> = jsonl::read_lines(&reviews)?;
            let outcomes = store.import_reviewed_annotations(&results)?;
            println!("{} reviews applied", outcomes.len());
        }
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let manifest = a.input.load()?;
    let assignment = SplitAssignment::load(&a.split)?;
    let certificate = audit_leakage(&assignment, &manifest.records).certificate()?;
    let mut config: TrainConfig = match &a.config {
        Some(p) => jsonl::read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.input_side {
        config.input_side = s;
    }
    let images = FsImageSource::new(a.input.root());
    let polygons = a.annotations.as_deref().map(accepted_by_record).transpose()?;
    let side = config.input_side;
    let mut samples: Vec<(RgbImage, String)> = Vec::new();
    for r in &manifest.records {
        if assignment.role(&r.record_id) != Some(Role::Train) {
            continue;
        }
        let img = images.load(r)?;
        let class = r.identity_class();
        match &polygons {
            Some(p) => {
                let polys = p.get(&r.record_id).map(Vec::as_slice).unwrap_or_default();
                for (_, crop) in extract_roi_crops_with_warnings(&img, polys, side).0 {
                    samples.push((crop, class.clone()));
                }
            }
            None => samples.push((resize_bilinear(&img, side, side), class)),
        }
    }
    let classes: Vec<String> = samples
        .iter()
        .map(|(_, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let data = TrainingData {
        samples: samples
            .into_iter()
            .map(|(img, c)| (img, classes.iter().position(|x| *x == c).expect("class listed")))
            .collect(),
        classes,
        scheme_hash: ClassScheme::identity().hash(),
    };
    if data.samples.is_empty() {
        bail!("no training samples");
    }
    let (model, meta, log) = train(&data, Some(&certificate), &config, &ReferenceCnn::default())?;
    model.save(&a.out, &meta)?;
    jsonl::write_lines(&a.out.join("train_log.jsonl"), &log.epochs)?;
    println!("model with {} classes written to {}", meta.classes.len(), a.out.display());
    Ok(())
}

fn eval(c: EvalCommand) -> anyhow::Result<()> {
    match c {
        EvalCommand::Report {
            truth,
            pred,
            evaluated,
            out,
            confusion_png,
        } => {
            let truth = read_labels(&truth)?;
            let pred = read_labels(&pred)?;
            let evaluated = if evaluated.is_empty() {
                truth.values().cloned().collect::<BTreeSet<_>>().into_iter().collect()
            } else {
                evaluated
            };
            let report = compute_report(&truth, &pred, &evaluated)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => jsonl::write_json(&p, &report)?,
                None => println!("{text}"),
            }
            if let Some(p) = confusion_png {
                save_png(&confusion_image(&report, 16), &p)?;
            }
            eprintln!("accuracy {:.4}, macro F1 {:.4}", report.micro_accuracy, report.macro_f1);
        }
        EvalCommand::Experiment {
            scenario,
            spec,
            epochs,
            out,
        } => {
            let spec = spec.spec();
            let config = TrainConfig {
                input_side: spec.image_side,
                epochs,
                batch_size: 16,
                ..TrainConfig::default()
            };
            let report = run_scenario_experiment(scenario, &spec, &config)?;
            println!(
                "{}: {} {:.3} vs {} {:.3}; accuracy delta {:+.3}, macro F1 delta {:+.3}",
                scenario,
                report.first.name,
                report.first.report.micro_accuracy,
                report.second.name,
                report.second.report.micro_accuracy,
                report.accuracy_delta,
                report.macro_f1_delta
            );
            if let Some(p) = out {
                jsonl::write_json(&p, &report)?;
            }
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let service = a
        .model
        .as_deref()
        .map(|dir| IdentificationService::load(dir).map(|s| s.with_attention(a.attention)))
        .transpose()
        .context("loading model")?;
    let input = a.manifest.clone().map(|manifest| ManifestArgs {
        manifest,
        image_root: a.image_root.clone(),
        taxonomy: a.taxonomy.clone(),
    });
    let (records, root) = match &input {
        Some(input) => {
            let m = input.load()?;
            (m.records.into_iter().map(|r| (r.record_id.clone(), r)).collect(), input.root())
        }
        None => (BTreeMap::new(), PathBuf::from(".")),
    };
    let state = Arc::new(AppState {
        service,
        store: Mutex::new(AnnotationStore::open(&a.store)?),
        records,
        images: Box::new(FsImageSource::new(root)),
        page_size: a.page_size.max(1),
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        info!("listening on {}", a.addr);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

fn augment_preview(image: &Path, grid: u32, side: u32, seed: u64, out: &Path) -> anyhow::Result<()> {
    let config = AugmentationConfig {
        seed,
        ..AugmentationConfig::main_framework()
    };
    let base = resize_bilinear(&load_rgb(image)?, side, side);
    let mut canvas = RgbImage::new(side * grid, side * grid);
    for i in 0..grid * grid {
        let tile = if i == 0 {
            base.clone()
        } else {
            apply_geometric(&base, &config, &mut sample_rng(seed, u64::from(i)))?
        };
        image::imageops::replace(&mut canvas, &tile, i64::from(i % grid * side), i64::from(i / grid * side));
    }
    save_png(&canvas, out)?;
    println!("{} variants written to {}", grid * grid - 1, out.display());
    Ok(())
}
