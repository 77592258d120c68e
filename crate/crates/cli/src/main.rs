use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amrf_core::classify::{stub_fit, DEFAULT_DARK_CUTOFF};
use amrf_core::eap::{augmented_pairs, run_amrf_with, AmrfInputs};
use amrf_core::metrics::{aggregate, evaluate_samples, load_samples, EvalSample};
use amrf_core::segment::OracleConfig;
use amrf_core::synth::render_sample;
use amrf_core::{
    angle_adaptive_crop, default_pool, load_image, load_mask, AugmentationPool, DatasetManifest, EvalOptions,
    SampleRecord, SegmentRequest, SegmenterConfig, Split, StubClassifier, StubClassifierConfig, SynthSpec,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

mod output;
mod run_config;

use run_config::{AdapterSpec, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] amrf_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "amrf", version, about = "Code-region segmentation, cropping and augmentation-pool evolution")]
struct Cli {
    /// Worker threads for per-sample work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with masks, metadata sidecars and a manifest.
    GenSynth(GenSynthArgs),
    /// Write one mask per manifest record.
    Segment(SegmentArgs),
    /// Derotate and crop one image by its mask.
    Crop(CropArgs),
    /// Score a segmenter and classifier on a manifest.
    Evaluate(EvaluateArgs),
    /// Run the pool evolution loop described by a run file.
    Evolve(EvolveArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON sample specification; the flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    /// Prefix of sample ids.
    #[arg(long)]
    prefix: Option<String>,
    /// Orientation range in degrees, `MIN,MAX`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    angle: Option<(f64, f64)>,
    /// Code scale range, `MIN,MAX`.
    #[arg(long, value_parser = parse_range)]
    zoom: Option<(f64, f64)>,
    /// Contrast factor range, `MIN,MAX`.
    #[arg(long, value_parser = parse_range)]
    contrast: Option<(f64, f64)>,
    /// Odd blur kernel range, `MIN,MAX`.
    #[arg(long, value_parser = parse_kernel_range)]
    blur: Option<(u32, u32)>,
    /// Probability of the F1 style.
    #[arg(long)]
    style_mix: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterKind {
    Baseline,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierKind {
    Stub,
}

#[derive(Args)]
struct AdapterArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    adapter: AdapterKind,
    /// Adapter configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl AdapterArgs {
    fn spec(&self) -> Result<AdapterSpec, CliError> {
        Ok(match self.adapter {
            AdapterKind::Baseline => AdapterSpec::Baseline {
                config: read_json_or_default::<SegmenterConfig>(self.config.as_deref())?,
            },
            AdapterKind::Oracle => AdapterSpec::Oracle {
                config: read_json_or_default::<OracleConfig>(self.config.as_deref())?,
            },
        })
    }

    /// Base directory for relative paths inside the adapter config.
    fn base(&self) -> PathBuf {
        self.config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CropArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 8)]
    margin: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[arg(long, value_enum, default_value = "stub")]
    classifier: ClassifierKind,
    #[arg(long)]
    classifier_config: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    /// Pool file; with `--train` the adapter is refitted under it.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Training manifest to fit the adapter on before evaluating.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Evaluation options JSON (margin, screening thresholds, ...).
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Print fail/total per factory for every pool version.
    #[arg(long)]
    summary: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected MIN,MAX, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_kernel_range(s: &str) -> Result<(u32, u32), String> {
    parse_pair(s)
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: amrf_core::Error| e.to_string())
}

fn read_json_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| amrf_core::Error::Config(format!("{}: {e}", p.display())).into())
        }
    }
}

fn gen_synth(args: &GenSynthArgs) -> Result<(), CliError> {
    let mut spec: SynthSpec = read_json_or_default(args.spec.as_deref())?;
    macro_rules! set {
        ($($field:ident <- $flag:expr),*) => {
            $(if let Some(v) = $flag.clone() { spec.$field = v; })*
        };
    }
    set!(count <- args.count, width <- args.width, height <- args.height, seed <- args.seed,
         split <- args.split, id_prefix <- args.prefix, angle_range <- args.angle,
         zoom_range <- args.zoom, contrast_range <- args.contrast, blur_range <- args.blur,
         style_mix <- args.style_mix);
    spec.validate()?;
    let out = &args.out;
    let records: Vec<SampleRecord> = (0..spec.count)
        .into_par_iter()
        .map(|i| -> Result<SampleRecord, CliError> {
            let sample = render_sample(&spec, i);
            let image = PathBuf::from("images").join(format!("{}.png", sample.id));
            let mask = PathBuf::from("masks").join(format!("{}.png", sample.id));
            output::write_image(&out.join(&image), &sample.image)?;
            output::write_mask(&out.join(&mask), &sample.mask)?;
            output::write_json(&out.join("images").join(format!("{}.meta.json", sample.id)), &sample.meta)?;
            Ok(SampleRecord {
                id: sample.id,
                image,
                mask: Some(mask),
                factory: sample.meta.style,
                split: spec.split,
            })
        })
        .collect::<Result<_, _>>()?;
    let manifest = DatasetManifest::new("synthetic", records)?;
    output::write_bytes(&out.join("manifest.jsonl"), manifest.to_jsonl()?.as_bytes())?;
    eprintln!("wrote {} samples to {}", spec.count, out.display());
    Ok(())
}

fn segment(args: &SegmentArgs) -> Result<(), CliError> {
    let adapter = args.adapter.spec()?.build(&args.adapter.base())?;
    let manifest = DatasetManifest::load(&args.input)?;
    manifest.records.par_iter().try_for_each(|r| -> Result<(), CliError> {
        let run = || -> amrf_core::Result<_> {
            let image = load_image(&r.image)?;
            let prompt = r.mask.as_ref().map(load_mask).transpose()?;
            adapter.segment(&SegmentRequest {
                id: &r.id,
                image: &image,
                prompt: prompt.as_ref(),
            })
        };
        let mask = run().map_err(|e| amrf_core::Error::Sample {
            id: r.id.clone(),
            source: Box::new(e),
        })?;
        output::write_mask(&args.out.join(format!("{}.png", r.id)), &mask)
    })?;
    eprintln!("wrote {} masks to {}", manifest.len(), args.out.display());
    Ok(())
}

fn crop(args: &CropArgs) -> Result<(), CliError> {
    let image = load_image(&args.image)?;
    let mask = load_mask(&args.mask)?;
    let c = angle_adaptive_crop(&image, &mask, args.margin)?;
    output::write_image(&args.out.join("crop.png"), &c.crop)?;
    output::write_mask(&args.out.join("crop_mask.png"), &c.crop_mask)?;
    let (x0, y0, x1, y1) = c.bbox;
    output::write_json(
        &args.out.join("crop.json"),
        &json!({ "alpha_deg": c.alpha, "bbox": [x0, y0, x1, y1], "margin": c.margin }),
    )
}

/// Stub classifier fitted on ground-truth crops.
fn fit_classifier(samples: &[EvalSample], margin: u32) -> Result<StubClassifierConfig, CliError> {
    let crops = samples
        .par_iter()
        .filter_map(|s| s.ground_truth.as_ref().map(|m| (s, m)))
        .map(|(s, m)| {
            angle_adaptive_crop(&s.image, m, margin).map(|c| (c.crop, s.factory)).map_err(|e| amrf_core::Error::Sample {
                id: s.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<amrf_core::Result<Vec<_>>>()?;
    Ok(stub_fit(&crops, DEFAULT_DARK_CUTOFF)?)
}

fn load_pool(path: Option<&Path>) -> Result<AugmentationPool, CliError> {
    Ok(match path {
        Some(p) => AugmentationPool::load(p)?,
        None => default_pool(),
    })
}

fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ClassifierKind::Stub = args.classifier;
    let classifier = StubClassifier::new(read_json_or_default(args.classifier_config.as_deref())?)?;
    let options: EvalOptions = read_json_or_default(args.options.as_deref())?;
    let pool = load_pool(args.pool.as_deref())?;
    let mut adapter = args.adapter.spec()?.build(&args.adapter.base())?;
    if let Some(train) = &args.train {
        let train = load_samples(&DatasetManifest::load(train)?)?;
        let pairs = augmented_pairs(&pool, &train, args.seed)?;
        adapter = adapter.fit(&pairs)?;
    }
    let manifest = DatasetManifest::load(&args.input)?;
    let samples = load_samples(&manifest)?;
    let outcomes = evaluate_samples(adapter.as_ref(), &classifier, &samples, &options)?;
    let report = aggregate(&manifest.name, pool.version, &outcomes, options.cls_denominator);
    output::write_json(&args.out, &report)?;
    println!("{}", report.table_row());
    Ok(())
}

fn evolve(args: &EvolveArgs) -> Result<(), CliError> {
    let mut run = RunConfig::load(&args.config)?;
    if let Some(v) = args.seed {
        run.seed = v;
    }
    if let Some(v) = args.max_iterations {
        run.max_iterations = v;
    }
    if let Some(v) = args.fraction {
        run.fraction = v;
    }
    if let Some(v) = args.epsilon {
        run.epsilon = v;
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    run.validate(&base)?;

    let train = load_samples(&DatasetManifest::load(base.join(&run.train))?)?;
    let tests = run
        .tests
        .iter()
        .map(|(name, path)| Ok((name.clone(), load_samples(&DatasetManifest::load(base.join(path))?)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    if run.classifier.is_none() {
        run.classifier = Some(fit_classifier(&train, run.eval.margin)?);
    }
    let classifier = StubClassifier::new(run.classifier.expect("set above"))?;
    let segmenter = run.segmenter.build(&base)?;
    let reference = run.reference.build(&base)?;
    let inputs = AmrfInputs {
        train: &train,
        tests: &tests,
        segmenter: segmenter.as_ref(),
        reference: reference.as_ref(),
        classifier: &classifier,
        initial_pool: load_pool(run.pool.as_ref().map(|p| base.join(p)).as_deref())?,
    };
    let embedded = serde_json::to_value(&run).map_err(amrf_core::Error::from)?;
    let history = run_amrf_with(&inputs, &run.settings(), embedded, &mut |e| {
        let stop = e.stop.map(|s| format!(", stop: {s:?}")).unwrap_or_default();
        let admitted = e.verdicts.iter().filter(|v| v.qualified).count();
        eprintln!(
            "iteration {}: pool v{}, {} failures, {} of {} candidates qualified{stop}",
            e.iteration,
            e.pool.version,
            e.total_failures(),
            admitted,
            e.verdicts.len()
        );
    })?;
    output::write_bytes(&args.out, history.to_json()?.as_bytes())?;
    if args.summary {
        print!("{}", history.summary());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Segment(a) => segment(a),
        Command::Crop(a) => crop(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Evolve(a) => evolve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
