use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cotm::clause_bank::argmax;
use cotm::config::Feature;
use cotm::interpreter::{
    global_class_representation, local_interpretation, normalize_interpretation, render_interpretation,
    Interpretation, NormalizedInterpretation, RenderMode, Values,
};
use cotm::io::{encode_tensor_f32, encode_tensor_i32, load_idx, load_image_dir, load_model, save_model};
use cotm::metrics::evaluate_class_sums;
use cotm::trainer::{fit_with_progress, TrainRng};
use cotm::{Binarizer, ClauseBank, Dataset, ModelConfig, Task};

/// Invalid arguments detected after parsing; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "cotm", version, about = "Convolutional coalesced Tsetlin Machine")]
struct Cli {
    /// Worker threads for per-clause work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save it.
    Train(TrainArgs),
    /// Evaluate a model and write a per-class CSV report.
    Eval(EvalArgs),
    /// Explain one prediction as an image.
    InterpretLocal(LocalArgs),
    /// Render the aggregate pattern of one class.
    InterpretGlobal(GlobalArgs),
    /// Dump one clause: literals, position range, weights, patch counts.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// IDX image file.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Directory of images listed in --labels-csv.
    #[arg(long, requires = "labels_csv", conflicts_with = "images")]
    image_dir: Option<PathBuf>,
    /// CSV of `filename,class;class;...` rows.
    #[arg(long, requires = "image_dir")]
    labels_csv: Option<PathBuf>,
    /// Class names for --image-dir data (defaults to the names in the CSV).
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let mut ds = match (&self.images, &self.labels, &self.image_dir, &self.labels_csv) {
            (Some(i), Some(l), None, None) => load_idx(i, l)?,
            (None, None, Some(d), Some(c)) => {
                let classes = (!self.classes.is_empty()).then_some(self.classes.as_slice());
                load_image_dir(d, c, classes)?
            }
            _ => return Err(usage("give either --images/--labels or --image-dir/--labels-csv")),
        };
        if let Some(n) = self.limit {
            ds.truncate(n);
        }
        Ok(ds)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Multiclass,
    Multilabel,
}

#[derive(Clone, Copy, ValueEnum)]
enum BinarizeArg {
    Threshold,
    Thermometer,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 2000)]
    clauses: usize,
    /// Class-sum target.
    #[arg(long = "T", alias = "target", default_value_t = 2500)]
    target: u32,
    /// Specificity.
    #[arg(long = "s", alias = "specificity", default_value_t = 10.0)]
    specificity: f64,
    /// Patch width.
    #[arg(long, default_value_t = 10)]
    patch: usize,
    /// Expected false-label classes receiving Type II feedback (multilabel).
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Thermometer levels per channel (with --binarize thermometer).
    #[arg(long, default_value_t = 8)]
    levels: usize,
    #[arg(long, value_enum, default_value_t = BinarizeArg::Threshold)]
    binarize: BinarizeArg,
    /// Pixel threshold (with --binarize threshold).
    #[arg(long, default_value_t = 75)]
    threshold: u8,
    /// States per automaton action.
    #[arg(long, default_value_t = 127)]
    states: u16,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TaskArg::Multiclass)]
    task: TaskArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// CSV report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    sample_index: usize,
    /// Class index, or `auto` for the predicted class.
    #[arg(long, default_value = "auto")]
    class: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GlobalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clause: usize,
}

fn check_dims(bank: &ClauseBank, ds: &Dataset) -> Result<()> {
    let c = bank.config();
    if !ds.is_empty() && (ds.rows, ds.cols, ds.channels) != (c.rows, c.cols, c.channels) {
        bail!(
            "data is {}x{}x{}, model expects {}x{}x{}",
            ds.rows,
            ds.cols,
            ds.channels,
            c.rows,
            c.cols,
            c.channels
        );
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let ds = args.data.load()?;
    if ds.is_empty() {
        bail!("training set is empty");
    }
    let task = match args.task {
        TaskArg::Multiclass => Task::Multiclass,
        TaskArg::Multilabel => Task::Multilabel,
    };
    let mut labels = ds.labels.clone();
    if let (Task::Multilabel, cotm::Labels::Single(_)) = (task, &labels) {
        labels = cotm::Labels::Multi(labels.sets());
    }
    if let (Task::Multiclass, cotm::Labels::Multi(sets)) = (task, &labels) {
        let single = sets
            .iter()
            .map(|s| match s.as_slice() {
                [y] => Ok(*y),
                _ => Err(usage("multiclass training needs exactly one class per sample")),
            })
            .collect::<Result<Vec<_>>>()?;
        labels = cotm::Labels::Single(single);
    }
    let mut config = ModelConfig::new(ds.rows, ds.cols, ds.channels, ds.n_classes());
    config.n_clauses = args.clauses;
    config.target = args.target;
    config.specificity = args.specificity;
    config.patch_width = args.patch;
    config.q = args.q;
    config.n_states = args.states;
    config.task = task;
    config.binarizer = match args.binarize {
        BinarizeArg::Threshold => Binarizer::Threshold(args.threshold),
        BinarizeArg::Thermometer => Binarizer::Thermometer { levels: args.levels },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let samples = ds.binarize(&config.binarizer)?;
    let mut bank = ClauseBank::new(config, args.seed)?;
    let mut rng = TrainRng::new(args.seed);
    fit_with_progress(&mut bank, &samples, &labels, args.epochs, &mut rng, |r| println!("{r}"))?;
    save_model(&bank, &args.model).with_context(|| format!("saving {}", args.model.display()))?;
    println!("model={}", args.model.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let bank = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let ds = args.data.load()?;
    check_dims(&bank, &ds)?;
    let samples = ds.binarize(&bank.config().binarizer)?;
    let sums = samples
        .iter()
        .map(|s| bank.class_sums(s))
        .collect::<cotm::Result<Vec<_>>>()?;
    let sets = ds.labels.sets();
    if let Some(bad) = sets.iter().flatten().find(|&&c| c >= bank.n_classes()) {
        bail!("label {bad} outside the model's {} classes", bank.n_classes());
    }
    let report = evaluate_class_sums(&sums, &sets, bank.config().target)?;
    let csv = report.to_csv(&ds.class_names);
    match &args.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    for line in report.log_lines() {
        println!("{line}");
    }
    Ok(())
}

fn write_outputs(out_dir: &Path, stem: &str, interp: &Interpretation, norm: &NormalizedInterpretation) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let dims = (interp.rows, interp.cols, interp.channels);
    let raw = match &interp.values {
        Values::Int(v) => {
            let v = v
                .iter()
                .map(|&x| i32::try_from(x))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| anyhow!("interpretation value exceeds the 32-bit dump range"))?;
            encode_tensor_i32(dims, &v)?
        }
        Values::Real(v) => encode_tensor_f32(dims, &v.iter().map(|&x| x as f32).collect::<Vec<_>>())?,
    };
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    put(format!("{stem}.raw.tmi"), &raw)?;
    let norm_values: Vec<f32> = norm.values.iter().map(|&x| x as f32).collect();
    put(format!("{stem}.norm.tmi"), &encode_tensor_f32(dims, &norm_values)?)?;
    let mode = match interp.channels {
        1 => Some(RenderMode::Diverging),
        3 => Some(RenderMode::Rgb),
        _ => None,
    };
    match mode {
        Some(mode) => {
            let img = render_interpretation(norm, mode)?;
            put(format!("{stem}.png"), &img.png)?;
            if let Some(neg) = img.sign_map_png {
                put(format!("{stem}.neg.png"), &neg)?;
            }
        }
        None => eprintln!("warning: no image rendering for {} channels", interp.channels),
    }
    for p in written {
        println!("wrote={}", p.display());
    }
    Ok(())
}

fn interpret_local(args: LocalArgs) -> Result<()> {
    let bank = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let ds = args.data.load()?;
    check_dims(&bank, &ds)?;
    let image = ds.images.get(args.sample_index).ok_or_else(|| {
        usage(format!(
            "sample index {} out of range for {} samples",
            args.sample_index,
            ds.len()
        ))
    })?;
    let sample = bank.config().binarizer.apply(image)?;
    let sums = bank.class_sums(&sample)?;
    let class = match args.class.as_str() {
        "auto" => argmax(&sums),
        k => {
            let k: usize = k
                .parse()
                .map_err(|_| usage(format!("--class must be `auto` or an index, got {k:?}")))?;
            if k >= bank.n_classes() {
                return Err(usage(format!("class {k} out of range for {} classes", bank.n_classes())));
            }
            k
        }
    };
    let interp = local_interpretation(&bank, &sample, class)?;
    let norm = normalize_interpretation(&interp);
    println!("sample={} class={class} class_sum={}", args.sample_index, sums[class]);
    write_outputs(&args.out_dir, &format!("local_{}_class{class}", args.sample_index), &interp, &norm)
}

fn interpret_global(args: GlobalArgs) -> Result<()> {
    let bank = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    if args.class >= bank.n_classes() {
        return Err(usage(format!(
            "class {} out of range for {} classes",
            args.class,
            bank.n_classes()
        )));
    }
    let interp = global_class_representation(&bank, args.class)?;
    if interp.counts_missing {
        eprintln!("warning: model has no patch counts; the representation is all zero");
    }
    let norm = normalize_interpretation(&interp);
    write_outputs(&args.out_dir, &format!("global_class{}", args.class), &interp, &norm)
}

fn describe(feature: Feature) -> String {
    match feature {
        Feature::Pixel { dr, dc, plane } => format!("pixel({dr};{dc};{plane})"),
        Feature::RowCode(j) => format!("row_code({j})"),
        Feature::ColCode(j) => format!("col_code({j})"),
    }
}

fn range_text(r: &std::ops::Range<usize>) -> String {
    if r.is_empty() {
        "empty".into()
    } else {
        format!("{}..={}", r.start, r.end - 1)
    }
}

fn inspect(args: InspectArgs) -> Result<()> {
    let bank = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let c = args.clause;
    if c >= bank.n_clauses() {
        return Err(usage(format!("clause {c} out of range for {} clauses", bank.n_clauses())));
    }
    let layout = bank.layout();
    println!("clause={c}");
    let (rows, cols) = bank.feasible_positions(c);
    println!("row_positions={}", range_text(&rows));
    println!("col_positions={}", range_text(&cols));
    println!();
    println!("literal,feature,negated,state");
    for l in bank.included_literals(c) {
        let (feature, negated) = layout.describe(l);
        println!("{l},{},{negated},{}", describe(feature), bank.clause_states(c)[l]);
    }
    println!();
    println!("class,weight");
    for (k, w) in bank.clause_weights(c).iter().enumerate() {
        println!("{k},{w}");
    }
    println!();
    println!("row,col,count");
    for (p, &count) in bank.clause_patch_counts(c).iter().enumerate() {
        let (m, n) = layout.patch_origin(p);
        println!("{m},{n},{count}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("starting worker threads")?;
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::InterpretLocal(a) => interpret_local(a),
        Command::InterpretGlobal(a) => interpret_global(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<cotm::Error>(), Some(cotm::Error::Usage(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
