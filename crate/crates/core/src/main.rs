use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use msfi::ablate::{probe_mi, shapley_mi, AblationPolicy, ModalityImportance};
use msfi::metrics::{
    friedman, join_pairs, nemenyi, read_scores, score_matrix, spearman, write_scores, Metric,
    MetricRecord, DEFAULT_IOU_THRESHOLD,
};
use msfi::oracle::{accuracy, ExternalBatchOracle, PredictionCache, PredictionOracle, ShapeRuleClassifier};
use msfi::pipeline::{load_saliency_dir, run_saliency, score_maps, ScoreMeta, TargetChoice};
use msfi::report::{render_matrix, render_strip, summarize, write_summary_csv, SpeedSource};
use msfi::saliency::{Method, MethodConfig, RunLog};
use msfi::synthgen::{generate_dataset, generate_probe, Background, ProbeTarget, SynthConfig};
use msfi::tensorio::{load_samples, DatasetManifest, Sample};

#[derive(Parser)]
#[command(name = "msfi", version, about = "Modality importance and saliency evaluation for multi-modal images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Ground-truth modality importance.
    #[command(subcommand)]
    Mi(MiCmd),
    /// Perturbation saliency maps.
    #[command(subcommand)]
    Saliency(SaliencyCmd),
    /// Score saliency maps.
    Metrics(MetricsArgs),
    /// Rank statistics over score files.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Summaries and plots.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class balance LGG:HGG.
    #[arg(long, default_value = "1:1")]
    balance: String,
    #[arg(long)]
    out: PathBuf,
}

impl SynthArgs {
    fn config(&self) -> Result<SynthConfig> {
        let (a, b) = self
            .balance
            .split_once(':')
            .context("balance must look like 1:1")?;
        Ok(SynthConfig {
            n_samples: self.n,
            image_size: self.size,
            seed: self.seed,
            class_balance: [a.trim().parse()?, b.trim().parse()?],
            ..SynthConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum SynthCmd {
    Generate {
        #[command(flatten)]
        common: SynthArgs,
        /// Per-modality alignment, e.g. t1:0.5,t1c:1.0,t2:0.5,flair:0.7
        #[arg(long)]
        align: Option<String>,
        /// brain_texture or none.
        #[arg(long, default_value = "brain_texture")]
        background: String,
    },
    Probe {
        #[command(flatten)]
        common: SynthArgs,
        #[arg(long)]
        which: String,
    },
}

#[derive(Args)]
struct OracleArgs {
    /// `builtin` or `cmd:<template with {input_dir} and {output_csv}>`.
    #[arg(long, default_value = "builtin")]
    oracle: String,
    /// Modality the builtin classifier attends to.
    #[arg(long, default_value = "T1C", conflicts_with = "weights")]
    attend: String,
    /// Builtin classifier modality weights, comma separated.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = ShapeRuleClassifier::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = ShapeRuleClassifier::DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long, default_value_t = ShapeRuleClassifier::DEFAULT_SOFTNESS)]
    softness: f64,
}

impl OracleArgs {
    fn build(&self, manifest: &DatasetManifest, samples: &[Sample]) -> Result<Box<dyn PredictionOracle>> {
        if let Some(template) = self.oracle.strip_prefix("cmd:") {
            return Ok(Box::new(ExternalBatchOracle::new(template, manifest.class_names.clone())?));
        }
        if self.oracle != "builtin" {
            bail!("--oracle must be builtin or cmd:<template>, got {:?}", self.oracle);
        }
        let layout = samples.first().context("manifest has no samples")?.volume.layout();
        let weights = match &self.weights {
            Some(w) => w.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?,
            None => {
                let m = layout
                    .modality_index(&self.attend)
                    .with_context(|| format!("no modality {:?} in {:?}", self.attend, layout.modalities()))?;
                let mut w = vec![0.0; layout.n_modalities()];
                w[m] = 1.0;
                w
            }
        };
        let clf = ShapeRuleClassifier {
            modality_weights: weights,
            intensity_threshold: self.threshold,
            circularity_cutoff: self.cutoff,
            softness: self.softness,
        };
        clf.validate()?;
        Ok(Box::new(clf))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Zero,
    Nonlesion,
    Feature,
}

#[derive(Subcommand)]
enum MiCmd {
    /// Exact Shapley modality importance of the oracle's accuracy.
    Compute {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "zero")]
        policy: PolicyArg,
        /// Seed of the nonlesion resampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Prediction cache CSV, read and updated.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Importance from T1C / FLAIR probe accuracies.
    Probe {
        #[arg(long)]
        t1c_manifest: PathBuf,
        #[arg(long)]
        flair_manifest: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SaliencyCmd {
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: String,
        /// Overrides, e.g. window=8x8,stride=4
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// predicted, label or a class index.
        #[arg(long, default_value = "predicted")]
        target: String,
        /// Name scores are filed under; defaults to the method name.
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MetricArg {
    Msfi,
    MiCorr,
    Iou,
    All,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(value_enum)]
    metric: MetricArg,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory of `saliency run`; repeatable.
    #[arg(long, required = true)]
    saliency_dir: Vec<PathBuf>,
    #[arg(long)]
    mi: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Friedman test with Nemenyi post-hoc.
    Friedman {
        /// Score files; repeatable.
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "msfi")]
        metric: String,
    },
    /// Spearman correlation of two metrics paired by (sample_id, method).
    Spearman {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "rating")]
        metric_a: String,
        #[arg(long, default_value = "msfi")]
        metric_b: String,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    Matrix {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        runlog: Vec<PathBuf>,
        /// Cost behind the speed row: wall or evaluations.
        #[arg(long, default_value = "wall")]
        speed: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Strip {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "msfi")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = DatasetManifest::load(path)?;
    let samples = load_samples(&manifest)?;
    if samples.is_empty() {
        bail!("{} lists no samples", path.display());
    }
    Ok((manifest, samples))
}

fn read_all_scores(paths: &[PathBuf]) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_scores(p)?);
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(cmd: SynthCmd) -> Result<()> {
    let manifest = match cmd {
        SynthCmd::Generate { common, align, background } => {
            let mut cfg = common.config()?;
            cfg.background = background.parse::<Background>()?;
            if let Some(a) = align {
                cfg.set_alignment(&a)?;
            }
            generate_dataset(&cfg, &common.out)?
        }
        SynthCmd::Probe { common, which } => {
            generate_probe(&common.config()?, which.parse::<ProbeTarget>()?, &common.out)?
        }
    };
    println!("wrote {} samples", manifest.records.len());
    Ok(())
}

fn mi(cmd: MiCmd) -> Result<()> {
    match cmd {
        MiCmd::Compute { manifest, policy, seed, oracle, cache, out } => {
            let (m, samples) = load_manifest(&manifest)?;
            let oracle = oracle.build(&m, &samples)?;
            let policy = match policy {
                PolicyArg::Zero => AblationPolicy::ZeroWholeModality,
                PolicyArg::Nonlesion => AblationPolicy::NonLesionSample { seed },
                PolicyArg::Feature => AblationPolicy::ZeroFeatureRegion,
            };
            let cache = cache.map(PredictionCache::open).transpose()?;
            let mi = shapley_mi(&samples, oracle.as_ref(), policy, cache.as_ref())?;
            if let Some(c) = &cache {
                c.flush()?;
            }
            mi.write_csv(samples[0].volume.layout().modalities(), &out)?;
            print_mi(samples[0].volume.layout().modalities(), &mi);
        }
        MiCmd::Probe { t1c_manifest, flair_manifest, oracle, out } => {
            let mut probes = Vec::new();
            let mut names = Vec::new();
            for (which, path) in [(ProbeTarget::T1c, &t1c_manifest), (ProbeTarget::Flair, &flair_manifest)] {
                let (m, samples) = load_manifest(path)?;
                let layout = samples[0].volume.layout();
                let idx = layout
                    .modality_index(which.modality())
                    .with_context(|| format!("{} has no {} modality", path.display(), which.modality()))?;
                let acc = accuracy(&samples, oracle.build(&m, &samples)?.as_ref())?;
                println!("{} probe accuracy {acc}", which.modality());
                probes.push((idx, acc));
                names = layout.modalities().to_vec();
            }
            let mi = probe_mi(names.len(), &probes, 0.5)?;
            mi.write_csv(&names, &out)?;
            print_mi(&names, &mi);
        }
    }
    Ok(())
}

fn print_mi(names: &[String], mi: &ModalityImportance) {
    for ((n, p), q) in names.iter().zip(&mi.phi).zip(&mi.normalized) {
        println!("{n}\tphi={p:.6}\tnormalized={q:.6}");
    }
}

fn saliency(cmd: SaliencyCmd) -> Result<()> {
    let SaliencyCmd::Run { manifest, method, params, seed, target, label, oracle, out_dir } = cmd;
    let (m, samples) = load_manifest(&manifest)?;
    let oracle = oracle.build(&m, &samples)?;
    let mut cfg = MethodConfig::new(method.parse::<Method>()?).with_seed(seed);
    cfg.apply_params(&params)?;
    let label = label.unwrap_or_else(|| cfg.method.name().to_string());
    let log = run_saliency(&samples, oracle.as_ref(), &cfg, target.parse::<TargetChoice>()?, &label, &out_dir)?;
    println!("{}: {} maps in {}", log.label, log.samples.len(), out_dir.display());
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let (_, samples) = load_manifest(&args.manifest)?;
    let (names, mi) = ModalityImportance::read_csv(&args.mi)?;
    if names.as_slice() != samples[0].volume.layout().modalities() {
        bail!("MI modalities {names:?} do not match the manifest's {:?}", samples[0].volume.layout().modalities());
    }
    let chosen = match args.metric {
        MetricArg::Msfi => vec![Metric::Msfi],
        MetricArg::MiCorr => vec![Metric::MiCorr],
        MetricArg::Iou => vec![Metric::Iou],
        MetricArg::All => vec![Metric::Msfi, Metric::MiCorr, Metric::Iou],
    };
    let tag = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut records = Vec::new();
    for dir in &args.saliency_dir {
        let (log, maps) = load_saliency_dir(&samples, dir)?;
        records.extend(score_maps(&samples, &maps, &mi, &chosen, args.iou_threshold, &log.label, &tag)?);
    }
    write_scores(&records, &args.out)?;
    let mut meta = args.out.clone().into_os_string();
    meta.push(".meta.json");
    ScoreMeta::new(&chosen, &mi, args.iou_threshold).save(PathBuf::from(meta))?;
    println!("wrote {} scores", records.len());
    Ok(())
}

fn stats(cmd: StatsCmd) -> Result<()> {
    match cmd {
        StatsCmd::Friedman { scores, metric } => {
            let metric: Metric = metric.parse()?;
            let matrix = score_matrix(&read_all_scores(&scores)?, metric)?;
            let f = friedman(&matrix)?;
            println!("metric {metric}: N={} k={}", matrix.n_rows(), matrix.n_methods());
            println!("friedman chi2={:.6} df={} p={:.6}", f.chi2, f.df, f.p_value);
            match nemenyi(&matrix) {
                Ok(n) => {
                    println!("nemenyi CD={:.6}", n.critical_difference);
                    for (name, r) in matrix.methods().iter().zip(&n.mean_ranks) {
                        println!("  {name}\tmean_rank={r:.4}");
                    }
                    for i in 0..matrix.n_methods() {
                        for j in i + 1..matrix.n_methods() {
                            if n.significant[i][j] {
                                println!("  differ: {} / {}", matrix.methods()[i], matrix.methods()[j]);
                            }
                        }
                    }
                }
                Err(e) => println!("nemenyi skipped: {e}"),
            }
        }
        StatsCmd::Spearman { a, b, metric_a, metric_b } => {
            let (ma, mb): (Metric, Metric) = (metric_a.parse()?, metric_b.parse()?);
            let ra: Vec<_> = read_scores(&a)?.into_iter().filter(|r| r.metric == ma).collect();
            let rb: Vec<_> = read_scores(&b)?.into_iter().filter(|r| r.metric == mb).collect();
            let (x, y) = join_pairs(&ra, &rb)?;
            let c = spearman(&x, &y)?;
            println!("spearman {ma} vs {mb}: rho={:.2} p={:.3} n={}", c.rho, c.p_value, c.n);
        }
    }
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    match cmd {
        ReportCmd::Matrix { scores, runlog, speed, out, csv } => {
            let speed: SpeedSource = speed.parse()?;
            let logs = runlog.iter().map(RunLog::load).collect::<Result<Vec<_>, _>>()?;
            let summaries = summarize(&read_all_scores(&scores)?, &logs, speed)?;
            write_text(&out, &render_matrix(&summaries))?;
            if let Some(csv) = csv {
                write_summary_csv(&summaries, speed, csv)?;
            }
        }
        ReportCmd::Strip { scores, metric, out } => {
            let records = read_all_scores(&scores)?;
            let metric: Metric = metric.parse()?;
            let mut methods: Vec<String> = records.iter().filter(|r| r.metric == metric).map(|r| r.method.clone()).collect();
            methods.sort();
            methods.dedup();
            write_text(&out, &render_strip(&records, metric, &methods)?)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(c) => synth(c),
        Command::Mi(c) => mi(c),
        Command::Saliency(c) => saliency(c),
        Command::Metrics(a) => metrics(a),
        Command::Stats(c) => stats(c),
        Command::Report(c) => report(c),
    }
}
