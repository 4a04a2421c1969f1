use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use segrsd::checkpoint::{load_rsd_checkpoint, load_seg_checkpoint, save_rsd_checkpoint, save_seg_checkpoint, Expected};
use segrsd::corpus_io::{import_csv, load_corpus, save_corpus};
use segrsd::error::{DataError, Result};
use segrsd::eval::{
    baseline_grid, naive_mae, predictions_mae, read_predictions, run_baselines, segmentation_accuracy, split_mae,
    train_rsd_checkpoint, RsdOptions,
};
use segrsd::report::{aux_name, loss_name, pipeline_name, ResultTable};
use segrsd::split::{split_corpus, DEFAULT_RATIOS};
use segrsd::synth::{synth_generate, SynthConfig};
use segrsd_core::rsd::{AuxTask, CorridorParams, Pipeline, PipelineMode, RsdArch, RsdLoss};
use segrsd_core::seg_trainer::{self, select_checkpoint, tc_measure, SegTrainConfig};
use segrsd_core::{Corpus, Split};

#[derive(Parser)]
#[command(name = "segrsd", version, about = "Unsupervised temporal segmentation as an auxiliary task for RSD prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known segmentations.
    Synth(SynthArgs),
    /// Build a corpus from comma-separated feature files, one per video.
    Import(ImportArgs),
    /// Run the alternating segmentation training and select a checkpoint.
    Segment(SegmentArgs),
    /// Train an RSD regressor.
    TrainRsd(TrainRsdArgs),
    /// MAE per split and segmentation accuracy against reference phases.
    Evaluate(EvaluateArgs),
    /// Run the baseline grid with repeated seeds.
    Baselines(BaselinesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Feature,
    Pretrain,
    Regularize,
    Single,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Feature => Pipeline::FeatureExtraction,
            PipelineArg::Pretrain => Pipeline::Pretraining,
            PipelineArg::Regularize => Pipeline::Regularization,
            PipelineArg::Single => Pipeline::SingleTask,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AuxArg {
    None,
    Seg,
    Uniform,
    Progress,
    Phase,
}

impl From<AuxArg> for AuxTask {
    fn from(a: AuxArg) -> Self {
        match a {
            AuxArg::None => AuxTask::None,
            AuxArg::Seg => AuxTask::LearnedSeg,
            AuxArg::Uniform => AuxTask::Uniform,
            AuxArg::Progress => AuxTask::Progress,
            AuxArg::Phase => AuxTask::Phase,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Smoothl1,
    Corr,
}

impl From<LossArg> for RsdLoss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Smoothl1 => RsdLoss::SmoothL1,
            LossArg::Corr => RsdLoss::CorrSmoothL1,
        }
    }
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected <a:b>")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a == 0 || a > b {
        return Err("window must satisfy 1 <= a <= b".into());
    }
    Ok((a, b))
}

/// Comma-separated layer widths.
#[derive(Clone)]
struct Widths(Vec<usize>);

fn parse_widths(s: &str) -> std::result::Result<Widths, String> {
    s.split(',')
        .map(|x| match x.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad layer width {x:?}")),
            Ok(w) => Ok(w),
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Widths)
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_videos: usize,
    /// Number of true subactivities.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 200.0 / 60.0)]
    duration_min: f64,
    #[arg(long, default_value_t = 0.2)]
    jitter: f64,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    skip: f64,
    #[arg(long, default_value_t = 2.0)]
    order_rho: f64,
    #[arg(long, default_value_t = 1.0)]
    frame_period: f64,
    #[arg(long, default_value_t = 1.0)]
    progress_gain: f64,
}

#[derive(Args)]
struct ImportArgs {
    /// Feature files; the file stem becomes the video id.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    frame_period: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    iterations: usize,
    /// Selection window; defaults to the last three iterations.
    #[arg(long, value_parser = parse_window)]
    select: Option<(usize, usize)>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long)]
    sweeps: Option<usize>,
    /// Embedding widths, comma-separated.
    #[arg(long, value_parser = parse_widths, default_value = "16,16")]
    hidden: Widths,
}

#[derive(Args)]
struct TrainRsdArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    pipeline: PipelineArg,
    #[arg(long, value_enum, default_value = "none")]
    aux: AuxArg,
    #[arg(long, value_enum, default_value = "smoothl1")]
    loss: LossArg,
    /// Segmentation checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the pipeline's default epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    aux_weight: f64,
    #[arg(long, value_parser = parse_widths, default_value = "16,16")]
    hidden: Widths,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// RSD checkpoints to evaluate.
    #[arg(long)]
    rsd: Vec<PathBuf>,
    /// Predictions file with `id,frame,rsd_min` lines.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Segmentation checkpoint to score against the reference phases.
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselinesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Adds the learned segmentation as an auxiliary task.
    #[arg(long)]
    seg: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Import(a) => import(a),
        Command::Segment(a) => segment(a),
        Command::TrainRsd(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baselines(a) => baselines(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.into(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DataError::Io {
        path: path.into(),
        source: e,
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_videos: a.n_videos,
        k_true: a.k,
        dim: a.dim,
        duration_mean_min: a.duration_min,
        duration_jitter: a.jitter,
        cluster_separation: a.separation,
        noise_sigma: a.noise,
        skip_prob: a.skip,
        order_rho: a.order_rho,
        seed: a.seed,
        frame_period_s: a.frame_period,
        progress_gain: a.progress_gain,
    };
    let s = synth_generate(&cfg)?;
    save_corpus(&s.corpus, &a.out)?;
    println!("wrote {} videos to {}", s.corpus.videos.len(), a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> Result<()> {
    let mut videos = Vec::new();
    for path in &a.files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DataError::Usage(format!("cannot derive a video id from {}", path.display())))?;
        videos.push(import_csv(path, id, a.frame_period)?);
    }
    let ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    let split = if ids.len() >= 8 {
        split_corpus(&ids, DEFAULT_RATIOS, a.seed)?
    } else {
        ids.iter().map(|id| (id.clone(), Split::Train)).collect()
    };
    let corpus = Corpus::new(videos, split)?;
    save_corpus(&corpus, &a.out)?;
    println!("wrote {} videos to {}", corpus.videos.len(), a.out.display());
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let defaults = SegTrainConfig::default();
    let window = a
        .select
        .unwrap_or((a.iterations.saturating_sub(2).max(1), a.iterations.max(1)));
    let mut cfg = SegTrainConfig {
        k: a.k,
        iterations: a.iterations,
        epochs_per_iteration: a.epochs,
        selection_window: window,
        sweeps_per_iteration: a.sweeps.unwrap_or(defaults.sweeps_per_iteration),
        hidden: a.hidden.0,
        seed: a.seed,
        ..defaults
    };
    cfg.appearance.epochs = a.epochs.max(1);
    if window.1 > a.iterations {
        return Err(DataError::Usage(format!(
            "selection window {}:{} exceeds {} iterations",
            window.0, window.1, a.iterations
        )));
    }
    let run = seg_trainer::run(&corpus, &cfg, |r| {
        println!("iter={} ce={:.6} tc={:.6}", r.iteration, r.cross_entropy, r.tc_score);
    })?;
    create_dir(&a.out)?;
    for ck in &run.checkpoints {
        save_seg_checkpoint(&a.out.join(format!("iter_{:02}.ckpt", ck.iteration)), ck)?;
    }
    let mut table = ResultTable::new("", "iteration", vec!["ce".into(), "tc".into()]);
    table.decimals = 6;
    for r in &run.reports {
        let row = r.iteration.to_string();
        table.push(&row, "ce", r.cross_entropy)?;
        table.push(&row, "tc", r.tc_score)?;
    }
    let mut text = table.render_text();
    if let Some(e) = run.error {
        write_file(&a.out.join("tc_report.txt"), &text)?;
        write_file(&a.out.join("tc_report.csv"), &table.render_csv()?)?;
        return Err(DataError::Core(e));
    }
    if run.checkpoints.is_empty() {
        write_file(&a.out.join("tc_report.txt"), &text)?;
        write_file(&a.out.join("tc_report.csv"), &table.render_csv()?)?;
        return Ok(());
    }
    let best = select_checkpoint(&run.checkpoints, window)?;
    save_seg_checkpoint(&a.out.join("selected.ckpt"), best)?;
    text.push_str(&format!(
        "selected iteration {} (window {}:{}, tc {:.6})\n",
        best.iteration, window.0, window.1, best.tc_score
    ));
    write_file(&a.out.join("tc_report.txt"), &text)?;
    write_file(&a.out.join("tc_report.csv"), &table.render_csv()?)?;
    print!("{text}");
    Ok(())
}

fn train(a: TrainRsdArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mode = PipelineMode::new(a.pipeline.into(), a.aux.into())?;
    let init = match &a.init {
        Some(p) => Some(load_seg_checkpoint(
            p,
            Expected {
                dim: corpus.dim(),
                k: None,
            },
        )?),
        None => None,
    };
    let cp = CorridorParams::from_corpus(&corpus)?;
    let opts = RsdOptions {
        arch: RsdArch {
            hidden: a.hidden.0,
            ..RsdArch::default()
        },
        aux_weight: a.aux_weight,
        epochs: a.epochs,
        ..RsdOptions::default()
    };
    let (ck, run) = train_rsd_checkpoint(&corpus, mode, a.loss.into(), init.as_ref(), &opts, a.seed, &cp)?;
    create_dir(&a.out)?;
    let mut history = String::from("epoch,train_loss,val_mae\n");
    for h in &run.history {
        println!("epoch={} loss={:.6} val_mae={:.6}", h.epoch, h.train_loss, h.val_mae);
        history.push_str(&format!("{},{:?},{:?}\n", h.epoch, h.train_loss, h.val_mae));
    }
    save_rsd_checkpoint(&a.out.join("rsd.ckpt"), &ck)?;
    write_file(&a.out.join("history.csv"), &history)?;
    let mut report = format!(
        "pipeline {} aux {} loss {}\n",
        pipeline_name(mode.pipeline),
        aux_name(mode.aux),
        loss_name(ck.loss)
    );
    if let Some(e) = ck.best_epoch {
        report.push_str(&format!("best epoch {e}\n"));
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        if let Some(m) = split_mae(&ck.params, &corpus, split)? {
            report.push_str(&format!("{} mae {m:.6}\n", split.as_str()));
        }
    }
    write_file(&a.out.join("report.txt"), &report)?;
    print!("{report}");
    match run.error {
        Some(e) => Err(DataError::Core(e)),
        None => Ok(()),
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.rsd.is_empty() && a.predictions.is_none() && a.seg.is_none() {
        return Err(DataError::Usage("nothing to evaluate: pass --rsd, --predictions or --seg".into()));
    }
    let corpus = load_corpus(&a.corpus)?;
    let expect = Expected {
        dim: corpus.dim(),
        k: None,
    };
    let mut text = String::new();
    let mut csv = String::new();

    if !a.rsd.is_empty() {
        let mut models = Vec::new();
        for p in &a.rsd {
            models.push(load_rsd_checkpoint(p, expect)?);
        }
        let cp = models[0].corridor;
        let losses: Vec<RsdLoss> = [RsdLoss::SmoothL1, RsdLoss::CorrSmoothL1]
            .into_iter()
            .filter(|l| models.iter().any(|m| m.loss == *l))
            .collect();
        for split in SPLITS {
            for &loss in &losses {
                let mut table = mae_table(&format!("MAE in minutes, {} split, {}", split.as_str(), loss_name(loss)));
                let mut any = false;
                for m in models.iter().filter(|m| m.loss == loss) {
                    if let Some(v) = split_mae(&m.params, &corpus, split)? {
                        table.push(aux_name(m.mode.aux), pipeline_name(m.mode.pipeline), v)?;
                        any = true;
                    }
                }
                if any {
                    append(&mut text, &mut csv, &table, &format!("{},{}", split.as_str(), loss_name(loss)))?;
                }
            }
        }
        text.push_str(&naive_line(&corpus, &cp)?);
    }

    if let Some(p) = &a.predictions {
        let preds = read_predictions(p)?;
        let mut table = ResultTable::new("MAE in minutes, predictions file", "source", split_columns());
        for split in SPLITS {
            if let Some(v) = predictions_mae(&preds, &corpus, split)? {
                table.push("predictions", split.as_str(), v)?;
            }
        }
        append(&mut text, &mut csv, &table, "predictions")?;
    }

    if let Some(p) = &a.seg {
        let ck = load_seg_checkpoint(p, expect)?;
        let mut table = ResultTable::new(
            format!("segmentation, iteration {}", ck.iteration),
            "measure",
            split_columns(),
        );
        table.decimals = 4;
        for split in SPLITS {
            let videos = corpus.videos_in(split);
            if videos.is_empty() {
                continue;
            }
            table.push("tc", split.as_str(), tc_measure(&ck.appearance, &videos)?)?;
            if let Some(m) = segmentation_accuracy(&ck.appearance, &corpus, split)? {
                table.push("phase accuracy", split.as_str(), m.accuracy)?;
            }
        }
        append(&mut text, &mut csv, &table, "segmentation")?;
    }

    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("evaluation.txt"), &text)?;
        write_file(&out.join("evaluation.csv"), &csv)?;
    }
    Ok(())
}

fn split_columns() -> Vec<String> {
    SPLITS.iter().map(|s| s.as_str().to_string()).collect()
}

fn mae_table(title: &str) -> ResultTable {
    let columns = [
        Pipeline::FeatureExtraction,
        Pipeline::Pretraining,
        Pipeline::Regularization,
        Pipeline::SingleTask,
    ]
    .iter()
    .map(|&p| pipeline_name(p).to_string())
    .collect();
    ResultTable::new(title, "aux", columns)
}

fn naive_line(corpus: &Corpus, cp: &CorridorParams) -> Result<String> {
    let mut line = format!("naive median predictor (t_median {:.2} min):", cp.t_median);
    for split in SPLITS {
        if let Some(v) = naive_mae(corpus, cp, split)? {
            line.push_str(&format!(" {} {v:.2}", split.as_str()));
        }
    }
    line.push('\n');
    Ok(line)
}

/// Adds a table to the text report and its rows, prefixed by `tag`, to
/// the CSV report.
fn append(text: &mut String, csv: &mut String, table: &ResultTable, tag: &str) -> Result<()> {
    if !text.is_empty() {
        text.push('\n');
    }
    text.push_str(&table.render_text());
    let body = table.render_csv()?;
    let mut lines = body.lines();
    if let Some(header) = lines.next() {
        if csv.is_empty() {
            csv.push_str(&format!("table,{header}\n"));
        }
    }
    for l in lines {
        csv.push_str(&format!("{tag},{l}\n"));
    }
    Ok(())
}

fn baselines(a: BaselinesArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let init = match &a.seg {
        Some(p) => Some(load_seg_checkpoint(
            p,
            Expected {
                dim: corpus.dim(),
                k: None,
            },
        )?),
        None => None,
    };
    let opts = RsdOptions {
        epochs: a.epochs,
        ..RsdOptions::default()
    };
    let cells = baseline_grid(init.is_some());
    let results = run_baselines(&corpus, &cells, a.repeats, a.seed, init.as_ref(), &opts)?;
    let split = if corpus.videos_in(Split::Test).is_empty() {
        Split::Val
    } else {
        Split::Test
    };
    let mut by_loss: BTreeMap<&str, ResultTable> = BTreeMap::new();
    for r in &results {
        let name = loss_name(r.cell.loss);
        let table = by_loss.entry(name).or_insert_with(|| {
            mae_table(&format!(
                "MAE in minutes, {} split, {name}, mean (±sd) over {} runs",
                split.as_str(),
                a.repeats
            ))
        });
        for &v in &r.mae {
            table.push(aux_name(r.cell.aux), pipeline_name(r.cell.pipeline), v)?;
        }
    }
    let mut text = String::new();
    let mut csv = String::new();
    for (name, table) in &by_loss {
        append(&mut text, &mut csv, table, name)?;
    }
    text.push_str(&naive_line(&corpus, &CorridorParams::from_corpus(&corpus)?)?);
    create_dir(&a.out)?;
    write_file(&a.out.join("baselines.txt"), &text)?;
    write_file(&a.out.join("baselines.csv"), &csv)?;
    print!("{text}");
    Ok(())
}
