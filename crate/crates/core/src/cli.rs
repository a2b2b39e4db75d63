//! Command-line front end shared by the `pemp` binary and its tests.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults (or the compact
//! preset), an optional `--config` file, repeated `--set KEY=VALUE`
//! overrides and finally the dedicated flags, in that order.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::ablate::{method_name, module_variants, run_ablation, sweep_variants, AblationPlan};
use crate::config::RunConfig;
use crate::data::{load_dataset, sample_episode, save_dataset, split_classes, GENERATOR_VERSION};
use crate::error::{Error, Result};
use crate::eval::{evaluate_protocol, render_table, EvalReport, ProtocolSpec, TableRow};
use crate::export::{write_gray_png, write_rgb_png, write_winner_png};
use crate::gradcases::all_cases;
use crate::model::{rng_stream, streams, PempModel, PRIOR_CHECKPOINT};
use crate::params::ParamSet;
use crate::train::{train_prior, train_seg, LogRecord};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const MAPS_DIR: &str = "maps";

#[derive(Parser, Debug)]
#[command(
    name = "pemp",
    version,
    about = "Two-stage 1-way K-shot segmentation with learned prototype banks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Start from the single-core compact preset instead of the defaults.
    #[arg(long)]
    pub compact: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Prior,
    Seg,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset as PNGs plus manifest.json.
    GenData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the prior network, the segmentation network, or both.
    Train {
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate the checkpoints in a run directory on novel-class episodes.
    Eval {
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Run directory holding the checkpoints; reports are written here.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Module toggles, or a single-key sweep such as `--sweep M=1,2,3,5`.
    Ablate {
        #[arg(long, value_name = "KEY=V1,V2,..")]
        sweep: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        folds: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        shots: Vec<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write query, ground-truth, prediction and winner-prototype PNGs.
    ExportMaps {
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Run directory holding the checkpoints; maps go to `<DIR>/maps`.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(cfg: &ConfigArgs, base: Option<&Path>) -> Result<RunConfig> {
    let preset = if cfg.compact {
        RunConfig::compact()
    } else {
        RunConfig::default()
    };
    let mut config = match (&cfg.config, base) {
        (Some(path), _) => preset.with_text(&read_text(path)?)?,
        (None, Some(dir)) if dir.join(RESOLVED_CONFIG).exists() => RunConfig::load(&dir.join(RESOLVED_CONFIG))?,
        _ => preset,
    };
    for kv in &cfg.set {
        config.apply_override(kv)?;
    }
    Ok(config)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { out, cfg } => gen_data(&out, &resolve(&cfg, None)?),
        Command::Train {
            fold,
            shots,
            stage,
            out,
            cfg,
        } => {
            let mut config = resolve(&cfg, None)?;
            if let Some(f) = fold {
                config.fold = f;
            }
            if let Some(k) = shots {
                config.shots = k;
            }
            train(&out, &config, stage)
        }
        Command::Eval {
            fold,
            shots,
            runs,
            episodes,
            out,
            cfg,
        } => {
            let mut config = resolve(&cfg, Some(&out))?;
            if let Some(f) = fold {
                config.fold = f;
            }
            if let Some(k) = shots {
                config.shots = k;
            }
            if let Some(r) = runs {
                config.eval_runs = r;
            }
            if let Some(e) = episodes {
                config.eval_episodes = e;
            }
            eval(&out, &config).map(|_| ())
        }
        Command::Gradcheck { seed, tolerance } => gradcheck(seed, tolerance),
        Command::Ablate {
            sweep,
            seeds,
            folds,
            shots,
            out,
            cfg,
        } => ablate(&out, &resolve(&cfg, None)?, sweep.as_deref(), seeds, folds, shots),
        Command::ExportMaps {
            fold,
            shots,
            count,
            out,
            cfg,
        } => {
            let mut config = resolve(&cfg, Some(&out))?;
            if let Some(f) = fold {
                config.fold = f;
            }
            if let Some(k) = shots {
                config.shots = k;
            }
            export_maps(&out, &config, count)
        }
    }
}

fn gen_data(out: &Path, config: &RunConfig) -> Result<()> {
    config.validate()?;
    let ds = load_dataset(&RunConfig {
        data_dir: None,
        ..config.clone()
    })?;
    let manifest = save_dataset(&ds, out, config.data_seed, GENERATOR_VERSION)?;
    println!(
        "wrote {} images in {} classes to {}",
        ds.len(),
        manifest.classes.len(),
        out.display()
    );
    Ok(())
}

/// JSON-lines sink for training records.
struct MetricsLog {
    writer: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            writer: BufWriter::new(file),
            error: None,
        })
    }

    fn record(&mut self, r: &LogRecord) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("log records serialize");
        if let Err(e) = writeln!(self.writer, "{line}") {
            self.error = Some(e);
        }
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(Error::io(path, e));
        }
        self.writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn train(out: &Path, config: &RunConfig, stage: StageArg) -> Result<()> {
    config.validate()?;
    create_dir(out)?;
    let ds = load_dataset(config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    write_text(&out.join(RESOLVED_CONFIG), &config.to_text())?;
    let log_path = out.join(METRICS_LOG);
    let mut log = MetricsLog::open(&log_path, stage == StageArg::Seg)?;
    let start = Instant::now();
    let prior = match stage {
        StageArg::Seg => ParamSet::load(&out.join(PRIOR_CHECKPOINT))?,
        _ => {
            info!("training prior network, fold {}", config.fold);
            let p = train_prior(&ds, &split, config, &mut |r| log.record(r))?;
            p.save(&out.join(PRIOR_CHECKPOINT))?;
            p
        }
    };
    let seg = if stage != StageArg::Prior && config.two_stage {
        info!("training segmentation network, fold {}", config.fold);
        Some(train_seg(&ds, &split, config, &prior, &mut |r| log.record(r))?)
    } else {
        None
    };
    log.finish(&log_path)?;
    let model = PempModel {
        config: config.clone(),
        prior,
        seg,
    };
    model.save(out)?;
    println!(
        "trained {} (fold {}) in {:.1}s; checkpoints in {}",
        method_name(config),
        config.fold,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn report_text(report: &EvalReport) -> String {
    let mut folds = [None; 4];
    folds[report.fold] = Some(report.mean_iou.mean);
    let row = TableRow {
        method: report.method.clone(),
        shots: report.shots,
        folds,
    };
    let mut s = render_table(&[row]);
    s.push_str(&format!(
        "\nmean-IoU   {:.2} ± {:.2}\nbinary-IoU {:.2} ± {:.2}\n",
        100.0 * report.mean_iou.mean,
        100.0 * report.mean_iou.std,
        100.0 * report.binary_iou.mean,
        100.0 * report.binary_iou.std
    ));
    for r in &report.runs {
        s.push_str(&format!(
            "run {}: mean-IoU {:.2}  binary-IoU {:.2}\n",
            r.run,
            100.0 * r.mean_iou,
            100.0 * r.binary_iou
        ));
    }
    for (c, v) in &report.per_class_iou {
        s.push_str(&format!("class {c}: IoU {:.2}\n", 100.0 * v));
    }
    s.push_str(&format!("config {}\n", report.config_hash));
    s
}

/// Evaluates the checkpoints in `dir` and writes `report.json` and `report.txt` there.
pub fn eval(dir: &Path, config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let model = PempModel::load(dir, config)?;
    let ds = load_dataset(config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    let report = evaluate_protocol(
        &model,
        &ds,
        &split,
        &ProtocolSpec::from_config(config),
        &method_name(config),
        config,
    )?;
    write_text(&dir.join(REPORT_JSON), &report.to_json()?)?;
    let text = report_text(&report);
    write_text(&dir.join(REPORT_TEXT), &text)?;
    print!("{text}");
    Ok(report)
}

fn gradcheck(seed: u64, tolerance: f64) -> Result<()> {
    let mut failed = Vec::new();
    for case in all_cases(seed) {
        let err = case.run(1e-6)?;
        let ok = err <= tolerance && case.param_count() <= 64;
        println!(
            "{} {:<32} params {:>3}  rel err {err:.2e}",
            if ok { "PASS" } else { "FAIL" },
            case.name,
            case.param_count()
        );
        if !ok {
            failed.push(case.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Metrics(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn ablate(
    out: &Path,
    config: &RunConfig,
    sweep: Option<&str>,
    seeds: Vec<u64>,
    folds: Vec<usize>,
    shots: Vec<usize>,
) -> Result<()> {
    config.validate()?;
    create_dir(out)?;
    let variants = match sweep {
        Some(s) => sweep_variants(s)?,
        None => module_variants(config.num_prototypes),
    };
    let ds = load_dataset(config)?;
    write_text(&out.join(RESOLVED_CONFIG), &config.to_text())?;
    let plan = AblationPlan {
        variants,
        seeds,
        folds,
        eval_shots: shots,
    };
    let result = run_ablation(&ds, config, &plan, &|_, _, _, _| {})?;
    let table = render_table(&result.table_rows());
    write_text(&out.join(REPORT_JSON), &serde_json::to_string_pretty(&result)?)?;
    write_text(&out.join(REPORT_TEXT), &table)?;
    print!("{table}");
    Ok(())
}

fn export_maps(dir: &Path, config: &RunConfig, count: usize) -> Result<()> {
    config.validate()?;
    let model = PempModel::load(dir, config)?;
    let ds = load_dataset(config)?;
    let split = split_classes(ds.num_classes(), config.fold)?;
    let maps = dir.join(MAPS_DIR);
    create_dir(&maps)?;
    let mut rng = rng_stream(config.seed, streams::EVAL_BASE);
    for i in 0..count {
        let ep = sample_episode(&ds, &split.novel_classes, config.shots, false, &mut rng)?;
        let pred = model.predict(&ep)?;
        let scale = ep.query.height() / pred.map.height();
        let name = |kind: &str| maps.join(format!("{i:03}_{kind}.png"));
        write_rgb_png(&name("query"), &ep.query.image)?;
        write_gray_png(&name("gt"), &ep.query.mask)?;
        write_gray_png(&name("pred"), &pred.mask)?;
        write_gray_png(&name("prob"), &pred.probs.channel(0)?)?;
        if let Some(p) = &pred.pseudo_label {
            write_gray_png(&name("pseudo"), p)?;
        }
        write_winner_png(&name("winner"), &pred.map, config.num_prototypes, scale.max(1))?;
    }
    println!("wrote {count} episodes of maps to {}", maps.display());
    Ok(())
}
