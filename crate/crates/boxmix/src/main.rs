//! `boxmix` command line: dataset generation, training, evaluation campaigns
//! and the embedded self-verification suite.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 i/o or
//! data-format failure, 5 violated internal invariant (including failed
//! self-checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use boxmix::data::{generate_dataset, load_dataset, render_patch_bank, SceneSpec};
use boxmix::detector::{load_checkpoint, ParamSet};
use boxmix::error::{Error, Result};
use boxmix::eval::report::{EvalReport, ReportMeta};
use boxmix::eval::write_csv;
use boxmix::harness::{
    beta_histogram, detector_spec_for, evaluate_split, flattening_study, noise_sweep,
    patch_study, train, RunConfig, TrainMode,
};

#[derive(Parser)]
#[command(
    name = "boxmix",
    about = "Mixup-style training and evaluation for a small anchor-based detector",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration source shared by training and evaluation commands: an
/// optional key=value file, then explicit overrides.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key=value configuration file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Extra `key=value` override; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    train_split: Option<String>,
    #[arg(long)]
    eval_split: Option<String>,
    #[arg(long)]
    perlevel_level: Option<usize>,
    /// Test hook: pin every mixing weight to this value.
    #[arg(long)]
    lambda_override: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mode = match &self.mode {
            Some(m) => TrainMode::parse(m)?,
            None => TrainMode::Baseline,
        };
        let mut config = RunConfig::default_for(mode);
        if let Some(path) = &self.config {
            config = RunConfig::load_over(path, config)?;
            // a mode flag beats the file; defaults tied to the mode (alpha,
            // batch size) were already rebased above when the flag was given
            if self.mode.is_some() {
                config.mode = mode;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
            config.set(k, v)?;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.tau {
            config.tau = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.threads {
            config.threads = v;
        }
        if let Some(v) = &self.data_dir {
            config.data_dir = v.clone();
        }
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
        if let Some(v) = &self.train_split {
            config.train_split = v.clone();
        }
        if let Some(v) = &self.eval_split {
            config.eval_split = v.clone();
        }
        if let Some(v) = self.perlevel_level {
            config.perlevel_level = v;
        }
        if let Some(v) = self.lambda_override {
            config.lambda_override = Some(v);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes split (images plus manifest).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        /// Comma-separated class names.
        #[arg(long)]
        classes: Option<String>,
        #[arg(long, default_value_t = 1)]
        min_objects: usize,
        #[arg(long, default_value_t = 4)]
        max_objects: usize,
        #[arg(long, default_value_t = 0.15)]
        min_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        max_scale: f64,
        #[arg(long, default_value_t = 0.02)]
        background_noise: f64,
    },

    /// Train a detector and write the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Evaluate a checkpoint: per-class AP, mean AP and the summary table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Accuracy under additive Gaussian noise, optionally against a second
    /// model with a difference row.
    EvalNoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint whose rows are subtracted (reference model).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "0,0.1,0.2,0.4", value_delimiter = ',')]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Patch-transplant study over independently patched copies of the split.
    EvalPatch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        copies: usize,
        #[arg(long, default_value = "0.5,0.75", value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Variance-concentration comparison between two checkpoints.
    AnalyzeFlatten {
        /// Reference model (subtracted).
        #[arg(long)]
        baseline: PathBuf,
        /// Model whose concentration change is reported.
        #[arg(long)]
        mixup: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Histogram of Beta(alpha, alpha) draws, as CSV.
    PlotBeta {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Run the embedded reference-implementation checks.
    Selfcheck,
}

fn load_params(path: &Path, config: &RunConfig) -> Result<ParamSet> {
    let spec = detector_spec_for(config);
    load_checkpoint(path, Some(&spec.digest()))
}

fn digest_header(columns: &str, digest: &str, seed: u64) -> String {
    format!("# config_digest={digest}\n# seed={seed}\n{columns}")
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            out,
            split,
            n,
            seed,
            image_size,
            classes,
            min_objects,
            max_objects,
            min_scale,
            max_scale,
            background_noise,
        } => {
            let mut spec = SceneSpec {
                image_size,
                objects_per_image: (min_objects, max_objects),
                object_scale: (min_scale, max_scale),
                background_noise,
                seed,
                ..Default::default()
            };
            if let Some(list) = classes {
                spec.classes = list.split(',').map(|s| s.trim().to_string()).collect();
            }
            spec.validate()?;
            let manifest = generate_dataset(&spec, n, &out, &split)?;
            let boxes: usize = manifest.items.iter().map(|i| i.boxes.len()).sum();
            println!(
                "wrote {} images ({boxes} boxes) under {}",
                manifest.items.len(),
                out.join(&split).display()
            );
            Ok(0)
        }

        Command::Train { config } => {
            let config = config.resolve()?;
            let record = train(&config)?;
            if let Some(last) = record.epoch_losses.last() {
                println!(
                    "trained {} epochs (final loss {:.4}); run directory {}",
                    record.epoch_losses.len(),
                    last.total,
                    record.out_dir.display()
                );
            } else {
                println!("wrote initialized model to {}", record.out_dir.display());
            }
            Ok(0)
        }

        Command::Eval { checkpoint, out, config } => {
            let config = config.resolve()?;
            let params = load_params(&checkpoint, &config)?;
            let dataset = load_dataset(&config.data_dir, &config.eval_split)?;
            let spec = detector_spec_for(&config);
            let (voc, coco) = evaluate_split(&spec, &params, &config, &dataset)?;
            std::fs::create_dir_all(&out)?;
            let digest = config.digest();
            let mut report = EvalReport::new(ReportMeta::new(&digest, config.seed));
            report.voc = Some(voc.clone());
            report.coco = Some(coco);
            report.write_json(&out.join("report.json"))?;
            let rows: Vec<Vec<String>> = voc
                .per_class
                .iter()
                .map(|c| {
                    vec![c.class_id.to_string(), format!("{}", c.ap), c.n_gt.to_string()]
                })
                .collect();
            write_csv(
                &out.join("voc_per_class.csv"),
                &digest_header("class_id,ap,n_gt", &digest, config.seed),
                &rows,
            )?;
            println!("mAP@0.5 = {:.4}  AP[.5:.95] = {:.4}", voc.map, coco.ap);
            Ok(0)
        }

        Command::EvalNoise { checkpoint, baseline, sigmas, eval_seed, out, config } => {
            let config = config.resolve()?;
            let params = load_params(&checkpoint, &config)?;
            let dataset = load_dataset(&config.data_dir, &config.eval_split)?;
            let spec = detector_spec_for(&config);
            let table = noise_sweep(&spec, &params, &config, &dataset, &sigmas, eval_seed)?;
            let reference = match &baseline {
                Some(path) => {
                    let p = load_params(path, &config)?;
                    Some(noise_sweep(&spec, &p, &config, &dataset, &sigmas, eval_seed)?)
                }
                None => None,
            };
            std::fs::create_dir_all(&out)?;
            let digest = config.digest();
            let mut report = EvalReport::new(ReportMeta::new(&digest, config.seed));
            report.noise = Some(table.clone());
            report.write_json(&out.join("noise_report.json"))?;
            let mut rows = Vec::new();
            for (i, row) in table.rows.iter().enumerate() {
                let mut fields = vec![format!("{}", row.sigma), format!("{}", row.map)];
                if let Some(r) = &reference {
                    fields.push(format!("{}", r.rows[i].map));
                    fields.push(format!("{}", row.map - r.rows[i].map));
                }
                rows.push(fields);
            }
            let columns = if reference.is_some() {
                "sigma,map,baseline_map,difference"
            } else {
                "sigma,map"
            };
            write_csv(&out.join("noise.csv"), &digest_header(columns, &digest, eval_seed), &rows)?;
            for row in &table.rows {
                println!("sigma={:<5} mAP={:.4}", row.sigma, row.map);
            }
            Ok(0)
        }

        Command::EvalPatch { checkpoint, copies, thresholds, eval_seed, out, config } => {
            let config = config.resolve()?;
            let params = load_params(&checkpoint, &config)?;
            let dataset = load_dataset(&config.data_dir, &config.eval_split)?;
            let spec = detector_spec_for(&config);
            let bank = render_patch_bank(config.num_classes, 3, 48, eval_seed);
            let tables = patch_study(
                &spec, &params, &config, &dataset, &bank, copies, &thresholds, eval_seed,
            )?;
            std::fs::create_dir_all(&out)?;
            let digest = config.digest();
            let mut report = EvalReport::new(ReportMeta::new(&digest, config.seed));
            report.patch = Some(tables.clone());
            report.write_json(&out.join("patch_report.json"))?;
            let rows: Vec<Vec<String>> = tables
                .iter()
                .map(|t| {
                    vec![
                        format!("{}", t.iou_thr),
                        t.metrics.patches_detected.to_string(),
                        format!("{}", t.metrics.precision),
                        format!("{}", t.metrics.recall),
                        format!("{}", t.metrics.map_all),
                        t.metrics.precision_defined.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out.join("patch.csv"),
                &digest_header(
                    "iou_thr,patches_detected,precision,recall,map_all,precision_defined",
                    &digest,
                    eval_seed,
                ),
                &rows,
            )?;
            for t in &tables {
                println!(
                    "thr={:<5} detected={} precision={:.3} recall={:.3} mAP={:.4}",
                    t.iou_thr,
                    t.metrics.patches_detected,
                    t.metrics.precision,
                    t.metrics.recall,
                    t.metrics.map_all
                );
            }
            Ok(0)
        }

        Command::AnalyzeFlatten { baseline, mixup, out, config } => {
            let config = config.resolve()?;
            let base = load_params(&baseline, &config)?;
            let mix = load_params(&mixup, &config)?;
            let dataset = load_dataset(&config.data_dir, &config.eval_split)?;
            let spec = detector_spec_for(&config);
            let table = flattening_study(&spec, &base, &mix, &config, &dataset)?;
            std::fs::create_dir_all(&out)?;
            let digest = config.digest();
            let mut report = EvalReport::new(ReportMeta::new(&digest, config.seed));
            report.flattening = Some(table.clone());
            report.write_json(&out.join("flattening_report.json"))?;
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.class_id.to_string(),
                        r.level.to_string(),
                        r.n_images.to_string(),
                        format!("{}", r.ratio_a),
                        format!("{}", r.ratio_b),
                        format!("{}", r.difference),
                        r.skipped.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out.join("flattening.csv"),
                &digest_header(
                    "class_id,level,n_images,ratio_baseline,ratio_mixup,difference,skipped",
                    &digest,
                    config.seed,
                ),
                &rows,
            )?;
            for r in &table.rows {
                let name = if r.class_id == 0 { "all".to_string() } else { r.class_id.to_string() };
                println!(
                    "class={name:<4} level={} diff={:+.4}{}",
                    r.level,
                    r.difference,
                    if r.skipped { " (skipped)" } else { "" }
                );
            }
            Ok(0)
        }

        Command::PlotBeta { alpha, n, bins, seed, out } => {
            let counts = beta_histogram(alpha, n, bins, seed)?;
            let rows: Vec<Vec<String>> = counts
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    vec![
                        format!("{}", i as f64 / bins as f64),
                        format!("{}", (i + 1) as f64 / bins as f64),
                        c.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out,
                &format!("# alpha={alpha} n={n} seed={seed}\nbin_lo,bin_hi,count"),
                &rows,
            )?;
            println!("wrote {bins} bins of {n} draws to {}", out.display());
            Ok(0)
        }

        Command::Selfcheck => {
            let outcomes = boxmix::oracle::run_selfcheck();
            let mut failed = 0;
            for o in &outcomes {
                println!(
                    "[{}] {:<40} {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                if !o.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Internal(format!("{failed} self-checks failed")));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
