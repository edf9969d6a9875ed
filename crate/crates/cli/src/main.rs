//! `litese`: enhance, train, search, complexity and plot.

mod exit;
mod plot;
mod train_file;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use litese_core::complexity::report_spec;
use litese_core::frontend::{read_wav, write_wav};
use litese_core::network::{checkpoint, stream_enhance};
use litese_core::training::Trainer;
use litese_core::{ArchitectureSpec, Model};
use litese_nas::SearchConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use exit::{Failure, Outcome};
use train_file::{TrainRun, DATA_DIR_ENV};

/// How many ranked architectures `search` writes.
const RANKED_OUT: usize = 25;

#[derive(Parser, Debug)]
#[command(
    name = "litese",
    version,
    about = "Lightweight causal speech enhancement"
)]
struct Cli {
    /// Overrides the seed in config files (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel candidate evaluations during search.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Denoise a 16 kHz WAV file.
    Enhance {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Process hop by hop, as a real-time stream would.
        #[arg(long)]
        stream: bool,
    },
    /// Train a network and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines metric log; defaults to the checkpoint path with a
        /// `.jsonl` extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Search architectures; writes ranked.cfg, best.cfg, trend.tsv and
    /// trend.svg into the output directory.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and MAC counts of an architecture config.
    Complexity {
        config: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json_style: bool,
        /// Grouping depth of the per-layer breakdown.
        #[arg(long, default_value_t = 2)]
        depth: usize,
    },
    /// Render a reward-trend table or training log to SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("litese: {}", f);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.cmd {
        Cmd::Enhance {
            input,
            checkpoint,
            out,
            stream,
        } => enhance(&input, &checkpoint, &out, stream),
        Cmd::Train { config, out, log } => train(&config, &out, log.as_deref(), cli.seed),
        Cmd::Search { config, out } => search(&config, &out, cli.seed, cli.workers),
        Cmd::Complexity {
            config,
            json_style,
            depth,
        } => complexity(&config, json_style, depth),
        Cmd::Plot { input, out } => plot::render(&plot::read(&input)?, &out),
    }
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::runtime(e.to_string()).context(dir.display()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(e.to_string()).context(path.display()))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Failure::runtime(e.to_string()).context(path.display()))
}

fn enhance(input: &Path, ckpt: &Path, out: &Path, stream: bool) -> Outcome {
    let noisy = read_wav(input).map_err(|e| Failure::from(e).context(input.display()))?;
    let model = checkpoint::load(ckpt).map_err(|e| Failure::from(e).context(ckpt.display()))?;
    let clean = if stream {
        stream_enhance(&model, &noisy)?
    } else {
        model.enhance(&noisy)?
    };
    write_wav(out, &clean).map_err(|e| Failure::runtime(e.to_string()).context(out.display()))?;
    log::info!("wrote {} samples to {}", clean.len(), out.display());
    Ok(())
}

fn train(config: &Path, out: &Path, log_path: Option<&Path>, seed: Option<u64>) -> Outcome {
    let run = TrainRun::load(config)?;
    let mut cfg = run.cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    // Data draws use their own stream so changing step counts leaves the
    // corpus unchanged.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let data = run.pairs(&run.data, &mut rng)?;
    let valid = run.pairs(&run.valid, &mut rng)?;
    if std::env::var_os(DATA_DIR_ENV).is_some() {
        log::info!("data directory from {}", DATA_DIR_ENV);
    }

    let model = Model::assemble(&run.spec, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg)?;
    let log_path = log_path.map_or_else(|| out.with_extension("jsonl"), Path::to_path_buf);
    let mut sink = create(&log_path)?;
    let v = trainer.fit(&data, &valid, Some(&mut sink))?;
    sink.flush()
        .map_err(|e| Failure::runtime(e.to_string()).context(log_path.display()))?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::runtime(e.to_string()).context(dir.display()))?;
    }
    checkpoint::save(&trainer.model, out)
        .map_err(|e| Failure::runtime(e.to_string()).context(out.display()))?;
    println!(
        "steps {}  valid SISNR {:.3} dB  (noisy {:.3} dB, gain {:+.3} dB)",
        trainer.step, v.sisnr_db, v.noisy_sisnr_db, v.improvement_db
    );
    println!("checkpoint {}", out.display());
    println!("log {}", log_path.display());
    Ok(())
}

fn search(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> Outcome {
    let mut cfg =
        SearchConfig::load(config).map_err(|e| Failure::from(e).context(config.display()))?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let evaluator = cfg.build_evaluator()?;
    let result = litese_nas::search(&cfg, evaluator.as_ref())?;

    std::fs::create_dir_all(out)
        .map_err(|e| Failure::runtime(e.to_string()).context(out.display()))?;
    write_text(&out.join("ranked.cfg"), &result.ranked_configs(RANKED_OUT))?;
    write_text(&out.join("best.cfg"), &result.best().spec.to_config())?;
    let table = result.trend_table();
    write_text(&out.join("trend.tsv"), &table)?;
    plot::render(
        &plot::Series::Trend(result.trend.clone()),
        &out.join("trend.svg"),
    )?;

    let best = result.best();
    println!(
        "evaluated {} distinct of {} sampled in {} episodes",
        result.ranked.len(),
        result.trend.last().map_or(0, |r| r.sampled),
        result.trend.len()
    );
    println!(
        "best reward {:.6}  q {:.4}  macs {}  actions {:?}",
        best.reward,
        best.q,
        best.macs
            .map_or_else(|| "-".into(), |m| format!("{:.3}M", m / 1e6)),
        best.actions
    );
    println!("outputs in {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ComplexityOut<'a> {
    config: &'a Path,
    params: u64,
    macs_per_frame: u64,
    frame_rate: f64,
    macs: f64,
    groups: Vec<GroupOut>,
}

#[derive(Serialize)]
struct GroupOut {
    name: String,
    params: u64,
    macs: f64,
}

fn complexity(config: &Path, json: bool, depth: usize) -> Outcome {
    let spec =
        ArchitectureSpec::load(config).map_err(|e| Failure::from(e).context(config.display()))?;
    spec.validate()
        .map_err(|e| Failure::from(e).context(config.display()))?;
    let r = report_spec(&spec)?;
    let groups: Vec<GroupOut> = r
        .grouped(depth.max(1))
        .into_iter()
        .map(|(name, (params, macs))| GroupOut {
            name,
            params,
            macs: macs as f64 * r.frame_rate,
        })
        .collect();
    if json {
        let doc = ComplexityOut {
            config,
            params: r.params,
            macs_per_frame: r.macs_per_frame,
            frame_rate: r.frame_rate,
            macs: r.macs,
            groups,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("report serializes")
        );
        return Ok(());
    }
    println!("config      {}", config.display());
    println!("params      {} ({:.2}k)", r.params, r.kparams());
    println!("macs/frame  {}", r.macs_per_frame);
    println!("frame rate  {} /s", r.frame_rate);
    println!("macs        {:.0} ({:.3} M/s)", r.macs, r.mmacs());
    println!();
    println!("{:<24} {:>10} {:>14}", "group", "params", "MACs (M/s)");
    for g in &groups {
        println!("{:<24} {:>10} {:>14.4}", g.name, g.params, g.macs / 1e6);
    }
    Ok(())
}
