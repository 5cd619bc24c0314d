//! `train`, `sweep` and `analyze`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use ddcl::analysis::{self, ProtocolAnalysis};
use ddcl::env::GoalDistribution;
use ddcl::nn::DenseNet;
use ddcl::train::{self, BitsMode, EpisodeRecord, MessageMode, Policies, TrainConfig};
use serde::Serialize;

use crate::manifest::{self, RunManifest};
use crate::usage;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BitsArg {
    Ideal,
    Encoded,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MessageModeArg {
    PerStep,
    PerEpisode,
}

/// Flags shared by `train` and `sweep`. Anything not given falls back to the
/// config file, then to the built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// JSON file with TrainConfig fields; a manifest.json is accepted too.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, env = "DDCL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub bits: Option<BitsArg>,
    #[arg(long, value_enum)]
    pub message_mode: Option<MessageModeArg>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Goal distribution JSON ({"support": [[x, y], ...], "probabilities": [...]}).
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    /// Output directory [default: run, or sweep for `ddcl sweep`].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Directory written by `ddcl train`.
    pub dir: PathBuf,
    /// Channel draws per cell for the speaker heatmap.
    #[arg(long, default_value_t = 256)]
    pub samples: u32,
}

fn load_config_file(path: &Path) -> Result<TrainConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let config = match value.get("source_revision") {
        Some(_) => value.get("config").cloned().unwrap_or_default(),
        None => value,
    };
    serde_json::from_value(config).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(path) => load_config_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lambda {
        c.lambda = v;
    }
    if let Some(v) = args.delta {
        c.delta = v;
    }
    if let Some(v) = args.episodes {
        c.episodes = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.lr {
        c.lr = v;
    }
    if let Some(v) = args.bits {
        c.bits = match v {
            BitsArg::Ideal => BitsMode::Ideal,
            BitsArg::Encoded => BitsMode::Encoded,
        };
    }
    if let Some(v) = args.message_mode {
        c.message_mode = match v {
            MessageModeArg::PerStep => MessageMode::PerStep,
            MessageModeArg::PerEpisode => MessageMode::PerEpisode,
        };
    }
    if let Some(v) = args.eval_episodes {
        c.eval_episodes = v;
    }
    if let Some(path) = &args.distribution {
        c.distribution = Some(GoalDistribution::from_json_file(path)?);
    }
    c.validate()?;
    Ok(c)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("{}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn progress_printer(total: usize, quiet: bool) -> impl FnMut(usize, &train::UpdateMetrics) {
    let step = (total / 20).max(1);
    let mut next = step;
    move |done, m| {
        if quiet || done < next {
            return;
        }
        next += step;
        eprintln!(
            "episode {done:>8}/{total}  policy {:+.4}  comms {:.3}  value {:.4}",
            m.policy_loss, m.comms_cost, m.value_loss
        );
    }
}

#[derive(Serialize)]
struct RunSummary {
    lambda: f64,
    train_secs: f64,
    eval: train::EvalSummary,
    entropy_bits: f64,
    shannon_gap: f64,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = resolve_config(&args)?;
    let out = args.out.as_deref().unwrap_or(Path::new("run"));
    let started = manifest::now_unix();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let clock = Instant::now();
    let outcome = train::train_with_progress(&config, progress_printer(config.episodes, args.quiet))?;
    let train_secs = clock.elapsed().as_secs_f64();

    let mut m = RunManifest::new("train", serde_json::to_value(&config)?, config.seed, started);
    write_json(&out.join("config.json"), &config)?;
    m.add_output("config.json");
    write_csv(&out.join("metrics.csv"), &outcome.episodes)?;
    m.add_output("metrics.csv");
    write_csv(&out.join("updates.csv"), &outcome.updates)?;
    m.add_output("updates.csv");
    for (name, net) in [
        ("speaker", &outcome.policies.speaker),
        ("listener", &outcome.policies.listener),
        ("critic", &outcome.policies.critic),
    ] {
        net.save(&out.join(name))?;
        m.add_output(&format!("{name}.bin"));
        m.add_output(&format!("{name}.json"));
    }

    let records = train::evaluate(&outcome.policies, &config, config.eval_episodes)?;
    let mut w = BufWriter::new(File::create(out.join("eval.jsonl"))?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    m.add_output("eval.jsonl");

    let eval = train::summarize(&records, config.bits);
    let entropy_bits = config.goal_distribution().entropy_bits();
    let summary = RunSummary {
        lambda: config.lambda,
        train_secs,
        eval,
        entropy_bits,
        shannon_gap: eval.mean_bits_per_episode - entropy_bits,
    };
    write_json(&out.join("summary.json"), &summary)?;
    m.add_output("summary.json");
    m.write(out)?;

    println!(
        "trained {} episodes in {train_secs:.1}s; eval over {}: success {:.4}, bits/episode {:.3}, return {:.4}",
        config.episodes, eval.episodes, eval.success_rate, eval.mean_bits_per_episode, eval.mean_return
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct FrontierRow {
    lambda: f64,
    mean_bits_per_episode: Option<f64>,
    success_rate: Option<f64>,
    shannon_gap: Option<f64>,
    error: String,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let targs = &args.train;
    let base = resolve_config(targs)?;
    if args.lambdas.len() < 2 {
        return Err(usage("a sweep needs at least two lambda values"));
    }
    if let Some(bad) = args.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(usage(format!("lambda {bad} is not a finite nonnegative number")));
    }
    let out = targs.out.as_deref().unwrap_or(Path::new("sweep"));
    let started = manifest::now_unix();
    fs::create_dir_all(out)?;

    let mut rows = Vec::new();
    for &lambda in &args.lambdas {
        if !targs.quiet {
            eprintln!("λ = {lambda:e}");
        }
        let config = TrainConfig {
            lambda,
            ..base.clone()
        };
        let result = train::train_with_progress(&config, progress_printer(config.episodes, targs.quiet))
            .and_then(|o| train::evaluate(&o.policies, &config, config.eval_episodes));
        let row = match result {
            Ok(records) => {
                let s = train::summarize(&records, config.bits);
                let p = train::RateDistortionPoint::new(lambda, &s, base.goal_distribution().entropy_bits());
                FrontierRow {
                    lambda,
                    mean_bits_per_episode: Some(p.mean_bits_per_episode),
                    success_rate: Some(p.success_rate),
                    shannon_gap: Some(p.shannon_gap),
                    error: String::new(),
                }
            }
            Err(e) => FrontierRow {
                lambda,
                mean_bits_per_episode: None,
                success_rate: None,
                shannon_gap: None,
                error: e.to_string(),
            },
        };
        println!(
            "λ={:<8e} bits/episode={} success={} {}",
            row.lambda,
            row.mean_bits_per_episode.map_or("-".into(), |b| format!("{b:.3}")),
            row.success_rate.map_or("-".into(), |s| format!("{s:.4}")),
            row.error
        );
        rows.push(row);
    }

    let ok: Vec<&FrontierRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
    let lambdas: Vec<f64> = ok.iter().map(|r| r.lambda).collect();
    let bits: Vec<f64> = ok.iter().filter_map(|r| r.mean_bits_per_episode).collect();
    match analysis::spearman(&lambdas, &bits) {
        Some(rho) => println!("spearman(λ, bits) = {rho:.4}"),
        None => println!("spearman(λ, bits) undefined"),
    }

    let mut m = RunManifest::new(
        "sweep",
        serde_json::json!({ "lambdas": args.lambdas, "base": base }),
        base.seed,
        started,
    );
    write_json(&out.join("config.json"), &base)?;
    m.add_output("config.json");
    write_csv(&out.join("rd_frontier.csv"), &rows)?;
    m.add_output("rd_frontier.csv");
    m.write(out)?;
    println!("wrote {}", out.join("rd_frontier.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct PerGoalRow {
    goal_x: i32,
    goal_y: i32,
    probability: f64,
    episodes: usize,
    success_rate: f64,
    mean_bits_per_episode: f64,
    mean_bits_per_message: f64,
    mean_steps: f64,
}

/// Writes a `[y][x]` grid with a leading `y` column; `None` becomes an
/// empty cell.
fn write_grid(path: &Path, grid: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = grid.first().map_or(0, Vec::len);
    let mut header = vec!["y".to_string()];
    header.extend((0..width).map(|x| format!("x{x}")));
    w.write_record(&header)?;
    for (y, row) in grid.iter().enumerate() {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn dense(grid: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    grid.iter().map(|row| row.iter().map(|&v| Some(v)).collect()).collect()
}

pub fn read_eval(dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let path = dir.join("eval.jsonl");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let dir = &args.dir;
    if !dir.join("eval.jsonl").exists() {
        return Err(usage(format!("{} is not a train output directory", dir.display())));
    }
    let config = load_config_file(&dir.join("config.json"))?;
    let distribution = config.goal_distribution();
    let records = read_eval(dir)?;
    let a: ProtocolAnalysis = analysis::analyze_protocol(&records, &distribution, config.bits);

    let mut m = RunManifest::read(dir)?;
    let rows = a.per_goal.iter().map(|g| PerGoalRow {
        goal_x: g.goal.0,
        goal_y: g.goal.1,
        probability: g.probability,
        episodes: g.episodes,
        success_rate: g.success_rate,
        mean_bits_per_episode: g.mean_bits_per_episode,
        mean_bits_per_message: g.mean_bits_per_message,
        mean_steps: g.mean_steps,
    });
    write_csv(&dir.join("per_goal.csv"), rows)?;
    m.add_output("per_goal.csv");
    write_grid(&dir.join("heatmap_bits.csv"), &a.heatmap)?;
    m.add_output("heatmap_bits.csv");
    write_grid(
        &dir.join("heatmap_frequency.csv"),
        &dense(&analysis::frequency_heatmap(&distribution)),
    )?;
    m.add_output("heatmap_frequency.csv");

    if dir.join("speaker.bin").exists() {
        let mut policies = Policies::new(&config);
        policies.speaker = DenseNet::load(&dir.join("speaker"))?;
        let h = analysis::speaker_heatmap(&policies, config.delta, config.seed, args.samples)?;
        write_grid(&dir.join("heatmap_speaker_ideal.csv"), &dense(&h.ideal_bits))?;
        m.add_output("heatmap_speaker_ideal.csv");
        write_grid(&dir.join("heatmap_speaker_surrogate.csv"), &dense(&h.surrogate_bits))?;
        m.add_output("heatmap_speaker_surrogate.csv");
    }
    write_json(&dir.join("analysis.json"), &a)?;
    m.add_output("analysis.json");
    m.write(dir)?;

    println!("goal     p       episodes  success  bits/msg  bits/episode");
    for g in &a.per_goal {
        println!(
            "{:<8} {:<7} {:>8}  {:>7.4}  {:>8.3}  {:>12.3}",
            format!("({},{})", g.goal.0, g.goal.1),
            g.probability,
            g.episodes,
            g.success_rate,
            g.mean_bits_per_message,
            g.mean_bits_per_episode
        );
    }
    match a.frequency_bits_r {
        Some(r) => println!("pearson(frequency, bits/msg) = {r:.4}"),
        None => println!("pearson(frequency, bits/msg) undefined"),
    }
    for f in &a.flags {
        println!("flag: {f}");
    }
    Ok(())
}
