//! `ddcl`: verify the channel, train and analyze speaker/listener runs, and
//! push messages through the codec or over a socket.

mod experiment;
mod link;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ddcl::codec::{self, BitString};
use ddcl::{wire, DdclError};

use crate::experiment::{AnalyzeArgs, SweepArgs, TrainArgs};
use crate::link::{RecvArgs, SendArgs};
use crate::manifest::RunManifest;

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "ddcl", version, about = "Dithered discrete channel: checks, training and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte-Carlo checks of the channel and write verify_report.json.
    Verify {
        /// 10^6 samples per distributional check instead of 10^5.
        #[arg(long)]
        full: bool,
        #[arg(long, env = "DDCL_SEED", default_value_t = 0)]
        seed: u64,
        /// Directory for verify_report.json and its manifest.
        #[arg(long, default_value = "verify_out")]
        out: PathBuf,
    },
    /// Train one speaker/listener pair and evaluate it.
    Train(TrainArgs),
    /// Train one run per λ and write rd_frontier.csv.
    Sweep(SweepArgs),
    /// Per-goal bits, frequency correlation and heatmaps for a train directory.
    Analyze(AnalyzeArgs),
    /// Print the prefix code of a list of integers.
    Encode {
        /// Comma-separated integers, e.g. 0,1,-1.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        ints: Vec<i64>,
    },
    /// Decode a bit string or a hex-encoded wire frame.
    Decode {
        /// Codewords as 0/1 characters; whitespace is ignored.
        #[arg(long, conflicts_with = "frame", required_unless_present = "frame")]
        bits: Option<String>,
        /// Number of integers to read; by default the whole string.
        #[arg(long, requires = "bits")]
        count: Option<usize>,
        /// A complete frame as hex.
        #[arg(long)]
        frame: Option<String>,
    },
    /// Quantize a signal and stream frames to a receiver.
    Send(SendArgs),
    /// Accept one sender and reconstruct every frame it sends.
    Recv(RecvArgs),
}

/// Bad input discovered after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<DdclError>() {
        Some(DdclError::InvalidConfig(_) | DdclError::Precondition(_)) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

fn verify(full: bool, seed: u64, out: PathBuf) -> Result<ExitCode> {
    let started = manifest::now_unix();
    let report = ddcl::stats::verify_suite(full, seed)?;
    for r in report.checks.iter() {
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, describe(r));
    }
    for r in report.caveats.iter() {
        println!("NOTE {}", describe(r));
    }
    println!(
        "{} checks, {} failed, {:.1}s",
        report.checks.len(),
        report.failures().count(),
        report.elapsed_secs
    );

    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("verify_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let mut m = RunManifest::new(
        "verify",
        serde_json::json!({ "full": full, "seed": seed }),
        seed,
        started,
    );
    m.add_output("verify_report.json");
    m.write(&out)?;

    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    })
}

fn describe(r: &ddcl::stats::TestReport) -> String {
    let mut s = format!("{:<22} z={:?} δ={} n={}", r.name, r.z, r.delta, r.sample_size);
    if let Some(p) = r.p_value {
        s += &format!(" p={p:.4}");
    }
    if let Some(margin) = r.margin {
        s += &format!(" margin={margin:.3e}");
    }
    if let Some(note) = &r.note {
        s += &format!(" ({note})");
    }
    s
}

fn encode(ints: &[i64]) -> Result<()> {
    let mut words = Vec::with_capacity(ints.len());
    let mut lengths = Vec::with_capacity(ints.len());
    for &m in ints {
        let bits = codec::encode_int(m).map_err(|e| usage(e.to_string()))?;
        lengths.push(bits.len());
        words.push(bits.to_string());
    }
    let ideal: Vec<f64> = ints.iter().map(|&m| codec::ideal_bit_length(m)).collect();
    println!("{}", words.join(" "));
    println!(
        "encoded lengths: {} (total {})",
        join(&lengths, |l| l.to_string()),
        lengths.iter().sum::<usize>()
    );
    println!(
        "ideal lengths: {} (total {:.4})",
        join(&ideal, |b| format!("{b:.4}")),
        ideal.iter().sum::<f64>()
    );
    Ok(())
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(" ")
}

fn decode(bits: Option<String>, count: Option<usize>, frame: Option<String>) -> Result<()> {
    if let Some(text) = frame {
        let bytes = hex::decode(text.trim()).map_err(|e| usage(format!("frame hex: {e}")))?;
        let f = wire::decode_frame(&bytes)
            .map_err(|e| anyhow::anyhow!("frame error {}: {e}", e.code()))?;
        let line = serde_json::json!({
            "edge": f.edge_id,
            "t": f.timestep,
            "m": f.message.ints,
            "ideal_bits": f.message.ideal_bits,
            "encoded_bits": f.message.encoded_bits,
        });
        println!("{line}");
        return Ok(());
    }

    let text: String = bits.unwrap_or_default().split_whitespace().collect();
    let bits = BitString::parse(&text).ok_or_else(|| usage("bits must be 0/1 characters"))?;
    let ints = match count {
        Some(n) => codec::decode_all(&bits, n)?.0,
        None => {
            let mut out = Vec::new();
            let mut cursor = 0;
            while cursor < bits.len() {
                let (m, next) = codec::decode_int(&bits, cursor)?;
                out.push(m);
                cursor = next;
            }
            out
        }
    };
    println!("{}", join(&ints, |m| m.to_string()));
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { full, seed, out } => return verify(full, seed, out),
        Command::Train(args) => experiment::train(args)?,
        Command::Sweep(args) => experiment::sweep(args)?,
        Command::Analyze(args) => experiment::analyze(args)?,
        Command::Encode { ints } => encode(&ints)?,
        Command::Decode { bits, count, frame } => decode(bits, count, frame)?,
        Command::Send(args) => link::send(args)?,
        Command::Recv(args) => link::recv(args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
