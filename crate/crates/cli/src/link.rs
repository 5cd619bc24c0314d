//! Two-process demo: `send` quantizes and frames, `recv` rebuilds `ẑ` from
//! the frames alone plus the shared seed.
//!
//! Both sides print one JSON object per message. Reconstructions are also
//! given as the hex of their IEEE-754 bit patterns so the two outputs can
//! be compared exactly.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};

use anyhow::{Context, Result};
use clap::Args;
use ddcl::channel::{self, Signal};
use ddcl::{wire, NoiseKey};
use serde_json::json;

use crate::usage;

#[derive(Args, Debug)]
pub struct SendArgs {
    /// Shared noise seed; must match the receiver's.
    #[arg(long, env = "DDCL_SEED")]
    pub seed: u64,
    /// Receiver address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    pub addr: String,
    #[arg(long, default_value_t = 0)]
    pub edge: u32,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Number of messages; message t carries the signal at timestep t.
    #[arg(long, default_value_t = 8)]
    pub steps: u32,
    /// Signal sent at every step.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_value = "2.75,-0.4,13.1,0"
    )]
    pub z: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct RecvArgs {
    #[arg(long, env = "DDCL_SEED")]
    pub seed: u64,
    /// Address to bind; port 0 picks a free port.
    #[arg(long)]
    pub listen: String,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
}

pub fn hex_bits(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{:016x}", v.to_bits())).collect()
}

pub fn send(args: SendArgs) -> Result<()> {
    let signal = Signal::new(args.z.clone()).map_err(|e| usage(e.to_string()))?;
    let stream =
        TcpStream::connect(&args.addr).with_context(|| format!("connecting to {}", args.addr))?;
    let mut writer = BufWriter::new(stream);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for t in 0..args.steps {
        let key = NoiseKey::new(args.seed, args.edge, t, 0);
        let (m, r) = channel::channel_forward(&signal, key, args.delta)?;
        let frame = wire::encode_frame(&m, args.edge, t)?;
        writer.write_all(&frame)?;
        let line = json!({
            "edge": args.edge,
            "t": t,
            "z": signal.values(),
            "m": m.ints,
            "ideal_bits": m.ideal_bits,
            "encoded_bits": m.encoded_bits,
            "zhat": r.values,
            "zhat_bits": hex_bits(&r.values),
            "frame": hex::encode(&frame),
        });
        writeln!(out, "{line}")?;
    }
    writer.flush()?;
    writer
        .into_inner()
        .map_err(|e| e.into_error())?
        .shutdown(std::net::Shutdown::Write)?;
    Ok(())
}

pub fn recv(args: RecvArgs) -> Result<()> {
    let listener =
        TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{}", json!({ "listening": listener.local_addr()?.to_string() }))?;
    out.flush()?;

    let (stream, _) = listener.accept()?;
    let mut reader = BufReader::new(stream);
    let mut frames = 0usize;
    while let Some(f) = wire::read_frame(&mut reader)? {
        let key = NoiseKey::new(args.seed, f.edge_id, f.timestep, 0);
        let r = channel::reconstruct(&f.message, key, args.delta)?;
        let line = json!({
            "edge": f.edge_id,
            "t": f.timestep,
            "m": f.message.ints,
            "zhat": r.values,
            "zhat_bits": hex_bits(&r.values),
        });
        writeln!(out, "{line}")?;
        out.flush()?;
        frames += 1;
    }
    eprintln!("received {frames} frames");
    Ok(())
}
