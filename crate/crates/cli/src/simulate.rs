//! `frb simulate`: run the protocol from a configuration file.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use frb_core::rb_engine::{run_protocol, RBDataset};

use crate::config::{self, ShotsConfig};
use crate::output::{emit, input, CliResult, Meta};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Per-(λ, m) estimates as CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Raw shot log, one JSON record per line.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    /// Overrides the shot count with single-shot sampling.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Overrides the configured seed; `FRB_SEED` takes precedence over the file.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn seed_from_env() -> CliResult<Option<u64>> {
    match std::env::var("FRB_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| input(format!("FRB_SEED: {s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn csv_bytes(meta: &Meta, ds: &RBDataset) -> CliResult<Vec<u8>> {
    let mut buf = meta.csv_header().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for e in ds.estimates() {
            w.serialize(&e).map_err(|e| input(e.to_string()))?;
        }
        w.flush().map_err(|e| input(e.to_string()))?;
    }
    Ok(buf)
}

fn jsonl_bytes<T: Serialize>(meta: &Meta, records: &[T]) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec(meta).map_err(|e| input(e.to_string()))?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| input(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = config::load(&args.config)?;
    if let Some(n) = args.shots {
        cfg.shots = ShotsConfig::Single(n);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = seed_from_env()? {
        cfg.seed = s;
    }
    let csv_path = args.out.clone().or_else(|| cfg.output.csv.clone());
    let jsonl_path = args.jsonl.clone().or_else(|| cfg.output.jsonl.clone());
    let mut exp = cfg.build()?;
    exp.protocol.keep_records = jsonl_path.is_some();
    let mut ds = run_protocol(&exp.ensemble, &exp.noise, &exp.spam, &exp.filters, &exp.protocol)?;
    ds.config_hash = Some(exp.hash.clone());
    let meta = Meta::new(exp.hash);
    emit(csv_path.as_deref(), &csv_bytes(&meta, &ds)?)?;
    if let Some(p) = jsonl_path {
        emit(Some(&p), &jsonl_bytes(&meta, &ds.records)?)?;
    }
    Ok(())
}
