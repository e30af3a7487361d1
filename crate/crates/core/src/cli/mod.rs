//! Command-line front end.

mod config;
mod inputs;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{FileConfig, FlagConfig, PolicySpec, ResolvedConfig};
pub use manifest::{InputDigest, RunManifest};

use crate::link_scheduler::predict_stream_endtimes;
use crate::metrics::{
    cynthia_throughput, export_chrome_trace, multiplex_error_stats, saturation_bound, throughput,
    ErrorStats, ThroughputReport,
};
use crate::preprocess::{fit_overhead, preprocess, SimProfile};
use crate::sim_engine::{partition_parameters, ps_totals, Simulation, SyntheticTrace};
use crate::trace_model::load_profile;
use manifest::write_json;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SYNTRACE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "syntrace",
    version,
    about = "Predict parameter-server SGD throughput from a single-worker profile"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the linear parsing-overhead model to (size_bytes, latency_us) samples.
    FitOverhead { samples: PathBuf },
    /// Simulate one cluster configuration and report its throughput.
    Simulate {
        profile: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        sim: SimArgs,
        /// Also write a Chrome trace of the synthetic run.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulate worker counts 1..=W and tabulate predicted throughput.
    Sweep {
        profile: PathBuf,
        /// Highest worker count, as `N` or `1..N`.
        #[arg(long, value_parser = parse_worker_range)]
        workers: u32,
        #[command(flatten)]
        sim: SimArgs,
        /// Simulations run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Add a closed-form comparison column (needs --tp, --tc and --u1).
        #[arg(long, requires_all = ["tp", "tc", "u1"])]
        cynthia: bool,
        /// Seconds to process one batch.
        #[arg(long)]
        tp: Option<f64>,
        /// Seconds to transmit the model or its update.
        #[arg(long)]
        tc: Option<f64>,
        /// Single-worker network utilization in [0, 1].
        #[arg(long)]
        u1: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare predicted stream end times against measured ones.
    ValidateMultiplex {
        /// Lines of `step op start_us size_bytes measured_end_us`.
        streams: PathBuf,
        #[arg(long)]
        win: u64,
        #[arg(long)]
        bandwidth: u64,
    },
    /// Assign layers to parameter servers greedily by size.
    Partition {
        /// Lines of `[name] size_bytes` in model order.
        sizes: PathBuf,
        #[arg(long, default_value_t = 2)]
        ps: usize,
    },
    /// Simulate and write only the Chrome trace.
    ExportTrace {
        profile: PathBuf,
        output: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Clone, Args, Default)]
pub struct SimArgs {
    /// Link bandwidth in bits/s, per direction and parameter server.
    #[arg(long)]
    pub bandwidth: Option<u64>,
    #[arg(long)]
    pub ps: Option<u8>,
    /// http2[:<win_bytes>], fifo or order:<file>.
    #[arg(long = "link-policy")]
    pub link_policy: Option<PolicySpec>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Examples per step (K).
    #[arg(long = "batch-size")]
    pub batch_size: Option<u64>,
    /// TOML file with defaults for the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct OutputArgs {
    /// Directory for the JSON report and run manifest.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

fn parse_worker_range(s: &str) -> Result<u32, String> {
    let max = match s.split_once("..") {
        Some((lo, hi)) => {
            if lo != "1" {
                return Err("worker range must start at 1".into());
            }
            hi.trim_start_matches('=').parse()
        }
        None => s.parse(),
    }
    .map_err(|_| format!("bad worker range `{s}`"))?;
    if max == 0 {
        return Err("worker range must include at least one worker".into());
    }
    Ok(max)
}

/// Parses `args` (including the program name) and runs the command, writing
/// data to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli.command, out)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::FitOverhead { samples } => cmd_fit_overhead(&samples, out),
        Command::Simulate {
            profile,
            workers,
            sim,
            trace,
            output,
        } => cmd_simulate(
            &profile,
            workers,
            &sim,
            trace.as_deref(),
            output.out.as_deref(),
            out,
        ),
        Command::Sweep {
            profile,
            workers,
            sim,
            jobs,
            cynthia,
            tp,
            tc,
            u1,
            output,
        } => {
            let cynthia = if cynthia {
                Some(CynthiaInputs {
                    t_p_sec: tp.unwrap_or_default(),
                    t_c_sec: tc.unwrap_or_default(),
                    u_1: u1.unwrap_or_default(),
                })
            } else {
                None
            };
            cmd_sweep(
                &profile,
                workers as usize,
                &sim,
                jobs,
                cynthia,
                output.out.as_deref(),
                out,
            )
        }
        Command::ValidateMultiplex {
            streams,
            win,
            bandwidth,
        } => cmd_validate_multiplex(&streams, win, bandwidth, out),
        Command::Partition { sizes, ps } => cmd_partition(&sizes, ps, out),
        Command::ExportTrace {
            profile,
            output,
            workers,
            sim,
        } => cmd_export_trace(&profile, &output, workers, &sim, out),
    }
}

pub fn cmd_fit_overhead(samples: &Path, out: &mut dyn Write) -> Result<()> {
    let data = inputs::read_overhead_samples(samples)?;
    let fit = fit_overhead(&data)?;
    if fit.clamped {
        eprintln!("warning: least-squares fit was negative and has been clamped to zero");
    }
    writeln!(out, "alpha_us_per_byte: {}", fit.model.alpha_us_per_byte)?;
    writeln!(out, "beta_us: {}", fit.model.beta_us)?;
    writeln!(out, "samples: {}", data.len())?;
    writeln!(out, "clamped: {}", fit.clamped)?;
    Ok(())
}

struct Prepared {
    resolved: ResolvedConfig,
    sim_profile: SimProfile,
    inputs: Vec<InputDigest>,
}

fn prepare(profile: &Path, workers: Option<usize>, sim: &SimArgs) -> Result<Prepared> {
    let bundle =
        load_profile(profile).with_context(|| format!("loading profile {}", profile.display()))?;
    let file = match &sim.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FlagConfig {
        workers,
        bandwidth_bps: sim.bandwidth,
        num_ps: sim.ps,
        link_policy: sim.link_policy.clone(),
        steps: sim.steps,
        seed: sim.seed,
        warmup: sim.warmup,
        batch_size: sim.batch_size,
    };
    let resolved = ResolvedConfig::resolve(&flags, &file, &bundle)?;
    let sim_profile = preprocess(&bundle, resolved.bandwidth_bps)?;
    let mut inputs = vec![InputDigest::of(profile)?];
    if let Some(path) = &sim.config {
        inputs.push(InputDigest::of(path)?);
    }
    if let Some(path) = &resolved.order_file {
        inputs.push(InputDigest::of(path)?);
    }
    Ok(Prepared {
        resolved,
        sim_profile,
        inputs,
    })
}

fn run_once(
    p: &Prepared,
    workers: usize,
    seed: u64,
    record_segments: bool,
) -> Result<SyntheticTrace> {
    let cluster = p.resolved.cluster(workers, seed);
    Ok(Simulation::new(&p.sim_profile, &cluster)?
        .record_segments(record_segments)
        .run(&mut ())?)
}

fn write_report(out: &mut dyn Write, r: &ResolvedConfig, report: &ThroughputReport) -> Result<()> {
    writeln!(out, "workers: {}", report.workers)?;
    writeln!(out, "num_ps: {}", r.num_ps)?;
    writeln!(out, "bandwidth_bps: {}", r.bandwidth_bps)?;
    writeln!(out, "link_policy: {}", r.link_policy)?;
    writeln!(out, "batch_size: {}", r.batch_size)?;
    writeln!(out, "steps_per_worker: {}", r.steps)?;
    writeln!(out, "warmup_steps: {}", r.warmup)?;
    writeln!(out, "seed: {}", r.seed)?;
    writeln!(out, "steps_counted: {}", report.steps_counted)?;
    writeln!(out, "examples_per_sec: {}", report.examples_per_sec)?;
    for (w, rate) in report.per_worker_rates.iter().enumerate() {
        writeln!(out, "worker_{w}_examples_per_sec: {rate}")?;
    }
    Ok(())
}

fn out_dir(dir: Option<&Path>) -> Result<Option<&Path>> {
    if let Some(d) = dir {
        fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
    }
    Ok(dir)
}

pub fn cmd_simulate(
    profile: &Path,
    workers: Option<usize>,
    sim: &SimArgs,
    trace_path: Option<&Path>,
    out_dir_arg: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let p = prepare(profile, workers, sim)?;
    let r = &p.resolved;
    let trace = run_once(&p, r.workers, r.seed, trace_path.is_some())?;
    let report = throughput(&trace, r.batch_size, r.warmup)?;
    write_report(out, r, &report)?;
    if let Some(path) = trace_path {
        export_chrome_trace(&trace, path)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(dir) = out_dir(out_dir_arg)? {
        write_json(&dir.join("report.json"), &report)?;
        RunManifest::new("simulate", Some(r.seed), r, p.inputs.clone()).write(dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CynthiaInputs {
    pub t_p_sec: f64,
    pub t_c_sec: f64,
    pub u_1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub workers: usize,
    pub seed: u64,
    pub examples_per_sec: f64,
    pub bound_examples_per_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cynthia_examples_per_sec: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Smallest worker count within 2% of the best predicted throughput.
    pub saturation_workers: usize,
}

/// Simulates `1..=max_workers` workers; point `W` uses seed `seed + W`.
pub fn sweep(
    bundle_path: &Path,
    max_workers: usize,
    sim: &SimArgs,
    jobs: usize,
    cynthia: Option<CynthiaInputs>,
) -> Result<(SweepReport, ResolvedConfig, Vec<InputDigest>)> {
    let p = prepare(bundle_path, None, sim)?;
    let r = &p.resolved;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot start worker threads")?;
    let rates: Vec<Result<f64>> = pool.install(|| {
        (1..=max_workers)
            .into_par_iter()
            .map(|w| {
                let trace = run_once(&p, w, r.seed.wrapping_add(w as u64), false)?;
                Ok(throughput(&trace, r.batch_size, r.warmup)?.examples_per_sec)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(max_workers);
    for (i, rate) in rates.into_iter().enumerate() {
        let w = i + 1;
        rows.push(SweepRow {
            workers: w,
            seed: r.seed.wrapping_add(w as u64),
            examples_per_sec: rate?,
            bound_examples_per_sec: saturation_bound(&p.sim_profile, w, r.batch_size).min(),
            cynthia_examples_per_sec: cynthia.map(|c| {
                cynthia_throughput(w as f64, r.batch_size as f64, c.t_p_sec, c.t_c_sec, c.u_1)
            }),
        });
    }
    let best = rows
        .iter()
        .map(|row| row.examples_per_sec)
        .fold(0.0, f64::max);
    let saturation_workers = rows
        .iter()
        .find(|row| row.examples_per_sec >= 0.98 * best)
        .map_or(1, |row| row.workers);
    Ok((
        SweepReport {
            rows,
            saturation_workers,
        },
        p.resolved.clone(),
        p.inputs.clone(),
    ))
}

fn cmd_sweep(
    profile: &Path,
    max_workers: usize,
    sim: &SimArgs,
    jobs: usize,
    cynthia: Option<CynthiaInputs>,
    out_dir_arg: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let (report, resolved, inputs) = sweep(profile, max_workers, sim, jobs, cynthia)?;
    write!(
        out,
        "workers\tpredicted_examples_per_sec\tbound_examples_per_sec"
    )?;
    if cynthia.is_some() {
        write!(out, "\tcynthia_examples_per_sec")?;
    }
    writeln!(out)?;
    for row in &report.rows {
        write!(
            out,
            "{}\t{}\t{}",
            row.workers, row.examples_per_sec, row.bound_examples_per_sec
        )?;
        if let Some(c) = row.cynthia_examples_per_sec {
            write!(out, "\t{c}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "saturation_workers: {}", report.saturation_workers)?;
    if let Some(dir) = out_dir(out_dir_arg)? {
        write_json(&dir.join("sweep.json"), &report)?;
        #[derive(Serialize)]
        struct SweepConfig<'a> {
            #[serde(flatten)]
            base: &'a ResolvedConfig,
            max_workers: usize,
            jobs: usize,
            cynthia: Option<CynthiaInputs>,
        }
        let config = SweepConfig {
            base: &resolved,
            max_workers,
            jobs,
            cynthia,
        };
        RunManifest::new("sweep", Some(resolved.seed), config, inputs).write(dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamPrediction {
    pub step: String,
    pub op: String,
    pub predicted_end_us: f64,
    pub measured_end_us: f64,
}

/// Replays every step group of the measurement file and returns per-stream
/// predictions alongside the aggregate error statistics.
pub fn validate_multiplex(
    streams: &Path,
    win: u64,
    bandwidth: u64,
) -> Result<(ErrorStats, Vec<StreamPrediction>)> {
    if bandwidth == 0 {
        bail!("bandwidth must be positive");
    }
    let rows = inputs::read_measured_streams(streams)?;
    let mut groups: BTreeMap<&str, Vec<&inputs::MeasuredStream>> = BTreeMap::new();
    for row in &rows {
        groups.entry(row.group.as_str()).or_default().push(row);
    }
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    let mut detail = Vec::new();
    for (group, members) in groups {
        let starts: Vec<_> = members.iter().map(|m| m.stream.clone()).collect();
        let ends = predict_stream_endtimes(&starts, win, bandwidth)
            .with_context(|| format!("step `{group}`"))?;
        for ((op, end), m) in ends.into_iter().zip(&members) {
            let key = format!("{group}/{op}");
            predicted.push((key.clone(), end));
            measured.push((key, m.measured_end_us));
            detail.push(StreamPrediction {
                step: group.to_string(),
                op,
                predicted_end_us: end,
                measured_end_us: m.measured_end_us,
            });
        }
    }
    Ok((multiplex_error_stats(&predicted, &measured)?, detail))
}

fn cmd_validate_multiplex(
    streams: &Path,
    win: u64,
    bandwidth: u64,
    out: &mut dyn Write,
) -> Result<()> {
    let (stats, detail) = validate_multiplex(streams, win, bandwidth)?;
    writeln!(out, "step\top\tpredicted_end_us\tmeasured_end_us")?;
    for p in &detail {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.step, p.op, p.predicted_end_us, p.measured_end_us
        )?;
    }
    writeln!(out, "streams: {}", detail.len())?;
    writeln!(out, "average_error: {}", stats.average)?;
    writeln!(out, "median_error: {}", stats.median)?;
    writeln!(out, "p95_error: {}", stats.p95)?;
    writeln!(out, "max_error: {}", stats.max)?;
    Ok(())
}

fn cmd_partition(sizes: &Path, ps: usize, out: &mut dyn Write) -> Result<()> {
    if ps == 0 {
        bail!("need at least one parameter server");
    }
    let layers = inputs::read_layer_sizes(sizes)?;
    let bytes: Vec<u64> = layers.iter().map(|l| l.1).collect();
    let assignment = partition_parameters(&bytes, ps);
    writeln!(out, "layer\tsize_bytes\tps")?;
    for ((name, size), p) in layers.iter().zip(&assignment) {
        writeln!(out, "{name}\t{size}\t{p}")?;
    }
    for (i, total) in ps_totals(&bytes, &assignment, ps).iter().enumerate() {
        writeln!(out, "ps_{i}_total_bytes: {total}")?;
    }
    Ok(())
}

fn cmd_export_trace(
    profile: &Path,
    output: &Path,
    workers: Option<usize>,
    sim: &SimArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let p = prepare(profile, workers, sim)?;
    let r = &p.resolved;
    let trace = run_once(&p, r.workers, r.seed, true)?;
    export_chrome_trace(&trace, output)
        .with_context(|| format!("cannot write {}", output.display()))?;
    writeln!(out, "segments: {}", trace.events.len())?;
    writeln!(out, "steps: {}", trace.step_completions.len())?;
    writeln!(out, "trace: {}", output.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worker_ranges() {
        assert_eq!(parse_worker_range("10"), Ok(10));
        assert_eq!(parse_worker_range("1..8"), Ok(8));
        assert_eq!(parse_worker_range("1..=8"), Ok(8));
        assert!(parse_worker_range("2..8").is_err());
        assert!(parse_worker_range("0").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
