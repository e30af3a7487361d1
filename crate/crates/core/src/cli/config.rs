//! Run configuration. Precedence: command-line flags, then the config file,
//! then profile metadata, then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use super::inputs::read_order;
use crate::link_scheduler::SchedulerPolicy;
use crate::metrics::{DEFAULT_STEPS, DEFAULT_WARMUP_STEPS};
use crate::sim_engine::ClusterConfig;
use crate::trace_model::ProfileBundle;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    /// Window from the flag, or from profile metadata when absent.
    Http2(Option<u64>),
    Fifo,
    Order(PathBuf),
}

impl std::str::FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http2" => Ok(PolicySpec::Http2(None)),
            "fifo" => Ok(PolicySpec::Fifo),
            _ => {
                if let Some(win) = s.strip_prefix("http2:") {
                    let win: u64 = win
                        .parse()
                        .map_err(|_| format!("bad window in `{s}`, expected http2:<win_bytes>"))?;
                    if win == 0 {
                        return Err("flow-control window must be positive".into());
                    }
                    Ok(PolicySpec::Http2(Some(win)))
                } else if let Some(file) = s.strip_prefix("order:") {
                    Ok(PolicySpec::Order(PathBuf::from(file)))
                } else {
                    Err(format!(
                        "unknown link policy `{s}`; use http2[:<win_bytes>], fifo or order:<file>"
                    ))
                }
            }
        }
    }
}

/// Optional settings from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workers: Option<usize>,
    pub bandwidth_bps: Option<u64>,
    pub num_ps: Option<u8>,
    pub link_policy: Option<String>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub warmup: Option<usize>,
    pub batch_size: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FlagConfig {
    pub workers: Option<usize>,
    pub bandwidth_bps: Option<u64>,
    pub num_ps: Option<u8>,
    pub link_policy: Option<PolicySpec>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub warmup: Option<usize>,
    pub batch_size: Option<u64>,
}

/// Fully resolved parameters, echoed into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub workers: usize,
    pub bandwidth_bps: u64,
    pub num_ps: u8,
    pub link_policy: String,
    pub steps: usize,
    pub seed: u64,
    pub warmup: usize,
    pub batch_size: u64,
    #[serde(skip)]
    pub policy: SchedulerPolicy,
    #[serde(skip)]
    pub order_file: Option<PathBuf>,
}

impl ResolvedConfig {
    pub fn resolve(flags: &FlagConfig, file: &FileConfig, profile: &ProfileBundle) -> Result<Self> {
        let spec = match (&flags.link_policy, &file.link_policy) {
            (Some(p), _) => p.clone(),
            (None, Some(s)) => s.parse().map_err(anyhow::Error::msg)?,
            (None, None) => PolicySpec::Http2(None),
        };
        let (policy, link_policy, order_file) = match spec {
            PolicySpec::Http2(win) => {
                let win = win.unwrap_or(profile.win_bytes);
                (SchedulerPolicy::http2(win)?, format!("http2:{win}"), None)
            }
            PolicySpec::Fifo => (SchedulerPolicy::WholeStreamFifo, "fifo".to_string(), None),
            PolicySpec::Order(path) => {
                let ids = read_order(&path)?;
                (
                    SchedulerPolicy::enforced_order(ids)
                        .with_context(|| format!("invalid order file {}", path.display()))?,
                    format!("order:{}", path.display()),
                    Some(path),
                )
            }
        };
        let resolved = ResolvedConfig {
            workers: flags.workers.or(file.workers).unwrap_or(1),
            bandwidth_bps: flags
                .bandwidth_bps
                .or(file.bandwidth_bps)
                .unwrap_or(profile.profile_bandwidth_bps),
            num_ps: flags.num_ps.or(file.num_ps).unwrap_or(profile.num_ps),
            link_policy,
            steps: flags.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            warmup: flags.warmup.or(file.warmup).unwrap_or(DEFAULT_WARMUP_STEPS),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(1),
            policy,
            order_file,
        };
        if resolved.steps <= resolved.warmup {
            bail!(
                "{} simulated steps leave nothing after {} warmup steps",
                resolved.steps,
                resolved.warmup
            );
        }
        Ok(resolved)
    }

    pub fn cluster(&self, workers: usize, seed: u64) -> ClusterConfig {
        ClusterConfig {
            num_workers: workers,
            num_ps: self.num_ps,
            bandwidth_bps: self.bandwidth_bps,
            policy: self.policy.clone(),
            steps_per_worker: self.steps,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_model::{finalize, Operation, ResourceKind, Step};

    fn profile() -> ProfileBundle {
        finalize(ProfileBundle {
            steps: vec![Step::new(
                0,
                vec![Operation::communication("a", ResourceKind::Downlink(0), 10)],
            )],
            profile_bandwidth_bps: 1_000,
            alpha_us_per_byte: 0.0,
            beta_us: 0.0,
            win_bytes: 77,
            num_ps: 1,
        })
        .unwrap()
    }

    #[test]
    fn policy_specs() {
        assert_eq!("http2".parse(), Ok(PolicySpec::Http2(None)));
        assert_eq!("http2:5".parse(), Ok(PolicySpec::Http2(Some(5))));
        assert_eq!("fifo".parse(), Ok(PolicySpec::Fifo));
        assert_eq!("order:x.txt".parse(), Ok(PolicySpec::Order("x.txt".into())));
        assert!("http2:0".parse::<PolicySpec>().is_err());
        assert!("lifo".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn defaults_come_from_profile() {
        let r = ResolvedConfig::resolve(&FlagConfig::default(), &FileConfig::default(), &profile())
            .unwrap();
        assert_eq!(r.workers, 1);
        assert_eq!(r.bandwidth_bps, 1_000);
        assert_eq!(r.num_ps, 1);
        assert_eq!(r.link_policy, "http2:77");
        assert_eq!(r.steps, 1000);
        assert_eq!(r.warmup, 50);
    }

    #[test]
    fn flags_beat_file() {
        let file = FileConfig {
            workers: Some(3),
            seed: Some(9),
            link_policy: Some("fifo".into()),
            ..Default::default()
        };
        let flags = FlagConfig {
            workers: Some(5),
            ..Default::default()
        };
        let r = ResolvedConfig::resolve(&flags, &file, &profile()).unwrap();
        assert_eq!(r.workers, 5);
        assert_eq!(r.seed, 9);
        assert_eq!(r.policy, SchedulerPolicy::WholeStreamFifo);
    }

    #[test]
    fn warmup_must_leave_steps() {
        let flags = FlagConfig {
            steps: Some(10),
            warmup: Some(10),
            ..Default::default()
        };
        assert!(ResolvedConfig::resolve(&flags, &FileConfig::default(), &profile()).is_err());
    }
}
