//! Plain-text inputs: whitespace- or comma-separated columns, `#` comments.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::link_scheduler::StreamStart;

fn rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            let cols = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|c| !c.is_empty())
                .map(str::to_owned)
                .collect();
            Some((i + 1, cols))
        })
        .collect())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        anyhow::anyhow!(
            "{}:{line}: cannot parse {what} from `{raw}`",
            path.display()
        )
    })
}

/// `(size_bytes, latency_us)` pairs.
pub fn read_overhead_samples(path: &Path) -> Result<Vec<(u64, f64)>> {
    rows(path)?
        .into_iter()
        .map(|(line, cols)| {
            if cols.len() != 2 {
                bail!(
                    "{}:{line}: expected `size_bytes latency_us`",
                    path.display()
                );
            }
            Ok((
                field(path, line, "size_bytes", &cols[0])?,
                field(path, line, "latency_us", &cols[1])?,
            ))
        })
        .collect()
}

/// One line per layer: `size_bytes` or `name size_bytes`.
pub fn read_layer_sizes(path: &Path) -> Result<Vec<(String, u64)>> {
    rows(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (line, cols))| match cols.as_slice() {
            [size] => Ok((format!("layer{i}"), field(path, line, "size_bytes", size)?)),
            [name, size] => Ok((name.clone(), field(path, line, "size_bytes", size)?)),
            _ => bail!("{}:{line}: expected `[name] size_bytes`", path.display()),
        })
        .collect()
}

/// Op ids, one per line.
pub fn read_order(path: &Path) -> Result<Vec<String>> {
    Ok(rows(path)?.into_iter().flat_map(|(_, cols)| cols).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredStream {
    pub group: String,
    pub stream: StreamStart,
    pub measured_end_us: f64,
}

/// `step op start_us size_bytes measured_end_us`; each step is replayed on
/// its own link.
pub fn read_measured_streams(path: &Path) -> Result<Vec<MeasuredStream>> {
    rows(path)?
        .into_iter()
        .map(|(line, cols)| {
            if cols.len() != 5 {
                bail!(
                    "{}:{line}: expected `step op start_us size_bytes measured_end_us`",
                    path.display()
                );
            }
            Ok(MeasuredStream {
                group: cols[0].clone(),
                stream: StreamStart {
                    op: cols[1].clone(),
                    start_us: field(path, line, "start_us", &cols[2])?,
                    size_bytes: field(path, line, "size_bytes", &cols[3])?,
                },
                measured_end_us: field(path, line, "measured_end_us", &cols[4])?,
            })
        })
        .collect()
}
