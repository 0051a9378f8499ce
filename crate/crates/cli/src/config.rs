//! Shared command arguments, group and digit loading, and the error type
//! that decides the exit code.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use carnot_gmt::group::SpecDocument;
use carnot_gmt::tiling::{build_system, build_system_unchecked, default_system, TileSystem};
use carnot_gmt::{GroupSpec, Point};
use clap::Args;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable inputs, invalid specs.
    #[error("{0}")]
    Config(String),
    /// A computation failed or a check did not pass.
    #[error("{0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io { .. } => 1,
        }
    }
}

pub fn config_err(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn numeric_err(e: impl Display) -> CliError {
    CliError::Numeric(e.to_string())
}

/// Flags every command takes.
#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// Built-in name (`heisenberg:<n>`, `euclidean:<n>`) or path to a JSON spec.
    #[arg(long, default_value = "heisenberg:1")]
    pub group: String,
    /// Root seed; every random stream is derived from it by label.
    #[arg(long)]
    pub seed: u64,
    /// Directory for the JSON report and any CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads. Reports depend on the seed and this count only.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub workers: u32,
}

/// The group as resolved, embedded in every report.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedGroup {
    pub source: String,
    pub label: String,
    pub spec: SpecDocument,
}

pub fn load_group(name_or_path: &str) -> Result<(GroupSpec, ResolvedGroup), CliError> {
    let path = Path::new(name_or_path);
    let spec = if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {name_or_path}: {e}")))?;
        GroupSpec::from_json(&text).map_err(|e| config_err(format!("{name_or_path}: {e}")))?
    } else {
        GroupSpec::named(name_or_path).map_err(config_err)?
    };
    let resolved = ResolvedGroup { source: name_or_path.to_string(), label: spec.label().to_string(), spec: spec.to_document() };
    Ok((spec, resolved))
}

/// Digits from a JSON array of coordinate arrays.
pub fn load_digits(spec: &GroupSpec, path: &Path) -> Result<Vec<Point>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: expected an array of points: {e}", path.display())))?;
    rows.into_iter().map(|r| spec.point(r).map_err(config_err)).collect()
}

/// The default system, or one built from a digit file. Digits that fail
/// validation still yield a system, so that certification can report the
/// overlap; the validation message comes back alongside.
pub fn tile_system(spec: &GroupSpec, digits: Option<&Path>) -> Result<(TileSystem, Option<String>), CliError> {
    match digits {
        None => Ok((default_system(spec).map_err(config_err)?, None)),
        Some(path) => {
            let digits = load_digits(spec, path)?;
            match build_system(spec, &digits) {
                Ok(sys) => Ok((sys, None)),
                Err(e) => Ok((build_system_unchecked(spec, &digits).map_err(config_err)?, Some(e.to_string()))),
            }
        }
    }
}

/// A level list from the command line.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Levels(pub Vec<usize>);

/// A comma list of numbers from the command line.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Floats(pub Vec<f64>);

/// `a..b`, `a..=b` (both inclusive) or a comma list.
pub fn parse_levels(s: &str) -> Result<Levels, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("not a level: {t:?}"));
    let levels = if let Some((a, b)) = s.split_once("..") {
        let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
        if hi < lo {
            return Err(format!("empty level range {s:?}"));
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if levels.is_empty() {
        return Err("no levels given".into());
    }
    Ok(Levels(levels))
}

pub fn parse_floats(s: &str) -> Result<Floats, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}"))).collect::<Result<_, _>>().map(Floats)
}

/// Points from CSV, one per row. A non-numeric first row is a header; the
/// last `dim` columns are the coordinates, so point-cloud exports with
/// `level,word` prefixes read back directly.
pub fn read_points_csv(path: &Path, dim: usize) -> Result<Vec<Point>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().rev().take(dim).rev().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(coords) if coords.len() == dim => out.push(Point::new(coords)),
            _ if i == 0 => continue,
            _ => return Err(config_err(format!("{}:{}: expected {dim} numeric coordinates", path.display(), i + 1))),
        }
    }
    Ok(out)
}
