use std::collections::BTreeMap;
use std::path::Path;

use kcl_core::kernels::KernelSpec;
use kcl_core::worlds::{load_world, BallWorldSpec};
use kcl_core::FiniteWorld;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Everything a report needs to be re-run: resolved world, kernel, weights and seed.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub world: String,
    pub kernel: String,
    pub lambda: f64,
    /// Either the user's value or "auto".
    pub delta_mode: String,
    pub delta: Option<f64>,
    pub seed: u64,
    pub output: Option<String>,
    pub format: String,
    pub params: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).expect("plain values serialize"));
        self
    }
}

/// `builtin:disjoint-balls:k=4:resolution=4`, `builtin:overlap-balls:resolution=8` or a path.
pub fn resolve_world(spec: &str) -> Result<FiniteWorld, CliError> {
    let Some(rest) = spec.strip_prefix("builtin:") else {
        if !Path::new(spec).exists() {
            return Err(CliError::Usage(format!("world file {spec} does not exist")));
        }
        return Ok(load_world(spec)?);
    };
    let mut parts = rest.split(':');
    let kind = parts.next().unwrap_or_default();
    let params = key_values(parts)?;
    let get = |key: &str, default: usize| -> Result<usize, CliError> {
        match params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::Usage(format!("{key}={v} is not a non-negative integer"))),
        }
    };
    let ball = match kind {
        "disjoint-balls" => BallWorldSpec::disjoint(get("k", 4)?, get("resolution", 4)?),
        "overlap-balls" => BallWorldSpec::overlap(get("resolution", 4)?),
        other => return Err(CliError::Usage(format!("unknown builtin world '{other}'"))),
    };
    for key in params.keys() {
        if !matches!(key.as_str(), "k" | "resolution") || (kind == "overlap-balls" && key == "k") {
            return Err(CliError::Usage(format!("builtin:{kind} does not take '{key}'")));
        }
    }
    Ok(ball.build()?)
}

/// `linear`, `quadratic` or `gaussian:sigma2=0.5`.
pub fn parse_kernel(spec: &str) -> Result<KernelSpec, CliError> {
    let mut parts = spec.split(':');
    let mut out = KernelSpec::new(parts.next().unwrap_or_default());
    for (k, v) in key_values(parts)? {
        let v: f64 = v.parse().map_err(|_| CliError::Usage(format!("kernel parameter {k}={v} is not a number")))?;
        out.params.insert(k, v);
    }
    Ok(out)
}

fn key_values<'a>(parts: impl Iterator<Item = &'a str>) -> Result<BTreeMap<String, String>, CliError> {
    parts
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::Usage(format!("expected key=value, got '{p}'")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeltaArg {
    Auto,
    Value(f64),
}

pub fn parse_delta(s: &str) -> Result<DeltaArg, String> {
    if s == "auto" {
        Ok(DeltaArg::Auto)
    } else {
        s.parse().map(DeltaArg::Value).map_err(|_| format!("expected a number or 'auto', got '{s}'"))
    }
}

/// KCL_SEED wins over `--seed`.
pub fn resolve_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var("KCL_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("KCL_SEED={v} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}
