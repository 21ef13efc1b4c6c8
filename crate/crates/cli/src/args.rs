//! Value parsers and `key = value` config-file expansion.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// A comma-separated flag value, kept as one argument.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_wavelengths(s: &str) -> Result<FloatList, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => parse_list(s),
        3 => {
            let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
            let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
                return Err(format!("range {s} needs start <= end and a positive step"));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok(FloatList((0..count).map(|k| a + step * k as f64).collect()))
        }
        _ => Err(format!("expected start:end:step or a list, got {s:?}")),
    }
}

pub fn parse_list(s: &str) -> Result<FloatList, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(FloatList)
}

pub fn parse_indices(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three indices, got {s:?}"))
}

/// `row,col,height,width`.
pub fn parse_patch(s: &str) -> Result<focal_hsi::metrics::Patch, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [row, col, height, width] => Ok(focal_hsi::metrics::Patch { row, col, height, width }),
        _ => Err(format!("expected row,col,height,width, got {s:?}")),
    }
}

/// `lo:hi` or a single value.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let v = s
        .split(':')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match v[..] {
        [x] => Ok((x, x)),
        [lo, hi] => Ok((lo, hi)),
        _ => Err(format!("expected lo:hi, got {s:?}")),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", n + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices config-file entries in right after the subcommand, so flags given
/// on the command line, which come later, override them.
pub fn expand_config(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(pos) = args
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut injected = Vec::new();
    for (key, value) in parse_config(&text).with_context(|| format!("in config {}", path.display()))? {
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
