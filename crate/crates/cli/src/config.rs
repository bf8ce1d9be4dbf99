//! `--config FILE`: a JSON object whose keys are flag names.
//!
//! Top-level keys are flags of the invoked subcommand (or the globals
//! `seed` / `threads`); an object under a subcommand's name applies only to
//! that subcommand. Values are spliced into argv ahead of the user's own
//! flags, so anything given on the command line wins.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

const GLOBALS: [&str; 2] = ["seed", "threads"];
const VALUED_GLOBALS: [&str; 3] = ["--seed", "--threads", "--config"];

/// Converts one JSON entry to flags. `false` and `null` produce nothing.
fn to_flags(key: &str, v: &Value) -> Result<Vec<OsString>, String> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("config key {key:?}: unsupported value {other}")),
    };
    Ok(match v {
        Value::Null | Value::Bool(false) => vec![],
        Value::Bool(true) => vec![flag.into()],
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            vec![format!("{flag}={}", parts.join(",")).into()]
        }
        Value::Object(_) => return Err(format!("config key {key:?}: nested objects are only allowed under a subcommand name")),
        v => vec![format!("{flag}={}", scalar(v)?).into()],
    })
}

/// Flags for the globals and for `subcommand`, split so each group can be
/// placed where clap expects it.
pub fn config_flags(cfg: &Map<String, Value>, subcommand: &str, subcommands: &[&str]) -> Result<(Vec<OsString>, Vec<OsString>), String> {
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (k, v) in cfg {
        if k == subcommand {
            let Value::Object(section) = v else {
                return Err(format!("config key {k:?} must be an object"));
            };
            for (k2, v2) in section {
                local.extend(to_flags(k2, v2)?);
            }
        } else if subcommands.contains(&k.as_str()) {
            // another subcommand's section
        } else if GLOBALS.contains(&k.as_str()) {
            global.extend(to_flags(k, v)?);
        } else {
            local.extend(to_flags(k, v)?);
        }
    }
    Ok((global, local))
}

pub fn read_config(path: &Path) -> Result<Map<String, Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(format!("{}: config must be a JSON object", path.display())),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

/// The `--config` path and the subcommand name, when both are present.
pub fn prescan<'a>(argv: &[OsString], subcommands: &[&'a str]) -> Option<(PathBuf, &'a str)> {
    let mut path = None;
    let mut name = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if VALUED_GLOBALS.contains(&a.as_ref()) {
            i += 2;
            continue;
        } else if name.is_none() {
            name = subcommands.iter().find(|s| **s == a).copied();
        }
        i += 1;
    }
    Some((path?, name?))
}

/// Inserts config flags into `argv`: globals right after the program name,
/// subcommand flags right after the subcommand token.
pub fn splice(argv: &[OsString], subcommand: &str, global: Vec<OsString>, local: Vec<OsString>) -> Vec<OsString> {
    let pos = (1..argv.len())
        .find(|&i| argv[i] == subcommand && !VALUED_GLOBALS.iter().any(|g| argv[i - 1] == *g))
        .unwrap_or(argv.len().saturating_sub(1));
    let mut out = Vec::with_capacity(argv.len() + global.len() + local.len());
    out.extend(argv.first().cloned());
    out.extend(global);
    out.extend(argv[1..=pos].iter().cloned());
    out.extend(local);
    out.extend(argv[pos + 1..].iter().cloned());
    out
}
