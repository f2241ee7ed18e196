use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use drsf_core::grid::{load_network, Network};
use drsf_core::sim::EpisodeConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Bad invocation or unreadable input; maps to exit code 2.
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

/// `bus.csv,line.csv`, or the built-in 33-bus feeder when absent.
pub fn network(arg: Option<&str>) -> Result<Network> {
    let Some(arg) = arg else {
        return Ok(Network::ieee33());
    };
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let [bus, line] = parts[..] else {
        return Err(usage(format!(
            "--network expects `bus.csv,line.csv`, got `{arg}`"
        )));
    };
    load_network(bus, line).map_err(|e| usage(format!("--network: {e}")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// JSON, or TOML for `.toml` files.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn config(path: Option<&Path>) -> Result<EpisodeConfig> {
    match path {
        Some(p) => read_structured(p),
        None => Ok(EpisodeConfig::default()),
    }
}

/// An action given inline as a JSON array or as the path of a file
/// holding one.
pub fn action(arg: &str) -> Result<Vec<f64>> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        read(Path::new(arg))?
    };
    serde_json::from_str(&text).map_err(|e| usage(format!("--action: {e}")))
}

/// Output that is fully rendered before anything touches the disk.
pub struct Pending {
    path: Option<PathBuf>,
    bytes: Vec<u8>,
}

impl Pending {
    pub fn json<T: Serialize>(path: Option<PathBuf>, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Self { path, bytes })
    }

    pub fn render(
        path: Option<PathBuf>,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        f(&mut bytes)?;
        Ok(Self { path, bytes })
    }
}

/// Writes every output through a temporary file in the target directory
/// and a rename, so that a killed run leaves no truncated file behind.
/// Outputs without a path go to stdout.
pub fn commit(outputs: Vec<Pending>) -> Result<()> {
    for out in outputs {
        let Some(path) = out.path else {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&out.bytes)?;
            stdout.flush()?;
            continue;
        };
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let tmp = tempfile::NamedTempFile::new_in(&dir)
            .with_context(|| format!("temporary file in {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(&out.bytes)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
