//! Result store: `runs/<run_id>/manifest.json` plus CSV/JSON artifacts.
//!
//! The run id is a hash of the canonical configuration text (object keys
//! sorted), the seed, the command and the tool version, so identical runs
//! land in the same directory and rewriting them is a no-op.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;

pub const TOOL_VERSION: &str = concat!("sbmlab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Canonical JSON text of the configuration.
    pub config: String,
    pub seed: u64,
    pub tool_version: String,
    #[serde(default)]
    pub artifact_paths: Vec<ArtifactEntry>,
    /// Fields written by other tools; kept verbatim on rewrite.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A named file to be stored with a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.into(),
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| LabError::invalid("artifact", format!("cannot serialize: {e}")))?;
        text.push('\n');
        Ok(Self::new(name, text))
    }
}

/// Recursively sort object keys.
pub fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&m[k]));
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

pub fn canonical_text(v: &Value) -> String {
    serde_json::to_string(&canonicalize(v)).expect("JSON values serialize")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: &Value, seed: u64) -> Self {
        let config = canonical_text(config);
        let mut h = Sha256::new();
        for part in [command, config.as_str(), &seed.to_string(), TOOL_VERSION] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        let run_id = hex::encode(h.finalize())[..16].to_string();
        Self {
            run_id,
            command: command.to_string(),
            config,
            seed,
            tool_version: TOOL_VERSION.to_string(),
            artifact_paths: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Hash of the manifest text.
    pub fn manifest_hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "manifest.json"
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if !ok {
        return Err(LabError::invalid("artifact", format!("bad artifact name `{name}`")));
    }
    Ok(())
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        for _ in 0..200 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(DirLock(path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    std::thread::sleep(std::time::Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(LabError::Io(std::io::Error::new(
            std::io::ErrorKind::WouldBlock,
            format!("lock {} is held", path.display()),
        )))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Write the run under `root/runs/<run_id>`. The directory is assembled
/// under a temporary name and renamed into place. Writing an identical run
/// again is a no-op; a different run with the same id is a collision.
pub fn write_run(root: &Path, manifest: &RunManifest, artifacts: &[Artifact]) -> Result<PathBuf> {
    let runs = root.join("runs");
    fs::create_dir_all(&runs)?;
    let mut manifest = manifest.clone();
    manifest.artifact_paths = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        check_name(&a.name)?;
        if manifest.artifact_paths.iter().any(|e| e.path == a.name) {
            return Err(LabError::invalid("artifact", format!("duplicate artifact `{}`", a.name)));
        }
        manifest.artifact_paths.push(ArtifactEntry {
            path: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        });
    }
    let final_dir = runs.join(&manifest.run_id);
    let _lock = DirLock::acquire(runs.join(format!(".{}.lock", manifest.run_id)))?;
    if final_dir.exists() {
        let (existing, _) = read_run(&final_dir)?;
        let same = existing.config == manifest.config
            && existing.seed == manifest.seed
            && existing.command == manifest.command
            && existing.tool_version == manifest.tool_version
            && existing.artifact_paths == manifest.artifact_paths;
        if same {
            return Ok(final_dir);
        }
        return Err(LabError::CollisionError {
            run_id: manifest.run_id.clone(),
        });
    }
    let tmp = runs.join(format!(".tmp-{}-{}", manifest.run_id, std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    for a in artifacts {
        let mut f = fs::File::create(tmp.join(&a.name))?;
        f.write_all(&a.bytes)?;
        f.sync_all()?;
    }
    fs::write(tmp.join("manifest.json"), manifest.to_json())?;
    fs::rename(&tmp, &final_dir)?;
    Ok(final_dir)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Structural check of a CSV artifact: comment lines start with `#`, every
/// data row has the header's field count, and the file ends with LF.
pub fn validate_csv(bytes: &[u8]) -> std::result::Result<(), (usize, String)> {
    let text = std::str::from_utf8(bytes).map_err(|e| (e.valid_up_to(), "invalid UTF-8".to_string()))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err((text.len(), "missing final line feed (truncated?)".into()));
    }
    let mut offset = 0;
    let mut fields = None;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches('\n');
        if body.contains('\r') {
            return Err((offset, "CR line ending".into()));
        }
        if !body.starts_with('#') {
            let n = body.split(',').count();
            match fields {
                None => fields = Some(n),
                Some(m) if m != n => return Err((offset, format!("row has {n} fields, header has {m}"))),
                _ => {}
            }
        }
        offset += line.len();
    }
    Ok(())
}

/// Read a run directory and verify every artifact against the manifest.
pub fn read_run(dir: &Path) -> Result<(RunManifest, Vec<Artifact>)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| LabError::CorruptManifest {
        offset: byte_offset(&text, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let mut artifacts = Vec::new();
    for entry in &manifest.artifact_paths {
        check_name(&entry.path).map_err(|_| LabError::CorruptManifest {
            offset: text.find(&entry.path).unwrap_or(0),
            reason: format!("bad artifact path `{}`", entry.path),
        })?;
        let bytes = fs::read(dir.join(&entry.path))?;
        if bytes.len() as u64 != entry.bytes || sha256_hex(&bytes) != entry.sha256 {
            let offset = if entry.path.ends_with(".csv") {
                validate_csv(&bytes).err().map(|e| e.0)
            } else {
                None
            };
            return Err(LabError::CorruptManifest {
                offset: offset.unwrap_or_else(|| bytes.len().min(entry.bytes as usize)),
                reason: format!(
                    "artifact `{}` does not match its manifest entry ({} bytes, expected {})",
                    entry.path,
                    bytes.len(),
                    entry.bytes
                ),
            });
        }
        if entry.path.ends_with(".csv") {
            validate_csv(&bytes).map_err(|(offset, reason)| LabError::CorruptManifest {
                offset,
                reason: format!("{}: {reason}", entry.path),
            })?;
        }
        artifacts.push(Artifact {
            name: entry.path.clone(),
            bytes,
        });
    }
    Ok((manifest, artifacts))
}

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// CSV with a header row and numeric rows.
pub fn csv_table(headers: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = headers.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Two-column profile CSV: a metadata comment line, then `x,value` rows.
pub fn profile_csv(g: &GridFunction, run_id: &str) -> String {
    let mut s = format!(
        "# label={}; x_min={}; x_max={}; n_points={}; run_id={}\nx,value\n",
        g.label.replace([';', '\n', ','], " "),
        fmt_f64(g.x_min),
        fmt_f64(g.x_max),
        g.n_points(),
        run_id
    );
    for (x, v) in g.xs().zip(&g.values) {
        s.push_str(&fmt_f64(x));
        s.push(',');
        s.push_str(&fmt_f64(*v));
        s.push('\n');
    }
    s
}

/// Parse a profile CSV written by [`profile_csv`].
pub fn parse_profile_csv(text: &str) -> Result<GridFunction> {
    let bad = |offset: usize, reason: &str| LabError::CorruptManifest {
        offset,
        reason: reason.to_string(),
    };
    let mut lines = text.split_inclusive('\n');
    let meta = lines.next().ok_or_else(|| bad(0, "empty profile"))?;
    let mut label = String::new();
    let (mut x_min, mut x_max) = (None, None);
    for part in meta.trim_start_matches('#').trim().split(';') {
        if let Some((k, v)) = part.trim().split_once('=') {
            match k {
                "label" => label = v.to_string(),
                "x_min" => x_min = v.parse::<f64>().ok(),
                "x_max" => x_max = v.parse::<f64>().ok(),
                _ => {}
            }
        }
    }
    let mut offset = meta.len();
    let header = lines.next().ok_or_else(|| bad(offset, "missing column header"))?;
    offset += header.len();
    let mut values = Vec::new();
    for line in lines {
        let (_, v) = line
            .trim_end()
            .split_once(',')
            .ok_or_else(|| bad(offset, "row without two fields"))?;
        values.push(v.parse::<f64>().map_err(|_| bad(offset, "non-numeric value"))?);
        offset += line.len();
    }
    let (Some(a), Some(b)) = (x_min, x_max) else {
        return Err(bad(0, "missing grid metadata"));
    };
    GridFunction::new(a, b, values, label)
}
