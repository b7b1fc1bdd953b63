//! Session CSV + `.meta` sidecar files and dataset directories.
//!
//! CSV header is `timestamp_ms,s1,s2,s3,s4,s5,s6` with an optional trailing
//! `angle_deg` column. The sidecar shares the basename and holds `key=value`
//! lines. Numbers are written with Rust's shortest round-trip formatting, so
//! files written here reload to identical values and re-save byte-for-byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{Dataset, Placement, SensorFrame, Session, CHANNELS};

const HEADER: &str = "timestamp_ms,s1,s2,s3,s4,s5,s6";
const HEADER_TRUTH: &str = "timestamp_ms,s1,s2,s3,s4,s5,s6,angle_deg";
pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "file,eta_cm,beta_deg,user_id,motion_id";

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a session CSV and its sidecar, enforcing all session invariants.
pub fn load_session(path: &Path) -> Result<Session> {
    let text = fs::read_to_string(path)?;
    let meta = load_meta(&meta_path(path))?;
    let (frames, truth) = parse_csv(path, &text)?;
    let session = Session {
        placement: meta.placement,
        frames,
        truth,
        user_id: meta.user_id,
        motion_id: meta.motion_id,
        rate_hz: meta.rate_hz,
        config_hash: meta.config_hash,
    };
    session.validate_raw()?;
    Ok(session)
}

fn parse_csv(path: &Path, text: &str) -> Result<(Vec<SensorFrame>, Option<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let with_truth = match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => false,
        Some((_, h)) if h.trim_end() == HEADER_TRUTH => true,
        Some((_, h)) => return Err(parse_err(path, 1, format!("unexpected header '{h}'"))),
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let ncols = if with_truth { CHANNELS + 2 } else { CHANNELS + 1 };
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {ncols} fields, found {}", fields.len()),
            ));
        }
        let timestamp_ms = fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(path, lineno, format!("timestamp '{}': {e}", fields[0])))?;
        let mut readings = [0.0; CHANNELS];
        for (k, r) in readings.iter_mut().enumerate() {
            let f = fields[k + 1].trim();
            *r = f
                .parse::<f64>()
                .map_err(|e| parse_err(path, lineno, format!("s{} '{f}': {e}", k + 1)))?;
        }
        if with_truth {
            let f = fields[CHANNELS + 1].trim();
            truth.push(
                f.parse::<f64>()
                    .map_err(|e| parse_err(path, lineno, format!("angle_deg '{f}': {e}")))?,
            );
        }
        frames.push(SensorFrame {
            timestamp_ms,
            readings,
        });
    }
    Ok((frames, with_truth.then_some(truth)))
}

struct Meta {
    placement: Placement,
    user_id: String,
    motion_id: String,
    rate_hz: f64,
    config_hash: Option<String>,
}

fn load_meta(path: &Path) -> Result<Meta> {
    let text = fs::read_to_string(path)?;
    let mut eta = None;
    let mut beta = None;
    let mut user_id = None;
    let mut motion_id = None;
    let mut rate_hz = None;
    let mut config_hash = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, format!("expected key=value, got '{line}'")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(path, i + 1, format!("{k}: {e}")))
        };
        match k.trim() {
            "eta_cm" => eta = Some(num(v)?),
            "beta_deg" => beta = Some(num(v)?),
            "rate_hz" => rate_hz = Some(num(v)?),
            "user_id" => user_id = Some(v.trim().to_string()),
            "motion_id" => motion_id = Some(v.trim().to_string()),
            "config_hash" => config_hash = Some(v.trim().to_string()),
            other => return Err(parse_err(path, i + 1, format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| parse_err(path, 0, format!("missing key '{k}'"));
    Ok(Meta {
        placement: Placement::new(eta.ok_or_else(|| missing("eta_cm"))?, beta.ok_or_else(|| missing("beta_deg"))?)?,
        user_id: user_id.ok_or_else(|| missing("user_id"))?,
        motion_id: motion_id.ok_or_else(|| missing("motion_id"))?,
        rate_hz: rate_hz.ok_or_else(|| missing("rate_hz"))?,
        config_hash,
    })
}

pub fn session_csv(session: &Session) -> String {
    let mut out = String::with_capacity(session.len() * 64);
    out.push_str(if session.truth.is_some() { HEADER_TRUTH } else { HEADER });
    out.push('\n');
    for (i, f) in session.frames.iter().enumerate() {
        let _ = write!(out, "{}", f.timestamp_ms);
        for r in &f.readings {
            let _ = write!(out, ",{r}");
        }
        if let Some(t) = &session.truth {
            let _ = write!(out, ",{}", t[i]);
        }
        out.push('\n');
    }
    out
}

pub fn session_meta(session: &Session) -> String {
    let mut out = format!(
        "eta_cm={}\nbeta_deg={}\nuser_id={}\nmotion_id={}\nrate_hz={}\n",
        session.placement.eta(),
        session.placement.beta(),
        session.user_id,
        session.motion_id,
        session.rate_hz
    );
    if let Some(h) = &session.config_hash {
        let _ = writeln!(out, "config_hash={h}");
    }
    out
}

/// Write `path` and its `.meta` sidecar.
pub fn save_session(session: &Session, path: &Path) -> Result<()> {
    fs::write(path, session_csv(session))?;
    fs::write(meta_path(path), session_meta(session))?;
    Ok(())
}

/// Write every session plus a manifest into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path, config_hash: Option<&str>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(manifest, "# config_hash={h}");
    }
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    let mut paths = Vec::with_capacity(dataset.sessions.len());
    for (i, s) in dataset.sessions.iter().enumerate() {
        let name = format!("session_{i:04}.csv");
        let path = dir.join(&name);
        save_session(s, &path)?;
        let _ = writeln!(
            manifest,
            "{name},{},{},{},{}",
            s.placement.eta(),
            s.placement.beta(),
            s.user_id,
            s.motion_id
        );
        paths.push(path);
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(paths)
}

/// Config hash recorded in a dataset manifest, if any.
pub fn manifest_config_hash(dir: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(|h| h.trim().to_string()))
}

/// Load every session listed in `dir/manifest.csv`, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath)?;
    let mut sessions = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != MANIFEST_HEADER {
                return Err(parse_err(&mpath, i + 1, format!("unexpected header '{line}'")));
            }
            seen_header = true;
            continue;
        }
        let file = line
            .split(',')
            .next()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| parse_err(&mpath, i + 1, "missing file name"))?;
        sessions.push(load_session(&dir.join(file))?);
    }
    Ok(Dataset::new(sessions))
}
