use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use admelabel::config::PipelineConfig;
use admelabel::Error;

use crate::Common;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    /// Prefix the message with the file it concerns.
    pub fn in_file(mut self, path: &Path) -> Self {
        let name = path.display().to_string();
        if !self.message.contains(&name) {
            self.message = format!("{name}: {}", self.message);
        }
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            e if e.is_input_error() => EXIT_INPUT,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Config file (or defaults) with the command-line seed applied.
pub fn load_config(common: &Common) -> CmdResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Re-check the configuration after command-line overrides.
pub fn revalidate(cfg: &PipelineConfig) -> CmdResult {
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

/// Run bookkeeping written next to each primary output as `<out>.meta.json`,
/// so the output itself stays byte-identical across runs.
pub struct Meta {
    command: &'static str,
    started: f64,
    seed: u64,
}

#[derive(Serialize)]
struct MetaRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    argv: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
    outputs: Vec<String>,
    summary: T,
}

impl Meta {
    pub fn start(command: &'static str, seed: u64) -> Self {
        Meta {
            command,
            started: unix_now(),
            seed,
        }
    }

    pub fn finish<T: Serialize>(self, out: &Path, outputs: &[&Path], summary: T) -> CmdResult {
        let record = MetaRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            argv: std::env::args().collect(),
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            summary,
        };
        write_json(&meta_path(out), &record)
    }
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

/// Non-blank lines of a plain-text file.
pub fn read_lines(path: &Path) -> CmdResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// `0,1,3` or an inclusive range `0..4`.
pub fn parse_layer_list(spec: &str) -> CmdResult<Vec<usize>> {
    let bad = || Failure::usage(format!("invalid --top-n {spec:?}; expected a list like 0,1,2 or a range like 0..4"));
    let spec = spec.trim();
    let mut out: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<CmdResult<_>>()?
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layer_list("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_layer_list("0..=2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_layer_list("4, 1,1").unwrap(), vec![1, 4]);
        assert!(parse_layer_list("3..1").is_err());
        assert!(parse_layer_list("a").is_err());
    }

    #[test]
    fn meta_sits_beside_output() {
        assert_eq!(meta_path(Path::new("out/r.json")), Path::new("out/r.json.meta.json"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(Error::Config("x".into())).code(), EXIT_USAGE);
        assert_eq!(Failure::from(Error::Load("x".into())).code(), EXIT_INPUT);
        assert_eq!(Failure::from(Error::Fit("x".into())).code(), EXIT_RUNTIME);
    }
}
