use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{check_rate, IqError, IqFormat};

/// Contents of the `key=value` metadata file stored next to a recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sidecar {
    pub sample_rate: f64,
    pub center_freq: f64,
    pub format: IqFormat,
}

/// `capture.cs8` -> `capture.cs8.meta`
pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

impl Sidecar {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "sample_rate={}", self.sample_rate).unwrap();
        writeln!(out, "center_freq={}", self.center_freq).unwrap();
        writeln!(out, "format={}", self.format).unwrap();
        out
    }

    /// Unknown keys are ignored; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Sidecar, IqError> {
        let mut rate = None;
        let mut center = 0.0;
        let mut format = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IqError::Sidecar(format!("expected key=value, got `{line}`")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| IqError::Sidecar(format!("bad number for {k}: `{v}`")))
            };
            match k.trim() {
                "sample_rate" => rate = Some(num(v)?),
                "center_freq" => center = num(v)?,
                "format" => format = Some(v.trim().parse()?),
                _ => {}
            }
        }
        let sample_rate = rate.ok_or_else(|| IqError::Sidecar("missing sample_rate".into()))?;
        check_rate(sample_rate)?;
        Ok(Sidecar {
            sample_rate,
            center_freq: center,
            format: format.ok_or_else(|| IqError::Sidecar("missing format".into()))?,
        })
    }
}

pub fn write_sidecar(path: &Path, meta: &Sidecar) -> Result<(), IqError> {
    std::fs::write(path, meta.render())?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, IqError> {
    Sidecar::parse(&std::fs::read_to_string(path)?)
}
