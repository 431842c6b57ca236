//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::report::OutputFormat;
use super::CliError;
use crate::geo::CountryCode;

/// The config file. Keys mirror the global flags; relative paths resolve
/// against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub geo: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub live: Option<bool>,
    pub origin: Option<String>,
    #[serde(default, alias = "target")]
    pub targets: Vec<String>,
    #[serde(alias = "alias-map")]
    pub alias_map: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.geo, &mut cfg.out, &mut cfg.fixtures, &mut cfg.alias_map].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Global flags as given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FlagConfig {
    pub geo: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub live: bool,
    pub origin: Option<String>,
    pub targets: Vec<String>,
    pub alias_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    Fixtures(PathBuf),
    Live,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub geo: Option<PathBuf>,
    pub alias_map: Option<PathBuf>,
    pub source: Option<InputSource>,
    pub origin: Option<CountryCode>,
    pub targets: Vec<CountryCode>,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

fn country(raw: &str, what: &str) -> Result<CountryCode, CliError> {
    let valid = raw.len() == 2 && raw.bytes().all(|b| b.is_ascii_alphabetic());
    CountryCode::new(raw)
        .filter(|_| valid)
        .ok_or_else(|| CliError::config(format!("invalid {what} country code {raw:?}")))
}

impl RunConfig {
    /// Flags win over the file, key by key. Exactly one input source may be
    /// in effect; a source flag replaces whatever the file selected.
    pub fn merge(file: FileConfig, flags: FlagConfig) -> Result<Self, CliError> {
        let source = if let Some(dir) = flags.fixtures {
            Some(InputSource::Fixtures(dir))
        } else if flags.live {
            Some(InputSource::Live)
        } else {
            match (file.fixtures, file.live.unwrap_or(false)) {
                (Some(_), true) => return Err(CliError::config("config file sets both `fixtures` and `live = true`")),
                (Some(dir), false) => Some(InputSource::Fixtures(dir)),
                (None, true) => Some(InputSource::Live),
                (None, false) => None,
            }
        };
        let origin = flags.origin.or(file.origin).map(|o| country(&o, "origin")).transpose()?;
        let raw_targets = if flags.targets.is_empty() { file.targets } else { flags.targets };
        let mut targets = raw_targets.iter().map(|t| country(t, "target")).collect::<Result<Vec<_>, _>>()?;
        targets.sort();
        targets.dedup();
        Ok(RunConfig {
            geo: flags.geo.or(file.geo),
            alias_map: flags.alias_map.or(file.alias_map),
            source,
            origin,
            targets,
            format: flags.format.or(file.format).unwrap_or_default(),
            out: flags.out.or(file.out),
        })
    }

    pub fn fixtures_dir(&self) -> Result<&Path, CliError> {
        match &self.source {
            Some(InputSource::Fixtures(dir)) => Ok(dir),
            Some(InputSource::Live) => {
                Err(CliError::config("this command reads fixtures; `--live` is not supported here"))
            }
            None => Err(CliError::config("no input source: pass `--fixtures <dir>` or `--live`")),
        }
    }

    pub fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}
