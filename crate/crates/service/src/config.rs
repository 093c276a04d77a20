//! TOML service configuration. See `docs/config.md` for the format.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use caster_core::connectors::BindingSpec;
use caster_core::model::{Asset, MetadataScope, PolicySetting, SeriesId, SeriesReference, SeriesSchema};
use caster_core::platform::PlatformOptions;
use caster_core::store::StoreOptions;
use caster_core::views::ViewDefinition;
use caster_core::Platform;
use serde::Deserialize;
use toml::Spanned;

use crate::wire::{DEFAULT_BATCH, DOCUMENT_LIMIT};

/// Environment variable overriding `listen`.
pub const LISTEN_ENV: &str = "CASTER_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: Spanned<String>,
    /// Store and state directory; relative paths resolve against the config file. Omit to run in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Base for relative connector paths; defaults to the config file's directory.
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub views_enabled: bool,
    #[serde(default = "default_batch")]
    pub batch_size: Spanned<usize>,
    /// Seconds between maintenance runs; 0 disables the background driver.
    #[serde(default = "default_interval")]
    pub maintenance_interval_s: u64,
    /// fsync the append log before acknowledging writes.
    #[serde(default = "yes")]
    pub sync_writes: bool,
    #[serde(default)]
    pub assets: Vec<Spanned<Asset>>,
    #[serde(default)]
    pub series: Vec<Spanned<SeriesSchema>>,
    #[serde(default)]
    pub references: Vec<Spanned<SeriesReference>>,
    #[serde(default)]
    pub metadata: Vec<Spanned<MetadataDecl>>,
    #[serde(default)]
    pub policies: Vec<Spanned<PolicySetting>>,
    #[serde(default)]
    pub bindings: Vec<Spanned<BindingSpec>>,
    #[serde(default)]
    pub views: Vec<Spanned<ViewDefinition>>,
    #[serde(skip)]
    origin: Option<PathBuf>,
    #[serde(skip)]
    text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MetadataDecl {
    pub series: SeriesId,
    #[serde(flatten)]
    pub scope: MetadataScope,
    pub entries: BTreeMap<String, String>,
}

fn default_listen() -> Spanned<String> {
    Spanned::new(0..0, DEFAULT_LISTEN.to_string())
}

fn default_batch() -> Spanned<usize> {
    Spanned::new(0..0, DEFAULT_BATCH)
}

fn default_interval() -> u64 {
    60
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    /// 1-based line and column, when the error can be tied to a place in the file.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.file.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        match self.location {
            Some((l, c)) => write!(f, "{file}:{l}:{c}: {}", self.message),
            None => write!(f, "{file}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.to_path_buf()),
            location: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(&text, Some(path))
    }

    /// Parse and validate. `origin` anchors relative paths and error messages.
    pub fn parse(text: &str, origin: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError {
            file: origin.map(Path::to_path_buf),
            location: e.span().map(|s| line_col(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.origin = origin.map(Path::to_path_buf);
        cfg.text = text.to_string();
        cfg.validate()?;
        Ok(cfg)
    }

    fn error_at(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> ConfigError {
        let location = (span.end > 0).then(|| line_col(&self.text, span.start));
        ConfigError { file: self.origin.clone(), location, message: message.into() }
    }

    fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError { file: self.origin.clone(), location: None, message: message.into() }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.listen
            .get_ref()
            .parse::<SocketAddr>()
            .map_err(|e| self.error_at(self.listen.span(), format!("listen: {e}")))?;
        let b = *self.batch_size.get_ref();
        if b == 0 || b > DOCUMENT_LIMIT {
            return Err(
                self.error_at(self.batch_size.span(), format!("batch_size must be within 1..={DOCUMENT_LIMIT}"))
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            s.get_ref().validate().map_err(|e| self.error_at(s.span(), format!("series[{i}]: {e}")))?;
        }
        for (i, v) in self.views.iter().enumerate() {
            if v.get_ref().step <= 0 {
                let msg = format!("views[{i}]: resampleStep must be positive, got {}", v.get_ref().step);
                return Err(self.error_at(v.span(), msg));
            }
        }
        Ok(())
    }

    fn anchor(&self) -> PathBuf {
        self.origin.as_deref().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.anchor().join(p)
        }
    }

    /// `listen`, or `CASTER_LISTEN` when set.
    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        match std::env::var(LISTEN_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                v.trim().parse().map_err(|e| self.error(format!("{LISTEN_ENV}={v:?}: {e}")))
            }
            _ => Ok(self.listen.get_ref().parse().expect("validated")),
        }
    }

    pub fn batch_size(&self) -> usize {
        *self.batch_size.get_ref()
    }

    pub fn maintenance_interval(&self) -> Option<Duration> {
        (self.maintenance_interval_s > 0).then(|| Duration::from_secs(self.maintenance_interval_s))
    }

    pub fn platform_options(&self) -> PlatformOptions {
        PlatformOptions {
            data_dir: self.data_dir.as_deref().map(|d| self.resolve(d)),
            store: StoreOptions { sync: self.sync_writes, ..StoreOptions::default() },
            views_enabled: self.views_enabled,
            base_dir: self.base_dir.as_deref().map(|d| self.resolve(d)).unwrap_or_else(|| self.anchor()),
        }
    }

    /// Open the platform and apply every declaration. Re-applying to recovered state is a no-op.
    pub fn build_platform(&self) -> Result<Platform, ConfigError> {
        let platform = Platform::open(self.platform_options()).map_err(|e| self.error(format!("data_dir: {e}")))?;
        self.apply(&platform)?;
        Ok(platform)
    }

    pub fn apply(&self, platform: &Platform) -> Result<(), ConfigError> {
        for (i, a) in self.assets.iter().enumerate() {
            platform
                .register_asset(a.get_ref().clone())
                .map_err(|e| self.error_at(a.span(), format!("assets[{i}]: {e}")))?;
        }
        for (i, s) in self.series.iter().enumerate() {
            platform
                .define_series(s.get_ref().clone())
                .map_err(|e| self.error_at(s.span(), format!("series[{i}]: {e}")))?;
        }
        for (i, r) in self.references.iter().enumerate() {
            platform
                .attach_reference(r.get_ref().clone())
                .map_err(|e| self.error_at(r.span(), format!("references[{i}]: {e}")))?;
        }
        for (i, m) in self.metadata.iter().enumerate() {
            let d = m.get_ref();
            platform
                .set_metadata(&d.series, d.scope.clone(), d.entries.clone())
                .map_err(|e| self.error_at(m.span(), format!("metadata[{i}]: {e}")))?;
        }
        for (i, p) in self.policies.iter().enumerate() {
            let s = p.get_ref().clone();
            platform
                .set_policy(s.level, s.value)
                .map_err(|e| self.error_at(p.span(), format!("policies[{i}]: {e}")))?;
        }
        for (i, b) in self.bindings.iter().enumerate() {
            platform
                .bind_segments(b.get_ref().clone())
                .map_err(|e| self.error_at(b.span(), format!("bindings[{i}]: {e}")))?;
        }
        if platform.views_enabled() {
            for (i, v) in self.views.iter().enumerate() {
                platform
                    .define_view(v.get_ref().clone())
                    .map_err(|e| self.error_at(v.span(), format!("views[{i}]: {e}")))?;
            }
        } else if !self.views.is_empty() {
            tracing::warn!("views are disabled; ignoring {} view definitions", self.views.len());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ServiceConfig::parse("", None).unwrap();
        assert_eq!(c.listen.get_ref(), DEFAULT_LISTEN);
        assert_eq!(c.batch_size(), DEFAULT_BATCH);
        assert!(c.views_enabled);
        assert_eq!(c.maintenance_interval(), Some(Duration::from_secs(60)));
    }

    #[test]
    fn syntax_errors_carry_location() {
        let e = ServiceConfig::parse("listen = \"127.0.0.1:1\"\nbatch_size = \"ten\"\n", None).unwrap_err();
        assert_eq!(e.location, Some((2, 14)), "{e}");
        let e = ServiceConfig::parse("listen = \"127.0.0.1:1\"\nbogus = 1\n", None).unwrap_err();
        assert_eq!(e.location.map(|l| l.0), Some(2), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_entry() {
        let text = r#"
[[series]]
id = "a"
indexKind = "time"
seriesKind = "historical"
channels = [{ name = "x" }]

[[series]]
id = "b"
indexKind = "time"
seriesKind = "historical"
channels = []
"#;
        let e = ServiceConfig::parse(text, Some(Path::new("/etc/c.toml"))).unwrap_err();
        assert!(e.message.starts_with("series[1]:"), "{e}");
        assert!(matches!(e.location, Some((l, _)) if l >= 8), "{e}");
        assert!(e.to_string().starts_with("/etc/c.toml:"));
    }

    #[test]
    fn apply_errors_point_at_the_entry() {
        let text = r#"
[[references]]
assetId = "nope"
seriesId = "s"
"#;
        let c = ServiceConfig::parse(text, None).unwrap();
        let e = c.apply(&Platform::in_memory()).unwrap_err();
        assert!(e.message.contains("references[0]") && e.message.contains("nope"), "{e}");
        assert_eq!(e.location.map(|l| l.0), Some(2));
    }

    #[test]
    fn full_declarations() {
        let text = r#"
listen = "0.0.0.0:9000"
maintenance_interval_s = 0

[[assets]]
id = "caster-1"
type = "machine"

[[series]]
id = "strand"
indexKind = "time"
seriesKind = "historical"
entityType = "machine"
channels = [{ name = "v_c", unit = "m/min" }, { name = "T_l", unit = "degC", valueType = "float64" }]

[[references]]
assetId = "caster-1"
seriesId = "strand"
role = "process"

[[metadata]]
series = "strand"
scope = "segment"
range = { start = 0, end = 100 }
entries = { quality = "suspect" }

[[policies]]
level = "global"
kind = "historization"
value = true

[[policies]]
level = "type"
assetType = "machine"
kind = "rollup"
value = [{ resolution_s = 3600, functions = ["mean", "max"] }]

[[policies]]
level = "attribute"
series = "strand"
channel = "T_l"
kind = "retention"
value = 604800

[[views]]
id = "v"
sourceSeries = "strand"
speedChannel = "v_c"
offsets = [{ channel = "T_l", offsetMm = 0 }]
cutSource = { static = [{ productId = "b1", startLength = 0, endLength = 1000 }] }
resampleStep = 100
"#;
        let c = ServiceConfig::parse(text, None).unwrap();
        assert_eq!(c.maintenance_interval(), None);
        let p = Platform::in_memory();
        c.apply(&p).unwrap();
        c.apply(&p).unwrap();
        assert_eq!(p.series_schemas().len(), 1);
        let id = SeriesId::new("strand").unwrap();
        assert_eq!(p.metadata_at(&id, 5).unwrap()["quality"], "suspect");
        use caster_core::model::PolicyKind;
        assert_eq!(p.effective_policy(&id, "v_c", PolicyKind::Historization).unwrap().as_historization(), Some(true));
        assert_eq!(p.effective_policy(&id, "v_c", PolicyKind::Rollup).unwrap().as_rollup().unwrap().len(), 1);
        assert_eq!(p.views().unwrap().len(), 1);
    }

    #[test]
    fn zero_step_is_named() {
        let text = r#"
[[views]]
id = "v"
sourceSeries = "strand"
speedChannel = "v_c"
offsets = []
cutSource = { series = "cuts" }
resampleStep = 0
"#;
        let e = ServiceConfig::parse(text, None).unwrap_err();
        assert!(e.message.contains("resampleStep"), "{e}");
        assert_eq!(e.location.map(|l| l.0), Some(2));
    }

    #[test]
    fn bad_listen_is_located() {
        let e = ServiceConfig::parse("\n\nlisten = \"not an address\"\n", None).unwrap_err();
        assert_eq!(e.location, Some((3, 10)), "{e}");
    }
}
