//! Casting scenario files. The format is described in `docs/scenario.md`.

use std::path::Path;

use caster_core::connectors::csv::parse_index;
use caster_core::views::Materialization;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
#[error("invalid scenario: {0}")]
pub struct InvalidScenario(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Sensor {
    pub channel: String,
    /// Distance from the mould along the strand.
    pub offset_mm: i64,
    /// Mean reading; defaults to a linear cooling curve in the offset.
    #[serde(default)]
    pub base: Option<f64>,
    #[serde(default = "default_unit")]
    pub unit: String,
}

fn default_unit() -> String {
    "degC".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CastingScenario {
    pub seed: u64,
    /// RFC 3339 timestamp or integer nanoseconds.
    pub start: String,
    /// Minutes.
    pub duration: f64,
    /// Seconds.
    pub sample_interval: f64,
    /// Casting speed in m/min.
    pub base_speed: f64,
    /// Relative amplitude of the speed fluctuation; 0 gives constant speed.
    pub speed_noise: f64,
    /// Amplitude of the uniform noise on sensor readings.
    #[serde(default = "default_temperature_noise")]
    pub temperature_noise: f64,
    pub sensors: Vec<Sensor>,
    pub cutter_offset: i64,
    pub billet_length: i64,
    #[serde(default = "default_step")]
    pub resample_step: i64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_materialization")]
    pub materialization: Materialization,
    #[serde(default = "default_machine")]
    pub machine: String,
    #[serde(default = "default_heat")]
    pub heat: String,
    #[serde(default = "default_series")]
    pub series: String,
    #[serde(default = "default_cut_series")]
    pub cut_series: String,
    #[serde(default = "default_view")]
    pub view: String,
    /// Billet k is named `<billetPrefix><k>`, counting from 1.
    #[serde(default = "default_billet_prefix")]
    pub billet_prefix: String,
}

fn default_temperature_noise() -> f64 {
    2.0
}
fn default_step() -> i64 {
    1000
}
fn default_batch() -> usize {
    600
}
fn default_materialization() -> Materialization {
    Materialization::Materialized
}
fn default_machine() -> String {
    "caster-1".into()
}
fn default_heat() -> String {
    "heat-1".into()
}
fn default_series() -> String {
    "strand-1".into()
}
fn default_cut_series() -> String {
    "cuts-1".into()
}
fn default_view() -> String {
    "billets".into()
}
fn default_billet_prefix() -> String {
    "billet-1-".into()
}

pub const SPEED_CHANNEL: &str = "v_c";

impl Default for CastingScenario {
    fn default() -> Self {
        let sensor =
            |channel: &str, offset_mm| Sensor { channel: channel.into(), offset_mm, base: None, unit: default_unit() };
        CastingScenario {
            seed: 1,
            start: "2026-01-01T00:00:00Z".into(),
            duration: 60.0,
            sample_interval: 1.0,
            base_speed: 2.5,
            speed_noise: 0.02,
            temperature_noise: default_temperature_noise(),
            sensors: vec![sensor("T_l", 0), sensor("T_s", 3000), sensor("Q_w", 8000)],
            cutter_offset: 50_000,
            billet_length: 12_000,
            resample_step: default_step(),
            batch_size: default_batch(),
            materialization: default_materialization(),
            machine: default_machine(),
            heat: default_heat(),
            series: default_series(),
            cut_series: default_cut_series(),
            view: default_view(),
            billet_prefix: default_billet_prefix(),
        }
    }
}

impl CastingScenario {
    pub fn load(path: &Path) -> Result<Self, InvalidScenario> {
        let text = std::fs::read_to_string(path).map_err(|e| InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| InvalidScenario(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, InvalidScenario> {
        let s: CastingScenario = toml::from_str(text).map_err(|e| InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), InvalidScenario> {
        let bad = |m: String| Err(InvalidScenario(m));
        self.start_ns()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return bad(format!("sampleInterval must be positive, got {}", self.sample_interval));
        }
        if self.interval_ns() == 0 {
            return bad("sampleInterval is below one nanosecond".into());
        }
        if !(self.base_speed >= 0.0 && self.base_speed.is_finite()) {
            return bad(format!("baseSpeed must be non-negative, got {}", self.base_speed));
        }
        if !(0.0..=1.0).contains(&self.speed_noise) {
            return bad(format!("speedNoise must lie in [0, 1], got {}", self.speed_noise));
        }
        if !(self.temperature_noise >= 0.0 && self.temperature_noise.is_finite()) {
            return bad(format!("temperatureNoise must be non-negative, got {}", self.temperature_noise));
        }
        if self.sensors.is_empty() {
            return bad("at least one sensor is required".into());
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if s.channel == SPEED_CHANNEL || s.channel.trim().is_empty() {
                return bad(format!("sensors[{i}]: channel name {:?} is reserved or empty", s.channel));
            }
            if self.sensors[..i].iter().any(|o| o.channel == s.channel) {
                return bad(format!("sensors[{i}]: channel {} repeated", s.channel));
            }
            if s.offset_mm < 0 || s.offset_mm >= self.cutter_offset {
                return bad(format!("sensors[{i}]: offsetMm must lie in [0, cutterOffset), got {}", s.offset_mm));
            }
            if s.base.is_some_and(|b| !b.is_finite()) {
                return bad(format!("sensors[{i}]: base must be finite"));
            }
        }
        if self.billet_length <= 0 {
            return bad(format!("billetLength must be positive, got {}", self.billet_length));
        }
        if self.resample_step <= 0 {
            return bad(format!("resampleStep must be positive, got {}", self.resample_step));
        }
        if self.batch_size == 0 {
            return bad("batchSize must be positive".into());
        }
        for (key, v) in [
            ("machine", &self.machine),
            ("heat", &self.heat),
            ("series", &self.series),
            ("cutSeries", &self.cut_series),
            ("view", &self.view),
            ("billetPrefix", &self.billet_prefix),
        ] {
            if v.trim().is_empty() {
                return bad(format!("{key} must not be empty"));
            }
        }
        if self.series == self.cut_series {
            return bad("series and cutSeries must differ".into());
        }
        Ok(())
    }

    pub fn start_ns(&self) -> Result<i64, InvalidScenario> {
        parse_index(&self.start).ok_or_else(|| InvalidScenario(format!("start: bad timestamp {:?}", self.start)))
    }

    pub fn interval_ns(&self) -> i64 {
        (self.sample_interval * 1e9).round() as i64
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * 60.0 / self.sample_interval).round() as usize
    }

    /// Mean reading of a sensor.
    pub fn sensor_base(&self, s: &Sensor) -> f64 {
        s.base.unwrap_or(1530.0 - 0.09 * s.offset_mm as f64)
    }

    /// Complete billets past the cutter at the end of a noise-free run.
    pub fn expected_billets(&self) -> i64 {
        let cast = (self.base_speed * self.duration * 1000.0).floor() as i64;
        ((cast - self.cutter_offset) / self.billet_length).max(0)
    }

    /// Mould-to-cutter travel time in minutes at base speed.
    pub fn travel_minutes(&self) -> f64 {
        self.cutter_offset as f64 / 1000.0 / self.base_speed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_line() {
        let s = CastingScenario::default();
        s.validate().unwrap();
        assert_eq!(s.sample_count(), 3600);
        assert_eq!(s.expected_billets(), 8);
        assert!((s.travel_minutes() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn bundled_scenario_parses() {
        let text = include_str!("../../../scenarios/default.toml");
        assert_eq!(CastingScenario::parse(text).unwrap(), CastingScenario::default());
    }

    #[test]
    fn rejects_bad_fields() {
        let base = toml::to_string(&CastingScenario::default()).unwrap();
        assert!(CastingScenario::parse(&base).is_ok());
        for (from, to, needle) in [
            ("billetLength = 12000", "billetLength = 0", "billetLength"),
            ("speedNoise = 0.02", "speedNoise = 2.0", "speedNoise"),
            ("offsetMm = 8000", "offsetMm = 60000", "sensors[2]"),
            ("start = \"2026-01-01T00:00:00Z\"", "start = \"yesterday\"", "start"),
        ] {
            assert!(base.contains(from), "{from}");
            let e = CastingScenario::parse(&base.replace(from, to)).unwrap_err();
            assert!(e.0.contains(needle), "{e}");
        }
        let e = CastingScenario::parse(&format!("{base}\nextra = 1\n")).unwrap_err();
        assert!(e.0.contains("extra"), "{e}");
    }
}
