//! Continuous-casting data generator.
//!
//! [`plan`] turns a scenario into the exact sequence of HTTP requests to send, so the
//! output is reproducible byte for byte; [`simulate`] sends them.

use std::fmt;

use caster_core::model::{Channel, IndexKind, SeriesId, SeriesKind, SeriesSchema, ViewId};
use caster_core::views::{
    cut_series_schema, CutSource, IndexMode, SensorOffset, ViewDefinition, CUT_END, CUT_PRODUCT, CUT_START,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::client::{encode, Client, ClientError};
use crate::scenario::{CastingScenario, InvalidScenario, SPEED_CHANNEL};

const NS_PER_MIN: f64 = 60.0e9;
/// Period of the slow oscillation on sensor readings.
const WAVE_PERIOD_NS: f64 = 600.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Setup,
    View,
    Batch(usize),
    Cut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub kind: StepKind,
    pub method: &'static str,
    pub path: String,
    pub body: String,
}

/// One simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: i64,
    pub speed: f64,
    /// Cumulative cast length in mm, unrounded.
    pub length: f64,
    pub readings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Billet {
    pub id: String,
    pub start_mm: i64,
    pub end_mm: i64,
    /// Time the cut was made.
    pub cut_at: i64,
    /// Time range of the strand series covering this billet at every sensor.
    pub from: i64,
    pub to: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub samples: Vec<Sample>,
    pub billets: Vec<Billet>,
    pub requests: Vec<Request>,
}

impl Plan {
    /// All request bodies, newline separated; equal plans give equal bytes.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.requests {
            out.extend_from_slice(r.method.as_bytes());
            out.push(b' ');
            out.extend_from_slice(r.path.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(r.body.as_bytes());
            out.push(b'\n');
        }
        out
    }
}

pub fn strand_schema(s: &CastingScenario) -> SeriesSchema {
    let mut channels = vec![Channel::float(SPEED_CHANNEL, "m/min")];
    channels.extend(s.sensors.iter().map(|x| Channel::float(x.channel.clone(), x.unit.clone())));
    let mut schema = SeriesSchema::new(id(&s.series), channels, IndexKind::Time, SeriesKind::Historical);
    schema.entity_type = Some("machine".into());
    schema
}

pub fn view_definition(s: &CastingScenario) -> ViewDefinition {
    ViewDefinition {
        id: ViewId::new(s.view.clone()).expect("validated"),
        source: id(&s.series),
        speed_channel: Some(SPEED_CHANNEL.into()),
        length_channel: None,
        offsets: s.sensors.iter().map(|x| SensorOffset::new(x.channel.clone(), x.offset_mm)).collect(),
        cut_source: CutSource::Series(id(&s.cut_series)),
        step: s.resample_step,
        index_mode: IndexMode::Position,
        materialization: s.materialization,
    }
}

fn id(s: &str) -> SeriesId {
    SeriesId::new(s).expect("validated")
}

/// Speed, length and sensor readings for every sample.
pub fn samples(s: &CastingScenario) -> Result<Vec<Sample>, InvalidScenario> {
    s.validate()?;
    let start = s.start_ns()?;
    let dt = s.interval_ns();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut wander = 0.0f64;
    let mut out: Vec<Sample> = Vec::with_capacity(s.sample_count());
    for i in 0..s.sample_count() {
        let t = start + i as i64 * dt;
        wander = (0.95 * wander + 0.3 * rng.random_range(-1.0..1.0)).clamp(-1.0, 1.0);
        let speed = (s.base_speed * (1.0 + s.speed_noise * wander)).max(0.0);
        let length = match out.last() {
            None => 0.0,
            Some(p) => p.length + (speed + p.speed) / 2.0 * ((t - p.t) as f64 / NS_PER_MIN) * 1000.0,
        };
        let phase = (t - start) as f64 / WAVE_PERIOD_NS * std::f64::consts::TAU;
        let readings = s
            .sensors
            .iter()
            .map(|x| {
                let wave = 4.0 * (phase + x.offset_mm as f64 / 1000.0).sin();
                s.sensor_base(x) + wave + s.temperature_noise * rng.random_range(-1.0..1.0)
            })
            .collect();
        out.push(Sample { t, speed, length, readings });
    }
    Ok(out)
}

/// Billets whose tail has passed the cutter, with the sample index at which each was cut.
pub fn billets(s: &CastingScenario, samples: &[Sample]) -> Vec<(usize, Billet)> {
    let far = s.sensors.iter().map(|x| x.offset_mm).max().unwrap_or(0) as f64;
    let b = s.billet_length;
    let mut out = Vec::new();
    for (i, p) in samples.iter().enumerate() {
        loop {
            let k = out.len() as i64;
            if p.length - (s.cutter_offset as f64) < ((k + 1) * b) as f64 {
                break;
            }
            let (start_mm, end_mm) = (k * b, (k + 1) * b);
            let first = samples[..=i].iter().rposition(|q| q.length <= start_mm as f64).unwrap_or(0);
            let last = samples[..=i].iter().position(|q| q.length >= end_mm as f64 + far).unwrap_or(i);
            out.push((
                i,
                Billet {
                    id: format!("{}{}", s.billet_prefix, k + 1),
                    start_mm,
                    end_mm,
                    cut_at: p.t,
                    from: samples[first].t,
                    to: samples[last].t + 1,
                },
            ));
        }
    }
    out
}

fn ingest_body(channels: &[String], rows: impl Iterator<Item = (i64, Vec<Value>)>) -> Value {
    let points: Vec<Value> = rows.map(|(index, values)| json!({"index": index, "values": values})).collect();
    json!({"channels": channels, "points": points})
}

/// The request sequence for a scenario.
pub fn plan(s: &CastingScenario) -> Result<Plan, InvalidScenario> {
    let samples = samples(s)?;
    let cuts = billets(s, &samples);
    let strand = strand_schema(s);
    let series_path = format!("/series/{}/data", encode(&s.series));
    let cuts_path = format!("/series/{}/data", encode(&s.cut_series));
    let mut requests = Vec::new();
    let mut push = |kind, method, path: &str, body: Value| {
        requests.push(Request { kind, method, path: path.to_string(), body: body.to_string() })
    };
    push(StepKind::Setup, "POST", "/series", serde_json::to_value(&strand).expect("serializable"));
    push(
        StepKind::Setup,
        "POST",
        "/series",
        serde_json::to_value(cut_series_schema(id(&s.cut_series))).expect("serializable"),
    );
    push(StepKind::Setup, "POST", "/assets", json!({"id": s.machine, "type": "machine"}));
    push(
        StepKind::Setup,
        "POST",
        "/assets",
        json!({"id": s.heat, "type": "heat", "attributes": {"machine": s.machine}}),
    );
    push(
        StepKind::Setup,
        "POST",
        "/references",
        json!({"assetId": s.machine, "seriesId": s.series, "role": "process"}),
    );
    push(
        StepKind::Setup,
        "POST",
        "/references",
        json!({"assetId": s.machine, "seriesId": s.cut_series, "role": "cuts"}),
    );
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        push(
            StepKind::Setup,
            "POST",
            "/references",
            json!({"assetId": s.heat, "seriesId": s.series, "role": "process",
                   "subrange": {"start": first.t, "end": last.t + 1}}),
        );
    }
    push(StepKind::View, "PUT", "/views", serde_json::to_value(view_definition(s)).expect("serializable"));

    let channels: Vec<String> = strand.channels.iter().map(|c| c.name.clone()).collect();
    let cut_channels: Vec<String> = [CUT_PRODUCT, CUT_START, CUT_END].map(String::from).to_vec();
    let mut next_cut = 0;
    for (n, chunk) in samples.chunks(s.batch_size).enumerate() {
        let rows = chunk.iter().map(|p| {
            let mut values = vec![json!(p.speed)];
            values.extend(p.readings.iter().map(|v| json!(v)));
            (p.t, values)
        });
        push(StepKind::Batch(chunk.len()), "POST", &series_path, ingest_body(&channels, rows));
        let posted = (n + 1) * s.batch_size;
        while next_cut < cuts.len() && cuts[next_cut].0 < posted {
            let b = &cuts[next_cut].1;
            let row = (b.cut_at, vec![json!(b.id), json!(b.start_mm), json!(b.end_mm)]);
            push(StepKind::Cut, "POST", &cuts_path, ingest_body(&cut_channels, std::iter::once(row)));
            push(
                StepKind::Setup,
                "POST",
                "/assets",
                json!({"id": b.id, "type": "billet", "attributes": {"heat": s.heat}}),
            );
            push(
                StepKind::Setup,
                "POST",
                "/references",
                json!({"assetId": b.id, "seriesId": s.series, "role": "process", "subrange": {"start": b.from, "end": b.to}}),
            );
            next_cut += 1;
        }
    }
    Ok(Plan { samples, billets: cuts.into_iter().map(|(_, b)| b).collect(), requests })
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidScenario(#[from] InvalidScenario),
    #[error(transparent)]
    ServiceUnreachable(ClientError),
    #[error(transparent)]
    Request(ClientError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimReport {
    pub points: usize,
    pub batches: usize,
    pub cuts: usize,
    pub billets: Vec<String>,
    pub view_defined: bool,
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "points posted:     {}", self.points)?;
        writeln!(f, "batches posted:    {}", self.batches)?;
        writeln!(f, "cut events posted: {}", self.cuts)?;
        write!(f, "view defined:      {}", if self.view_defined { "yes" } else { "no (views disabled)" })
    }
}

/// Post the scenario to a running service.
pub fn simulate(client: &Client, s: &CastingScenario) -> Result<SimReport, SimError> {
    let plan = plan(s)?;
    client.health().map_err(SimError::ServiceUnreachable)?;
    let mut report = SimReport { billets: plan.billets.iter().map(|b| b.id.clone()).collect(), ..Default::default() };
    for r in &plan.requests {
        let (status, body) = client.raw(r.method, &r.path, Some(&r.body)).map_err(SimError::ServiceUnreachable)?;
        if r.kind == StepKind::View && status == 501 {
            tracing::warn!("views are disabled on {}; {} not defined", client.base(), s.view);
            continue;
        }
        if !(200..300).contains(&status) {
            return Err(SimError::Request(ClientError::Status {
                method: r.method,
                path: r.path.clone(),
                status,
                body,
            }));
        }
        match r.kind {
            StepKind::Batch(n) => {
                report.batches += 1;
                report.points += n;
            }
            StepKind::Cut => report.cuts += 1,
            StepKind::View => report.view_defined = true,
            StepKind::Setup => {}
        }
    }
    Ok(report)
}
