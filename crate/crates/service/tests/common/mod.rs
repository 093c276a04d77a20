#![allow(dead_code)]

use std::io::BufReader;
use std::sync::Arc;

use caster_core::model::{
    Asset, AssetId, Channel, IndexKind, IndexRange, Scalar, SeriesId, SeriesKind, SeriesReference, SeriesSchema,
};
use caster_core::model::{PolicyLevel, PolicyValue};
use caster_core::store::{DataBatch, DataPoint};
use caster_core::Platform;
use caster_service::wire::{decode_stream, Decoded};
use caster_service::BackgroundServer;
use serde_json::Value;

pub const MIN: i64 = 60_000_000_000;

pub fn sid(s: &str) -> SeriesId {
    SeriesId::new(s).unwrap()
}

pub fn aid(s: &str) -> AssetId {
    AssetId::new(s).unwrap()
}

pub struct Http {
    agent: ureq::Agent,
    pub base: String,
}

impl Http {
    pub fn new(server: &BackgroundServer) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Http { agent, base: server.url() }
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().with_config().limit(u64::MAX).read_to_string().unwrap())
    }

    pub fn get_json(&self, path: &str) -> (u16, Value) {
        let (s, body) = self.get(path);
        (s, serde_json::from_str(&body).unwrap_or(Value::Null))
    }

    /// GET a stream and decode it, checking envelope integrity.
    pub fn stream(&self, path: &str) -> Decoded {
        let r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        assert_eq!(r.status().as_u16(), 200, "GET {path}");
        decode_stream(BufReader::new(r.into_body().into_reader())).unwrap()
    }

    pub fn reader(&self, path: &str) -> (u16, BufReader<ureq::BodyReader<'static>>) {
        let r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), BufReader::new(r.into_body().into_reader()))
    }

    pub fn send(&self, method: &str, path: &str, body: &str) -> (u16, Value) {
        let url = format!("{}{path}", self.base);
        let req = match method {
            "POST" => self.agent.post(url),
            "PUT" => self.agent.put(url),
            _ => panic!("method {method}"),
        };
        let mut r = req.header("content-type", "application/json").send(body).unwrap();
        let status = r.status().as_u16();
        let text = r.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send("POST", path, &body.to_string())
    }

    pub fn put(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send("PUT", path, &body.to_string())
    }
}

pub fn floats(index: i64, vals: &[f64]) -> DataPoint {
    DataPoint::new(index, vals.iter().map(|v| Some(Scalar::Float(*v))).collect())
}

pub fn float_series(id: &str, channels: &[&str]) -> SeriesSchema {
    SeriesSchema::new(
        sid(id),
        channels.iter().map(|c| Channel::float(*c, "")).collect(),
        IndexKind::Time,
        SeriesKind::Historical,
    )
}

/// Platform with historization on globally.
pub fn platform() -> Arc<Platform> {
    let p = Platform::in_memory();
    p.set_policy(PolicyLevel::Global, PolicyValue::Historization(true)).unwrap();
    Arc::new(p)
}

pub fn load(p: &Platform, id: &str, channels: &[&str], points: Vec<DataPoint>) {
    p.define_series(float_series(id, channels)).unwrap();
    if !points.is_empty() {
        let b = DataBatch::new(sid(id), channels.iter().map(|c| c.to_string()).collect(), points);
        p.ingest(&b).unwrap();
    }
}

/// heat-7 covers the whole series, billet-7-3 and its bar nest inside.
pub fn nested_assets(p: &Platform, series: &str) {
    for (id, ty, range) in [
        ("heat-7", "heat", None),
        ("billet-7-3", "billet", Some(IndexRange::new(100, 400).unwrap())),
        ("bar-7-3-1", "bar", Some(IndexRange::new(100, 200).unwrap())),
    ] {
        p.register_asset(Asset::new(aid(id), ty)).unwrap();
        p.attach_reference(SeriesReference {
            asset_id: aid(id),
            series_id: sid(series),
            subrange: range,
            role: "process".into(),
        })
        .unwrap();
    }
}
