use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use caster_core::connectors::csv::parse_index;
use caster_core::connectors::BindingSpec;
use caster_core::model::{
    Asset, AssetId, MetadataScope, PolicyKind, PolicySetting, Scalar, SeriesId, SeriesReference, SeriesSchema,
    ValueType, ViewId,
};
use caster_core::platform::ErrorClass;
use caster_core::store::{DataBatch, DataPoint, QuerySpec, StoreError};
use caster_core::views::{ProductTable, ViewDefinition};
use caster_core::{Platform, PlatformError};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::params::{parse_data_query, DataQuery, Format};
use crate::stream::{self, class_name, Pager, Target};
use crate::wire::{
    Document, ErrorBody, ErrorDetail, Footer, Header, IngestBody, ProductSummary, Record, SeriesSummary, Status,
    DOCUMENT_LIMIT,
};
use crate::AppState;

pub struct ApiError {
    status: StatusCode,
    detail: ErrorDetail,
}

impl ApiError {
    fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        ApiError {
            status: status_of(class),
            detail: ErrorDetail { class: class_name(class).into(), message: message.into() },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Invalid, message)
    }
}

pub fn status_of(c: ErrorClass) -> StatusCode {
    match c {
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Invalid => StatusCode::BAD_REQUEST,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Unanswerable => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::Unavailable => StatusCode::BAD_GATEWAY,
        ErrorClass::Disabled => StatusCode::NOT_IMPLEMENTED,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        ApiError::new(e.class(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.detail })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| Err(ApiError::new(ErrorClass::Internal, e.to_string())))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn id<T>(make: impl FnOnce(String) -> Result<T, caster_core::model::ModelError>, raw: String) -> ApiResult<T> {
    make(raw).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/assets", get(list_assets).post(create_asset))
        .route("/assets/{id}", get(get_asset))
        .route("/assets/{id}/series", get(asset_series))
        .route("/assets/{id}/data", get(asset_data))
        .route("/series", get(list_series).post(create_series))
        .route("/series/{id}", get(get_series))
        .route("/series/{id}/data", get(series_data).post(ingest))
        .route("/series/{id}/layout", get(layout))
        .route("/series/{id}/metadata", get(metadata_at).put(put_metadata))
        .route("/references", post(create_reference))
        .route("/policies", get(list_policies).put(put_policies))
        .route("/policies/effective", get(effective_policy))
        .route("/views", get(list_views).put(put_view))
        .route("/views/{id}", get(get_view))
        .route("/views/{id}/products", get(view_products))
        .route("/views/{id}/products/{pid}", get(product))
        .route("/bindings", get(list_bindings).put(put_binding))
        .route("/maintenance/run", post(run_maintenance))
        .route("/stats", get(stats))
        .route("/streams", get(list_streams))
        .route("/streams/{id}", get(stream_stats))
        .fallback(|| async { ApiError::new(ErrorClass::NotFound, "no such endpoint") })
        .with_state(state)
}

// assets and series

async fn list_assets(State(s): State<AppState>) -> Json<Vec<Asset>> {
    Json(s.platform.assets())
}

async fn create_asset(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let asset: Asset = parse_body(&body)?;
    let id = blocking(move || Ok(s.platform.register_asset(asset)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_asset(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<Asset>> {
    let id = id(AssetId::new, raw)?;
    Ok(Json(s.platform.asset(&id)?))
}

async fn asset_series(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<Value>> {
    let id = id(AssetId::new, raw)?;
    Ok(Json(serde_json::to_value(s.platform.asset_series(&id)?).expect("serializable")))
}

async fn list_series(State(s): State<AppState>) -> Json<Vec<SeriesSchema>> {
    Json(s.platform.series_schemas())
}

async fn create_series(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let schema: SeriesSchema = parse_body(&body)?;
    let id = blocking(move || Ok(s.platform.define_series(schema)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_series(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<SeriesSchema>> {
    let id = id(SeriesId::new, raw)?;
    Ok(Json(s.platform.schema(&id)?))
}

async fn layout(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<Value>> {
    let id = id(SeriesId::new, raw)?;
    let l = s.platform.store().layout(&id).map_err(PlatformError::from)?;
    Ok(Json(serde_json::to_value(l).expect("serializable")))
}

async fn create_reference(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let r: SeriesReference = parse_body(&body)?;
    blocking(move || Ok(s.platform.attach_reference(r)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "status": "ok" }))))
}

#[derive(Deserialize)]
struct AtQuery {
    at: String,
}

async fn metadata_at(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    Query(q): Query<AtQuery>,
) -> ApiResult<Json<BTreeMap<String, String>>> {
    let id = id(SeriesId::new, raw)?;
    let at = parse_index(&q.at).ok_or_else(|| ApiError::bad_request(format!("at: bad index {:?}", q.at)))?;
    Ok(Json(s.platform.metadata_at(&id, at)?))
}

#[derive(Deserialize)]
struct MetadataBody {
    #[serde(flatten)]
    scope: MetadataScope,
    entries: BTreeMap<String, String>,
}

async fn put_metadata(State(s): State<AppState>, Path(raw): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let id = id(SeriesId::new, raw)?;
    let b: MetadataBody = parse_body(&body)?;
    blocking(move || Ok(s.platform.set_metadata(&id, b.scope, b.entries)?)).await?;
    Ok(Json(json!({ "status": "ok" })))
}

// data

fn json_type(v: &Value) -> Option<ValueType> {
    match v {
        Value::Bool(_) => Some(ValueType::Bool),
        Value::Number(n) if n.is_i64() || n.is_u64() => Some(ValueType::Int64),
        Value::Number(_) => Some(ValueType::Float64),
        Value::String(_) => Some(ValueType::Text),
        _ => None,
    }
}

/// Decode an ingest body against the series schema.
pub fn decode_batch(schema: &SeriesSchema, body: IngestBody) -> Result<DataBatch, PlatformError> {
    let mut types = Vec::with_capacity(body.channels.len());
    for c in &body.channels {
        let ch = schema.channel(c).ok_or_else(|| StoreError::UnknownChannel(c.clone()))?;
        types.push((c.as_str(), ch.value_type));
    }
    let mut points = Vec::with_capacity(body.points.len());
    for (n, p) in body.points.into_iter().enumerate() {
        let index = match &p.index {
            Value::Number(x) => x.as_i64(),
            Value::String(t) => parse_index(t),
            _ => None,
        }
        .ok_or_else(|| PlatformError::Invalid(format!("points[{n}]: bad index {}", p.index)))?;
        if p.values.len() != types.len() {
            return Err(StoreError::ArityMismatch { index, expected: types.len(), found: p.values.len() }.into());
        }
        let mut values = Vec::with_capacity(types.len());
        for (v, (name, ty)) in p.values.iter().zip(&types) {
            if v.is_null() {
                values.push(None);
                continue;
            }
            let found = json_type(v)
                .ok_or_else(|| PlatformError::Invalid(format!("points[{n}]: channel {name}: unsupported value {v}")))?;
            match Scalar::from_json(v, *ty) {
                Some(Scalar::Float(f)) if !f.is_finite() => {
                    return Err(PlatformError::Invalid(format!("points[{n}]: channel {name}: non-finite value")))
                }
                Some(x) => values.push(Some(x)),
                None => return Err(StoreError::TypeMismatch { channel: name.to_string(), expected: *ty, found }.into()),
            }
        }
        points.push(DataPoint::new(index, values));
    }
    Ok(DataBatch::new(schema.id.clone(), body.channels, points))
}

async fn ingest(State(s): State<AppState>, Path(raw): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let id = id(SeriesId::new, raw)?;
    let body: IngestBody = parse_body(&body)?;
    let report = blocking(move || {
        let schema = s.platform.schema(&id)?;
        let batch = decode_batch(&schema, body)?;
        Ok(s.platform.ingest(&batch)?)
    })
    .await?;
    Ok(Json(serde_json::to_value(report).expect("serializable")))
}

fn data_query(pairs: Vec<(String, String)>, with_role: bool) -> ApiResult<DataQuery> {
    parse_data_query(&pairs, with_role).map_err(ApiError::bad_request)
}

async fn series_data(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> ApiResult<Response> {
    let id = id(SeriesId::new, raw)?;
    let q = data_query(pairs, false)?;
    serve_data(s, Target::Series(id), q).await
}

async fn asset_data(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> ApiResult<Response> {
    let asset = id(AssetId::new, raw)?;
    let q = data_query(pairs, true)?;
    let role = q.role.clone();
    serve_data(s, Target::Asset { asset, role }, q).await
}

fn ndjson(body: Body) -> Response {
    Response::builder().header(header::CONTENT_TYPE, "application/x-ndjson").body(body).expect("valid response")
}

async fn serve_data(s: AppState, target: Target, q: DataQuery) -> ApiResult<Response> {
    let spec = QuerySpec { range: q.range, channels: q.channels.clone(), page: None, aggregation: q.aggregation };
    let limit = match q.format {
        Format::Stream => q.limit,
        Format::Document => Some(q.limit.unwrap_or(DOCUMENT_LIMIT)),
    };
    let batch = match q.format {
        Format::Stream => s.batch_size,
        Format::Document => DOCUMENT_LIMIT,
    };
    let platform = s.platform.clone();
    let mut pager = Pager::new(platform.clone(), target.clone(), spec, q.cursor.clone(), limit, batch);
    let (first, pager) = blocking(move || {
        let f = pager.fetch()?;
        Ok((f, pager))
    })
    .await?;
    let series_id = match (&target, &first.reference) {
        (Target::Series(id), _) => Some(id.clone()),
        (_, Some(r)) => Some(r.series_id.clone()),
        _ => None,
    };
    let summary = series_id.and_then(|id| platform.schema(&id).ok()).map(|sc| SeriesSummary::from(&sc));
    let header = Header {
        stream: None,
        series: summary,
        product: None,
        columns: first.columns.clone(),
        query: Some(q.echo.clone()),
        plan: first.outcome_plan.clone(),
        reference: first.reference.clone(),
    };
    match q.format {
        Format::Stream => {
            let stats = s.streams.open();
            Ok(ndjson(stream::series_body(header, first, pager, stats)))
        }
        Format::Document => {
            let mut pager = pager;
            let mut points = first.points;
            let mut end = first.end;
            while end.is_none() {
                let (p, f) = blocking(move || {
                    let f = pager.fetch()?;
                    Ok((pager, f))
                })
                .await?;
                pager = p;
                points.extend(f.points);
                end = f.end;
            }
            let (status, next) = end.expect("loop ends with an end state");
            let count = points.len() as u64;
            let records = points
                .into_iter()
                .map(|p| Record::Data(crate::wire::DataRecord { index: p.index, values: p.values }))
                .collect();
            let footer = Footer { count, status, error: None, next_cursor: next.map(|c| c.as_str().to_string()) };
            Ok(Json(Document { header, records, footer }).into_response())
        }
    }
}

// views

async fn list_views(State(s): State<AppState>) -> ApiResult<Json<Vec<ViewDefinition>>> {
    Ok(Json(s.platform.views()?))
}

async fn put_view(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let def: ViewDefinition = parse_body(&body)?;
    let id = blocking(move || Ok(s.platform.define_view(def)?)).await?;
    Ok(Json(json!({ "id": id })))
}

async fn get_view(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<ViewDefinition>> {
    let id = id(ViewId::new, raw)?;
    Ok(Json(s.platform.view(&id)?))
}

async fn view_products(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<Value>> {
    let id = id(ViewId::new, raw)?;
    let products = blocking(move || Ok(s.platform.view_products(&id)?)).await?;
    Ok(Json(serde_json::to_value(products).expect("serializable")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductQuery {
    /// `view` (default: stored table when materialized) or `computed`.
    source: Option<String>,
    format: Option<String>,
}

async fn product(
    State(s): State<AppState>,
    Path((raw, pid)): Path<(String, String)>,
    Query(q): Query<ProductQuery>,
) -> ApiResult<Response> {
    let view = id(ViewId::new, raw)?;
    let product = id(AssetId::new, pid)?;
    let computed = match q.source.as_deref() {
        None | Some("view") => false,
        Some("computed") => true,
        Some(x) => return Err(ApiError::bad_request(format!("source must be view or computed, got {x:?}"))),
    };
    let document = match q.format.as_deref() {
        None | Some("stream") => false,
        Some("document") => true,
        Some(x) => return Err(ApiError::bad_request(format!("format must be stream or document, got {x:?}"))),
    };
    let platform = s.platform.clone();
    let v2 = view.clone();
    let (table, stored): (ProductTable, bool) = blocking(move || {
        if computed {
            Ok((platform.compute_view(&v2, &product)?, false))
        } else {
            Ok(platform.query_view_sourced(&v2, &product)?)
        }
    })
    .await?;
    let header = Header {
        product: Some(ProductSummary {
            view: view.to_string(),
            product_id: table.product_id.clone(),
            index_mode: table.index_mode,
            step: table.step,
            start_length: table.start_length,
            product_length: table.product_length,
            source: if stored { "stored" } else { "computed" }.into(),
        }),
        columns: table.channels.clone(),
        ..Default::default()
    };
    if document {
        let count = table.rows.len() as u64;
        let records = table.rows.into_iter().map(Record::Row).collect();
        let footer = Footer { count, status: Status::Complete, error: None, next_cursor: None };
        return Ok(Json(Document { header, records, footer }).into_response());
    }
    let stats = s.streams.open();
    Ok(ndjson(stream::rows_body(header, table.rows, s.batch_size, stats)))
}

// admin

async fn list_policies(State(s): State<AppState>) -> Json<Vec<PolicySetting>> {
    Json(s.platform.registry().policies().settings())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<PolicySetting>),
    One(PolicySetting),
}

async fn put_policies(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let settings = match parse_body::<OneOrMany>(&body) {
        Ok(OneOrMany::Many(v)) => v,
        Ok(OneOrMany::One(p)) => vec![p],
        // re-parse as a single setting for a precise message
        Err(_) => vec![parse_body::<PolicySetting>(&body)?],
    };
    let n = settings.len();
    blocking(move || {
        for (i, p) in settings.into_iter().enumerate() {
            s.platform.set_policy(p.level, p.value).map_err(|e| {
                let mut err = ApiError::from(e);
                err.detail.message = format!("policies[{i}]: {}", err.detail.message);
                err
            })?;
        }
        Ok(())
    })
    .await?;
    Ok(Json(json!({ "applied": n })))
}

#[derive(Deserialize)]
struct EffectiveQuery {
    series: String,
    channel: String,
    kind: PolicyKind,
}

async fn effective_policy(State(s): State<AppState>, Query(q): Query<EffectiveQuery>) -> ApiResult<Json<Value>> {
    let series = id(SeriesId::new, q.series)?;
    let v = s.platform.effective_policy(&series, &q.channel, q.kind)?;
    Ok(Json(serde_json::to_value(v).expect("serializable")))
}

async fn list_bindings(State(s): State<AppState>) -> Json<Vec<BindingSpec>> {
    Json(s.platform.bindings())
}

async fn put_binding(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: BindingSpec = parse_body(&body)?;
    blocking(move || Ok(s.platform.bind_segments(b)?)).await?;
    Ok(Json(json!({ "status": "ok" })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MaintenanceBody {
    now: Option<Value>,
}

pub fn now_ns() -> i64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos() as i64).unwrap_or(0)
}

async fn run_maintenance(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: MaintenanceBody =
        if body.iter().all(u8::is_ascii_whitespace) { MaintenanceBody::default() } else { parse_body(&body)? };
    let now = match b.now {
        None => now_ns(),
        Some(Value::Number(n)) => n.as_i64().ok_or_else(|| ApiError::bad_request("now: expected an integer"))?,
        Some(Value::String(t)) => {
            parse_index(&t).ok_or_else(|| ApiError::bad_request(format!("now: bad timestamp {t:?}")))?
        }
        Some(v) => return Err(ApiError::bad_request(format!("now: unsupported value {v}"))),
    };
    let platform: Arc<Platform> = s.platform.clone();
    let report = blocking(move || Ok(platform.run_maintenance(now))).await?;
    let mut v = serde_json::to_value(report).expect("serializable");
    v["now"] = json!(now);
    Ok(Json(v))
}

async fn stats(State(s): State<AppState>) -> Json<Value> {
    let st = s.platform.stats();
    Json(json!({
        "series": st.series,
        "points": st.points,
        "heapBytes": st.heap_bytes,
        "metadataBytes": s.platform.metadata_bytes(),
        "viewsEnabled": s.platform.views_enabled(),
        "batchSize": s.batch_size,
    }))
}

async fn list_streams(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.streams.all()).expect("serializable"))
}

async fn stream_stats(State(s): State<AppState>, Path(n): Path<u64>) -> ApiResult<Json<Value>> {
    let snap = s.streams.get(n).ok_or_else(|| ApiError::new(ErrorClass::NotFound, format!("stream {n} not found")))?;
    Ok(Json(serde_json::to_value(snap).expect("serializable")))
}
