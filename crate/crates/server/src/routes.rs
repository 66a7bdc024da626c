use std::collections::BTreeSet;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use smstrack_core::energy::{fit_battery_model, predict_lifetime, predict_lifetime_for_schedule, BatteryModel};
use smstrack_core::engine::DeviceStatus;
use smstrack_core::events::EventLog;
use smstrack_core::gateway::{LocateJob, LoggedMessage};
use smstrack_core::ids::{DeviceId, GroupId, JobId, MessageId, ScheduleId};
use smstrack_core::pipeline::{to_csv, to_geojson, Position, TrackCursor};
use smstrack_core::registry::{Device, DevicePatch, Group, GroupPatch, NewDevice};
use smstrack_core::scheduler::{Schedule, ScheduleDraft, SchedulePatch};
use smstrack_core::store::{Namespace, StoreExt, StorePort};

use crate::error::{ApiError, Id, JsonBody, QueryArgs};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

pub const BATTERY_MODEL_KEY: &str = "battery_model";

pub fn router() -> Router<AppState> {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/devices", get(list_devices).post(create_device))
        .route("/devices/export", get(export_devices))
        .route("/devices/import", post(import_devices))
        .route("/devices/{id}", get(get_device).patch(patch_device).delete(delete_device))
        .route("/devices/{id}/locate", post(locate_now))
        .route("/devices/{id}/track", get(track))
        .route("/devices/{id}/status", get(device_status))
        .route("/groups", get(list_groups).post(create_group))
        .route("/groups/{id}", get(get_group).patch(patch_group).delete(delete_group))
        .route("/schedules", get(list_schedules).post(create_schedule))
        .route("/schedules/{id}", get(get_schedule).patch(patch_schedule).delete(delete_schedule))
        .route("/fleet/status", get(fleet_status))
        .route("/jobs", get(outstanding_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/messages", get(messages))
        .route("/models/battery", get(battery_model))
        .route("/models/battery/fit", post(fit_battery))
        .route("/models/battery/predict", post(predict))
        .route("/events", get(crate::stream::events))
        .fallback(|| async { ApiError::not_found("route") })
}

async fn healthz(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let seq = EventLog::open(s.store.clone())?.last_seq();
    Ok(Json(json!({"status": "ok", "last_event_seq": seq})))
}

// devices

async fn list_devices(State(s): State<AppState>) -> ApiResult<Json<Vec<Device>>> {
    s.engine.call(|c| c.engine.registry().devices().cloned().collect()).await.map(Json)
}

async fn create_device(State(s): State<AppState>, JsonBody(new): JsonBody<NewDevice>) -> ApiResult<(StatusCode, Json<Device>)> {
    let device = s.engine.call(move |c| c.engine.registry_mut().register_device(new)).await??;
    Ok((StatusCode::CREATED, Json(device)))
}

async fn get_device(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Device>> {
    s.engine
        .call(move |c| c.engine.registry().device(DeviceId(id)).cloned())
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format_args!("device {id}")))
}

async fn patch_device(State(s): State<AppState>, Id(id): Id, JsonBody(patch): JsonBody<DevicePatch>) -> ApiResult<Json<Device>> {
    Ok(Json(s.engine.call(move |c| c.engine.registry_mut().update_device(DeviceId(id), patch)).await??))
}

async fn delete_device(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Device>> {
    Ok(Json(s.engine.call(move |c| c.engine.registry_mut().delete_device(DeviceId(id))).await??))
}

async fn export_devices(State(s): State<AppState>) -> ApiResult<Response> {
    let text = s.engine.call(|c| c.engine.registry().export_records()).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn import_devices(State(s): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let n = s.engine.call(move |c| c.engine.registry_mut().import_records(&body)).await??;
    Ok(Json(json!({"imported": n})))
}

async fn locate_now(State(s): State<AppState>, Id(id): Id) -> ApiResult<(StatusCode, Json<LocateJob>)> {
    let job = s
        .engine
        .call(move |c| {
            let now = c.now();
            c.engine.locate_now(DeviceId(id), now)
        })
        .await??;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn device_status(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<DeviceStatus>> {
    Ok(Json(s.engine.call(move |c| c.engine.device_status(DeviceId(id))).await??))
}

async fn fleet_status(State(s): State<AppState>) -> ApiResult<Json<Vec<DeviceStatus>>> {
    Ok(Json(s.engine.call(|c| c.engine.fleet_status()).await??))
}

#[derive(Debug, Deserialize)]
struct TrackQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    format: Option<String>,
    after: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TrackBody {
    positions: Vec<Position>,
    next: Option<String>,
}

const DEFAULT_PAGE: usize = 1000;
const MAX_PAGE: usize = 10_000;

async fn track(State(s): State<AppState>, Id(id): Id, QueryArgs(q): QueryArgs<TrackQuery>) -> ApiResult<Response> {
    let from = q.from.unwrap_or(DateTime::UNIX_EPOCH);
    let to = q
        .to
        .unwrap_or_else(|| Utc.with_ymd_and_hms(9999, 12, 31, 23, 59, 59).unwrap());
    let after = q
        .after
        .as_deref()
        .map(str::parse::<TrackCursor>)
        .transpose()?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::invalid(Some("limit"), format!("must be within 1..={MAX_PAGE}")));
    }
    let format = q.format.unwrap_or_else(|| "json".into()).to_ascii_lowercase();
    let device = DeviceId(id);
    match format.as_str() {
        "json" => {
            let page = s
                .engine
                .call(move |c| c.engine.pipeline().query_page(c.engine.registry(), device, from, to, after, limit))
                .await??;
            Ok(Json(TrackBody {
                positions: page.positions,
                next: page.next.map(|c| c.to_string()),
            })
            .into_response())
        }
        "csv" | "geojson" => {
            let track = s
                .engine
                .call(move |c| c.engine.pipeline().query_track(c.engine.registry(), device, from, to))
                .await??;
            Ok(if format == "csv" {
                ([(header::CONTENT_TYPE, "text/csv")], to_csv(&track)).into_response()
            } else {
                ([(header::CONTENT_TYPE, "application/geo+json")], to_geojson(&track).to_string()).into_response()
            })
        }
        other => Err(ApiError::invalid(Some("format"), format!("unknown format {other:?}: expected json, csv or geojson"))),
    }
}

// groups

#[derive(Debug, Deserialize)]
struct NewGroup {
    name: String,
    #[serde(default)]
    members: BTreeSet<DeviceId>,
}

async fn list_groups(State(s): State<AppState>) -> ApiResult<Json<Vec<Group>>> {
    s.engine.call(|c| c.engine.registry().groups().cloned().collect()).await.map(Json)
}

async fn create_group(State(s): State<AppState>, JsonBody(g): JsonBody<NewGroup>) -> ApiResult<(StatusCode, Json<Group>)> {
    let group = s
        .engine
        .call(move |c| c.engine.registry_mut().create_group(&g.name, g.members))
        .await??;
    Ok((StatusCode::CREATED, Json(group)))
}

async fn get_group(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Group>> {
    s.engine
        .call(move |c| c.engine.registry().group(GroupId(id)).cloned())
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format_args!("group {id}")))
}

async fn patch_group(State(s): State<AppState>, Id(id): Id, JsonBody(patch): JsonBody<GroupPatch>) -> ApiResult<Json<Group>> {
    Ok(Json(s.engine.call(move |c| c.engine.registry_mut().update_group(GroupId(id), patch)).await??))
}

async fn delete_group(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Group>> {
    Ok(Json(s.engine.call(move |c| c.engine.registry_mut().delete_group(GroupId(id))).await??))
}

// schedules

async fn list_schedules(State(s): State<AppState>) -> ApiResult<Json<Vec<Schedule>>> {
    s.engine.call(|c| c.engine.scheduler().schedules().cloned().collect()).await.map(Json)
}

async fn create_schedule(State(s): State<AppState>, JsonBody(draft): JsonBody<ScheduleDraft>) -> ApiResult<(StatusCode, Json<Schedule>)> {
    let schedule = s
        .engine
        .call(move |c| {
            let now = c.now();
            let (scheduler, registry) = c.engine.scheduler_mut();
            scheduler.create(&draft, registry, now)
        })
        .await??;
    Ok((StatusCode::CREATED, Json(schedule)))
}

async fn get_schedule(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Schedule>> {
    s.engine
        .call(move |c| c.engine.scheduler().get(ScheduleId(id)).cloned())
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format_args!("schedule {id}")))
}

async fn patch_schedule(State(s): State<AppState>, Id(id): Id, JsonBody(patch): JsonBody<SchedulePatch>) -> ApiResult<Json<Schedule>> {
    Ok(Json(
        s.engine
            .call(move |c| c.engine.scheduler_mut().0.update(ScheduleId(id), &patch))
            .await??,
    ))
}

async fn delete_schedule(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<Schedule>> {
    Ok(Json(s.engine.call(move |c| c.engine.scheduler_mut().0.delete(ScheduleId(id))).await??))
}

// jobs and messages

async fn outstanding_jobs(State(s): State<AppState>) -> ApiResult<Json<Vec<LocateJob>>> {
    s.engine
        .call(|c| c.engine.gateway().outstanding_jobs().cloned().collect())
        .await
        .map(Json)
}

async fn get_job(State(s): State<AppState>, Id(id): Id) -> ApiResult<Json<LocateJob>> {
    s.engine
        .call(move |c| c.engine.gateway().job(JobId(id)))
        .await??
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format_args!("job {id}")))
}

#[derive(Debug, Deserialize)]
struct MessagesQuery {
    #[serde(default)]
    after: u64,
    limit: Option<usize>,
}

async fn messages(State(s): State<AppState>, QueryArgs(q): QueryArgs<MessagesQuery>) -> ApiResult<Json<Vec<LoggedMessage>>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    Ok(Json(
        s.engine
            .call(move |c| c.engine.gateway().messages_after(MessageId(q.after), limit))
            .await??,
    ))
}

// battery model

fn current_model(store: &dyn StorePort) -> ApiResult<(BatteryModel, &'static str)> {
    Ok(match store.get_json(Namespace::Meta, BATTERY_MODEL_KEY)? {
        Some(m) => (m, "fitted"),
        None => (BatteryModel::reference(), "reference"),
    })
}

fn model_body(model: &BatteryModel, source: &str) -> Value {
    let mut v = serde_json::to_value(model).expect("serializable");
    v["source"] = json!(source);
    v
}

async fn battery_model(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let (model, source) = current_model(s.store.as_ref())?;
    Ok(Json(model_body(&model, source)))
}

#[derive(Debug, Deserialize)]
struct FitPoint {
    interval_min: f64,
    lifetime_min: f64,
}

#[derive(Debug, Deserialize)]
struct FitRequest {
    points: Vec<FitPoint>,
    capacity_mah: f64,
}

async fn fit_battery(State(s): State<AppState>, JsonBody(req): JsonBody<FitRequest>) -> ApiResult<Json<Value>> {
    let points: Vec<(f64, f64)> = req.points.iter().map(|p| (p.interval_min, p.lifetime_min)).collect();
    let model = fit_battery_model(&points, req.capacity_mah)?;
    s.store.put_json(Namespace::Meta, BATTERY_MODEL_KEY, &model)?;
    let mut body = model_body(&model, "fitted");
    body["predicted"] = points
        .iter()
        .map(|&(i, _)| json!({"interval_min": i, "lifetime_min": predict_lifetime(&model, i)}))
        .collect();
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct PredictRequest {
    interval_min: Option<f64>,
    schedule: Option<ScheduleDraft>,
    /// Start of the simulated deployment for schedule predictions.
    start: Option<DateTime<Utc>>,
}

async fn predict(State(s): State<AppState>, JsonBody(req): JsonBody<PredictRequest>) -> ApiResult<Json<Value>> {
    let (model, source) = current_model(s.store.as_ref())?;
    let minutes = match (req.interval_min, req.schedule) {
        (Some(i), None) => {
            if !(i.is_finite() && i > 0.0) {
                return Err(ApiError::invalid(Some("interval_min"), "must be a positive number of minutes"));
            }
            predict_lifetime(&model, i)
        }
        (None, Some(draft)) => {
            s.engine
                .call(move |c| {
                    let now = c.now();
                    let start = req.start.unwrap_or(now);
                    let schedule = c.engine.scheduler().build(ScheduleId(0), &draft, start)?;
                    Ok::<_, ApiError>(predict_lifetime_for_schedule(&model, &schedule, start))
                })
                .await??
        }
        _ => return Err(ApiError::invalid(None, "give exactly one of interval_min or schedule")),
    };
    Ok(Json(json!({"lifetime_min": minutes, "lifetime_hours": minutes / 60.0, "model_source": source})))
}
