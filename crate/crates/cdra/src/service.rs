//! HTTP JSON API over the store.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cdra_core::ens::{DiagnosisUpload, EnsError, EphemeralKey};
use cdra_core::geo::{export_geojson, publish_advisory, reconstruct_path, PathError};
use cdra_core::investigation::ExposureContact;
use cdra_core::quarantine::{LocationPing, PingOutcome, QuarantineError};
use cdra_core::{
    CaseError, CdrError, DateOrder, ExportFormat, InvestigationCase, Subscriber, TestEvent, TestResult,
    TimeWindow,
};

use crate::config::Config;
use crate::ingest::{parse_cdr, CsvDialect, IngestError};
use crate::store::{Store, StoreError};

/// Local wall-clock time, matching the naive operator-local CDR clocks.
pub fn now() -> NaiveDateTime {
    chrono::Local::now().naive_local()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Io { .. } | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            StoreError::BadCaseId(_) => StatusCode::BAD_REQUEST,
            StoreError::Case(CaseError::DuplicateCase(_)) => StatusCode::CONFLICT,
            StoreError::Case(CaseError::UnknownCase(_)) => StatusCode::NOT_FOUND,
            StoreError::Case(CaseError::NotPending(_)) => StatusCode::CONFLICT,
            StoreError::Quarantine(QuarantineError::NotTagged(_)) => StatusCode::NOT_FOUND,
            StoreError::Ens(EnsError::TokenRejected | EnsError::MissingToken) => StatusCode::FORBIDDEN,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<CaseError> for ApiError {
    fn from(e: CaseError) -> Self {
        StoreError::from(e).into()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

impl From<CdrError> for ApiError {
    fn from(e: CdrError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<PathError> for ApiError {
    fn from(e: PathError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub config: Arc<Config>,
}

/// Runs store work (which syncs to disk) off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// A window given either as `"2020-05-01..2020-05-07"` or as
/// `{"start": ..., "end": ...}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Text(String),
    Exact(TimeWindow),
}

impl WindowSpec {
    fn resolve(&self) -> ApiResult<TimeWindow> {
        match self {
            WindowSpec::Text(t) => Ok(t.parse()?),
            WindowSpec::Exact(w) => Ok(*w),
        }
    }
}

fn default_window(spec: Option<&WindowSpec>, config: &Config) -> ApiResult<TimeWindow> {
    match spec {
        Some(spec) => spec.resolve(),
        None => Ok(TimeWindow::ending_at(now(), config.window_days)),
    }
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

fn dialect(day_first: Option<bool>) -> CsvDialect {
    CsvDialect {
        dates: if day_first.unwrap_or(false) {
            DateOrder::DayFirst
        } else {
            DateOrder::MonthFirst
        },
        ..CsvDialect::default()
    }
}

#[derive(Debug, Default, Deserialize)]
struct CdrUpload {
    case_id: Option<String>,
    index: Option<Subscriber>,
    patient: Option<String>,
    window: Option<WindowSpec>,
    #[serde(default)]
    csv: String,
    day_first: Option<bool>,
}

/// Reads either a JSON body with a `csv` field, or a raw CSV body with the
/// other fields in the query string.
fn cdr_upload(query: CdrUpload, headers: &HeaderMap, body: &Bytes) -> ApiResult<CdrUpload> {
    if is_json(headers) {
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
    } else {
        let csv = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("CSV body is not UTF-8"))?;
        Ok(CdrUpload { csv, ..query })
    }
}

#[derive(Debug, Deserialize)]
struct CdrQuery {
    case_id: Option<String>,
    index: Option<Subscriber>,
    patient: Option<String>,
    window: Option<String>,
    day_first: Option<bool>,
}

impl From<CdrQuery> for CdrUpload {
    fn from(q: CdrQuery) -> Self {
        CdrUpload {
            case_id: q.case_id,
            index: q.index,
            patient: q.patient,
            window: q.window.map(WindowSpec::Text),
            csv: String::new(),
            day_first: q.day_first,
        }
    }
}

async fn create_case(
    State(state): State<AppState>,
    Query(query): Query<CdrQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req = cdr_upload(query.into(), &headers, &body)?;
    let index = req.index.clone().ok_or_else(|| ApiError::bad_request("missing index"))?;
    let window = default_window(req.window.as_ref(), &state.config)?;
    let parsed = parse_cdr(req.csv.as_bytes(), &dialect(req.day_first))?;
    let diagnostics: Vec<String> = parsed.diagnostics.iter().map(|d| d.to_string()).collect();
    let store = state.store.clone();
    let case = blocking(move || {
        let at = now();
        match &req.case_id {
            Some(id) => Ok(store.open_case(id, &index, &parsed.records, window, at)?),
            None => {
                let mut n = store.case_ids().len() + 1;
                loop {
                    let id = format!("case-{n}");
                    match store.open_case(&id, &index, &parsed.records, window, at) {
                        Err(StoreError::Case(CaseError::DuplicateCase(_))) => n += 1,
                        other => return Ok(other?),
                    }
                }
            }
        }
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "case": &*case, "diagnostics": diagnostics })),
    ))
}

async fn list_cases(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.store.case_ids())
}

fn load_case(state: &AppState, id: &str) -> ApiResult<Arc<InvestigationCase>> {
    state
        .store
        .case(id)
        .ok_or_else(|| ApiError::not_found(format!("no case {id:?}")))
}

async fn get_case(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<InvestigationCase>> {
    Ok(Json((*load_case(&state, &id)?).clone()))
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn case_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let case = load_case(&state, &id)?;
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("dot")
        .parse()
        .map_err(|e: cdra_core::graph::GraphError| ApiError::bad_request(e.to_string()))?;
    let content_type = match format {
        ExportFormat::Dot => "text/vnd.graphviz; charset=utf-8",
        ExportFormat::GraphJson => "application/json",
    };
    let body = cdra_core::graph::export_graph(&case.web, format);
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

/// Resolves a display label ("D") or a number against the case's web.
fn resolve(case: &InvestigationCase, name: &str) -> Result<Subscriber, CaseError> {
    case.web
        .resolve(name.trim())
        .cloned()
        .or_else(|| Subscriber::parse(name).ok())
        .ok_or_else(|| CaseError::UnknownSubscriber(name.to_string()))
}

#[derive(Debug, Deserialize)]
struct ConfirmRequest {
    patient: String,
    contacts: Vec<String>,
}

async fn confirm(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ConfirmRequest>,
) -> ApiResult<Json<InvestigationCase>> {
    let store = state.store.clone();
    let case = blocking(move || {
        Ok(store.update_case(&id, |case| {
            let patient = resolve(case, &req.patient)?;
            let contacts = req
                .contacts
                .iter()
                .map(|c| resolve(case, c))
                .collect::<Result<BTreeSet<_>, _>>()?;
            case.confirm_contacts(&patient, &contacts, now())
        })?)
    })
    .await?;
    Ok(Json((*case).clone()))
}

#[derive(Debug, Deserialize)]
struct TestRequest {
    subscriber: String,
    result: TestResult,
    reported_at: Option<NaiveDateTime>,
}

async fn record_test(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TestRequest>,
) -> ApiResult<Json<InvestigationCase>> {
    let store = state.store.clone();
    let case = blocking(move || {
        Ok(store.update_case(&id, |case| {
            let event = TestEvent {
                subscriber: resolve(case, &req.subscriber)?,
                result: req.result,
                reported_at: req.reported_at.unwrap_or_else(now),
            };
            case.record_test_result(&event)
        })?)
    })
    .await?;
    Ok(Json((*case).clone()))
}

async fn attach_cdra(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<CdrQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req = cdr_upload(query.into(), &headers, &body)?;
    let patient = req.patient.clone().ok_or_else(|| ApiError::bad_request("missing patient"))?;
    let window = default_window(req.window.as_ref(), &state.config)?;
    let parsed = parse_cdr(req.csv.as_bytes(), &dialect(req.day_first))?;
    let diagnostics: Vec<String> = parsed.diagnostics.iter().map(|d| d.to_string()).collect();
    let store = state.store.clone();
    let case = blocking(move || {
        Ok(store.update_case(&id, |case| {
            let patient = resolve(case, &patient)?;
            case.attach_cdra(&patient, &parsed.records, window, now())
        })?)
    })
    .await?;
    Ok(Json(json!({ "case": &*case, "diagnostics": diagnostics })))
}

/// The GeoJSON path of one subscriber, identical to `cdra path` over the
/// same records and window.
pub fn case_path_geojson(case: &InvestigationCase, subscriber: &Subscriber) -> String {
    export_geojson(&reconstruct_path(&case.records_of(subscriber)).waypoints)
}

async fn case_path(
    State(state): State<AppState>,
    Path((id, who)): Path<(String, String)>,
) -> ApiResult<Response> {
    let case = load_case(&state, &id)?;
    let subscriber = resolve(&case, &who)?;
    Ok((
        [(header::CONTENT_TYPE, "application/geo+json")],
        case_path_geojson(&case, &subscriber),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct AdvisoryRequest {
    case_id: String,
    subscriber: String,
    advisory_id: Option<String>,
    ttl_days: Option<u32>,
}

async fn create_advisory(
    State(state): State<AppState>,
    Json(req): Json<AdvisoryRequest>,
) -> ApiResult<(StatusCode, Json<cdra_core::geo::PathAdvisory>)> {
    let case = load_case(&state, &req.case_id)?;
    let subscriber = resolve(&case, &req.subscriber)?;
    let path = reconstruct_path(&case.records_of(&subscriber));
    let store = state.store.clone();
    let ttl = req.ttl_days.unwrap_or(state.config.advisory_ttl_days);
    let advisory = blocking(move || {
        let id = req
            .advisory_id
            .unwrap_or_else(|| format!("adv-{}", store.advisories().len() + 1));
        let advisory = publish_advisory(&id, &path, ttl, now())?;
        Ok(store.publish_advisory(advisory)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(advisory)))
}

#[derive(Debug, Deserialize)]
struct AdvisoryQuery {
    #[serde(default)]
    all: bool,
}

async fn list_advisories(
    State(state): State<AppState>,
    Query(q): Query<AdvisoryQuery>,
) -> Json<Vec<cdra_core::geo::PathAdvisory>> {
    let at = now();
    Json(
        state
            .store
            .advisories()
            .into_iter()
            .filter(|a| q.all || a.is_active(at))
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct TagRequest {
    subscriber: Subscriber,
    latitude: f64,
    longitude: f64,
    radius_m: Option<f64>,
    window: Option<WindowSpec>,
}

async fn create_tag(State(state): State<AppState>, Json(req): Json<TagRequest>) -> ApiResult<impl IntoResponse> {
    let radius = req.radius_m.unwrap_or(state.config.radius_m);
    let window = match &req.window {
        Some(w) => w.resolve()?,
        None => {
            let start = now();
            TimeWindow::new(start, start + chrono::Duration::days(state.config.window_days))?
        }
    };
    let store = state.store.clone();
    let tag = blocking(move || Ok(store.geo_tag(&req.subscriber, req.latitude, req.longitude, radius, window)?)).await?;
    Ok((StatusCode::CREATED, Json(tag)))
}

#[derive(Debug, Deserialize)]
struct PingRequest {
    subscriber: Subscriber,
    latitude: f64,
    longitude: f64,
    at: Option<NaiveDateTime>,
}

#[derive(Debug, Serialize)]
struct PingResponse {
    outcome: &'static str,
    distance_m: Option<f64>,
    alert: Option<cdra_core::quarantine::ViolationAlert>,
}

async fn record_ping(State(state): State<AppState>, Json(req): Json<PingRequest>) -> ApiResult<Json<PingResponse>> {
    let ping = LocationPing {
        subscriber: req.subscriber,
        latitude: req.latitude,
        longitude: req.longitude,
        at: req.at.unwrap_or_else(now),
    };
    let store = state.store.clone();
    let outcome = blocking(move || Ok(store.ping(&ping)?)).await?;
    Ok(Json(match outcome {
        PingOutcome::Ignored => PingResponse {
            outcome: "ignored",
            distance_m: None,
            alert: None,
        },
        PingOutcome::Inside { distance_m } => PingResponse {
            outcome: "inside",
            distance_m: Some(distance_m),
            alert: None,
        },
        PingOutcome::Continuing { distance_m } => PingResponse {
            outcome: "continuing",
            distance_m: Some(distance_m),
            alert: None,
        },
        PingOutcome::Alert(alert) => PingResponse {
            outcome: "alert",
            distance_m: Some(alert.distance_m),
            alert: Some(alert),
        },
    }))
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: u64,
}

async fn list_alerts(State(state): State<AppState>, Query(q): Query<SinceQuery>) -> Json<serde_json::Value> {
    let alerts: Vec<serde_json::Value> = state
        .store
        .alerts_since(q.since as usize)
        .into_iter()
        .map(|(seq, a)| {
            let mut v = serde_json::to_value(a).expect("alert json");
            v["seq"] = json!(seq);
            v
        })
        .collect();
    let next = alerts.last().and_then(|a| a["seq"].as_u64()).unwrap_or(q.since);
    Json(json!({ "alerts": alerts, "next": next }))
}

#[derive(Debug, Deserialize)]
struct UploadRequest {
    keys: Vec<EphemeralKey>,
    verification_token: String,
    uploaded_at: Option<NaiveDateTime>,
}

async fn upload_keys(State(state): State<AppState>, Json(req): Json<UploadRequest>) -> ApiResult<impl IntoResponse> {
    if req.verification_token.trim().is_empty() {
        return Err(StoreError::from(EnsError::MissingToken).into());
    }
    if !state.config.accepts_token(&req.verification_token) {
        return Err(StoreError::from(EnsError::TokenRejected).into());
    }
    let (min, max) = (state.config.rotation_min_minutes, state.config.rotation_max_minutes);
    for key in &req.keys {
        if key.value.digits() != usize::from(state.config.key_digits) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("key {} is not {} digits", key.value.as_str(), state.config.key_digits),
            ));
        }
        let minutes = (key.valid_to - key.valid_from).num_minutes();
        if !(i64::from(min)..=i64::from(max)).contains(&minutes) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("key {} is valid for {minutes} min, outside {min}..{max}", key.value.as_str()),
            ));
        }
    }
    let upload = DiagnosisUpload {
        keys: req.keys,
        verification_token: req.verification_token,
        uploaded_at: req.uploaded_at.unwrap_or_else(now),
    };
    let store = state.store.clone();
    let report = blocking(move || Ok(store.publish_upload(&upload)?)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "upload": report.upload, "accepted": report.accepted, "excluded": report.excluded })),
    ))
}

async fn list_keys(State(state): State<AppState>, Query(q): Query<SinceQuery>) -> Json<serde_json::Value> {
    let keys = state.store.published_since(q.since);
    let next = keys.last().map_or(q.since, |k| k.seq);
    Json(json!({ "keys": keys, "next": next, "min_exposure_minutes": state.config.min_exposure_minutes }))
}

#[derive(Debug, Deserialize)]
struct ImportRequest {
    case_id: String,
    source: String,
    exposures: Vec<ExposureContact>,
}

async fn import_exposures(
    State(state): State<AppState>,
    Json(req): Json<ImportRequest>,
) -> ApiResult<Json<InvestigationCase>> {
    let store = state.store.clone();
    let (case_id, source) = (req.case_id, req.source);
    // A number shared without consent must not reach the audit log either.
    let exposures: Vec<ExposureContact> = req
        .exposures
        .into_iter()
        .map(|mut e| {
            if !e.consent {
                e.subscriber = None;
            }
            e
        })
        .collect();
    let consenting: Vec<ExposureContact> = exposures.iter().filter(|e| e.consent).cloned().collect();
    let id = case_id.clone();
    let case = blocking(move || {
        Ok(store.update_case(&id, |case| {
            let source = resolve(case, &source)?;
            case.merge_exposure_contacts(&source, &exposures, now())
        })?)
    })
    .await?;
    if let Some(url) = state.config.department_webhook.clone() {
        if !consenting.is_empty() {
            notify_department(url, json!({ "case_id": case_id, "exposures": consenting }));
        }
    }
    Ok(Json((*case).clone()))
}

/// Best-effort POST to the health department; failures are logged only.
fn notify_department(url: String, payload: serde_json::Value) {
    std::thread::spawn(move || {
        if let Err(e) = ureq::post(&url).send_json(&payload) {
            eprintln!("department webhook {url}: {e}");
        }
    });
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let counts = state.store.mutation_counts();
    Json(json!({ "status": "ok", "mutations": counts.total(), "counts": counts }))
}

async fn console() -> Html<&'static str> {
    Html(
        "<!doctype html><title>cdra console</title>\
         <p>The investigation console is served from this path when built. \
         The JSON API is available under /cases, /advisories, /quarantine, /alerts and /ens.</p>",
    )
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.config.api_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong API token").into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/cases", post(create_case).get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/graph", get(case_graph))
        .route("/cases/{id}/confirm", post(confirm))
        .route("/cases/{id}/tests", post(record_test))
        .route("/cases/{id}/cdra", post(attach_cdra))
        .route("/cases/{id}/paths/{subscriber}", get(case_path))
        .route("/advisories", post(create_advisory).get(list_advisories))
        .route("/quarantine/tags", post(create_tag))
        .route("/quarantine/pings", post(record_ping))
        .route("/alerts", get(list_alerts))
        .route("/ens/diagnosis-keys", post(upload_keys).get(list_keys))
        .route("/ens/exposures/import", post(import_exposures))
        .route("/health", get(health))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    api.route("/ui", get(console)).with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// A bound, not yet running, service.
pub struct Bound {
    pub addr: SocketAddr,
    listener: tokio::net::TcpListener,
    app: Router,
}

pub async fn bind(config: Config) -> Result<Bound, ServeError> {
    let store = Store::open(&config.store)?;
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    let addr = listener.local_addr()?;
    let state = AppState {
        store: Arc::new(store),
        config: Arc::new(config),
    };
    Ok(Bound {
        addr,
        listener,
        app: router(state),
    })
}

impl Bound {
    pub async fn run_until<F>(self, shutdown: F) -> Result<(), ServeError>
    where
        F: std::future::Future<Output = ()> + Send + 'static,
    {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }
}

/// Serves until Ctrl-C. Prints the bound address first, so callers that
/// asked for port 0 can find it.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    let bound = bind(config).await?;
    println!("cdra listening on http://{}", bound.addr);
    use std::io::Write;
    std::io::stdout().flush()?;
    bound
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Runs a service on a background thread, for tests and embedding. The
/// service stops when the handle is dropped.
pub struct Background {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Background {
    pub fn start(config: Config) -> Result<Background, ServeError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let bound = runtime.block_on(bind(config))?;
        let addr = bound.addr;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let _ = runtime.block_on(bound.run_until(async {
                let _ = rx.await;
            }));
        });
        Ok(Background {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
