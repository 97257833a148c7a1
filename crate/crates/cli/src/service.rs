//! HTTP/JSON prediction service over one immutable artifact.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use htenmr::artifact::{ArtifactError, ModelArtifact};
use htenmr::dataset::{CovariateKind, CovariateValue};
use htenmr::prediction::{PredictionError, Predictor};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{message}")]
    BadRequest { message: String, field: Option<String> },
    #[error("unknown treatment '{0}'")]
    UnknownTreatment(String),
    #[error("internal error")]
    Internal,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ApiError::BadRequest { message, field } => {
                (StatusCode::BAD_REQUEST, json!({ "error": message, "field": field }))
            }
            ApiError::UnknownTreatment(t) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": self.to_string(), "treatment": t }))
            }
            ApiError::Internal => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "internal error" })),
        };
        (status, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    eprintln!("request failed: {e}");
    ApiError::Internal
}

/// Loaded artifact and its precomputed predictor, shared read-only by every request.
pub struct ServiceState {
    artifact: ModelArtifact,
    predictor: Predictor<f64>,
}

impl ServiceState {
    pub fn new(artifact: ModelArtifact) -> Result<Self, ArtifactError> {
        artifact.verify()?;
        let predictor = artifact.predictor()?;
        Ok(Self { artifact, predictor })
    }

    pub fn artifact(&self) -> &ModelArtifact {
        &self.artifact
    }

    pub fn predictor(&self) -> &Predictor<f64> {
        &self.predictor
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRequest {
    pub covariates: BTreeMap<String, Value>,
    #[serde(default)]
    pub treatments: Option<Vec<String>>,
}

impl PatientRequest {
    pub fn parse(body: &[u8]) -> Result<Self, ApiError> {
        serde_json::from_slice(body)
            .map_err(|e| ApiError::BadRequest { message: format!("malformed request body: {e}"), field: None })
    }

    /// Raw JSON values as covariate values; names outside the schema are rejected.
    pub fn covariate_values(&self, artifact: &ModelArtifact) -> Result<BTreeMap<String, CovariateValue>, ApiError> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.covariates {
            let Some(spec) = artifact.schema.iter().find(|s| &s.name == name) else {
                return Err(ApiError::BadRequest {
                    message: format!("unknown covariate '{name}'"),
                    field: Some(name.clone()),
                });
            };
            let value = match (spec.kind, v) {
                (_, Value::Null) => CovariateValue::Missing,
                (CovariateKind::Continuous, Value::Number(x)) => CovariateValue::Number(x.as_f64().unwrap_or(f64::NAN)),
                (CovariateKind::Categorical, Value::String(s)) => CovariateValue::Label(s.clone()),
                (kind, _) => {
                    let expected = if kind == CovariateKind::Continuous { "a number" } else { "a category label" };
                    return Err(ApiError::BadRequest {
                        message: format!("covariate '{name}' must be {expected}"),
                        field: Some(name.clone()),
                    });
                }
            };
            out.insert(name.clone(), value);
        }
        Ok(out)
    }
}

/// Scores and predicts one request the same way the CLI does.
pub fn handle_predict(state: &ServiceState, request: &PatientRequest) -> Result<htenmr::PredictionResult, ApiError> {
    let values = request.covariate_values(&state.artifact)?;
    let score = state
        .artifact
        .score(&values)
        .map_err(|e| ApiError::BadRequest { message: e.to_string(), field: Some(e.field().to_string()) })?;
    state.predictor.predict(score.logit_risk, request.treatments.as_deref()).map_err(|e| match e {
        PredictionError::UnknownTreatment(t) => ApiError::UnknownTreatment(t),
        other => internal(other),
    })
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "fingerprint": state.artifact.fingerprint }))
}

async fn model(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    let a = &state.artifact;
    let reference = state.predictor.reference();
    let treatments: Vec<Value> =
        state.predictor.treatment_names().map(|t| json!({ "name": t, "reference": t == reference })).collect();
    let inputs: Vec<Value> = a
        .schema
        .iter()
        .map(|s| {
            let range = a.ranges.get(&s.name);
            json!({
                "name": s.name,
                "kind": s.kind,
                "categories": s.categories,
                "reference_level": s.reference_level,
                "min": range.map(|r| r.min),
                "max": range.map(|r| r.max),
            })
        })
        .collect();
    Json(json!({
        "version": a.version,
        "fingerprint": a.fingerprint,
        "schema": a.schema,
        "inputs": inputs,
        "treatments": treatments,
        "reference": reference,
        "cutoffs": { "low": a.predict.cutoffs.0, "high": a.predict.cutoffs.1 },
        "ranges": a.ranges,
        "stage1": { "method": a.stage1.method, "n": a.stage1.n, "events": a.stage1.events },
        "anchor": { "source": a.anchor.source, "n": a.anchor.n, "events": a.anchor.events },
        "draws": a.stage2.n_draws(),
    }))
}

async fn risk(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let request = PatientRequest::parse(&body)?;
    if request.treatments.is_some() {
        return Err(ApiError::BadRequest { message: "/risk takes no treatments".into(), field: Some("treatments".into()) });
    }
    let values = request.covariate_values(&state.artifact)?;
    let score = state
        .artifact
        .score(&values)
        .map_err(|e| ApiError::BadRequest { message: e.to_string(), field: Some(e.field().to_string()) })?;
    Ok(Json(score).into_response())
}

async fn predict(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let request = PatientRequest::parse(&body)?;
    Ok(Json(handle_predict(&state, &request)?).into_response())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/risk", post(risk))
        .route("/predict", post(predict))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
