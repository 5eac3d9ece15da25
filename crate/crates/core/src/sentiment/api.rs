//! Review HTTP API consumed by the reviewer console.
//!
//! - `GET /api/reviews?status=pending|resolved` lists tickets, newest first.
//! - `GET /api/reviews/{id}` returns one ticket.
//! - `POST /api/reviews/{id}/resolve` with `{sentiment_override?, response, reviewer}`
//!   resumes the paused workflow and returns `{ticket, state}`: 404 for an
//!   unknown ticket, 409 if it is already resolved (or being resolved), 400
//!   for an empty response.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::pipeline::state_json;
use super::{ResolveError, ResolveRequest, ReviewService, TicketError, TicketStatus};

pub fn review_router(service: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/api/reviews", get(list))
        .route("/api/reviews/{id}", get(show))
        .route("/api/reviews/{id}/resolve", post(resolve))
        .with_state(service)
}

fn error(code: StatusCode, msg: impl ToString) -> Response {
    (code, Json(json!({"error": msg.to_string()}))).into_response()
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list(State(svc): State<Arc<ReviewService>>, Query(q): Query<ListQuery>) -> Response {
    let status = match q.status.as_deref().map(str::parse::<TicketStatus>) {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
    };
    Json(svc.tickets().list(status)).into_response()
}

async fn show(State(svc): State<Arc<ReviewService>>, Path(id): Path<String>) -> Response {
    match svc.tickets().get(&id) {
        Some(t) => Json(t).into_response(),
        None => error(StatusCode::NOT_FOUND, TicketError::NotFound(id)),
    }
}

async fn resolve(
    State(svc): State<Arc<ReviewService>>,
    Path(id): Path<String>,
    body: Result<Json<ResolveRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let result = tokio::task::spawn_blocking(move || svc.resolve(&id, req)).await;
    match result {
        Ok(Ok((ticket, state))) => Json(json!({"ticket": ticket, "state": state_json(&state)})).into_response(),
        Ok(Err(ResolveError::Ticket(e))) => {
            let code = match e {
                TicketError::NotFound(_) => StatusCode::NOT_FOUND,
                TicketError::AlreadyResolved(_) | TicketError::InProgress(_) => StatusCode::CONFLICT,
                TicketError::EmptyResponse => StatusCode::BAD_REQUEST,
                TicketError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(code, e)
        }
        Ok(Err(ResolveError::Workflow(e))) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
