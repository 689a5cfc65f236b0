//! Long-running HTTP service exposing retrieval and answering.
//!
//! Routes: `GET /healthz`, `POST /retrieve {uid|query, mode}`,
//! `POST /ask {uid|query, mode}`. Responses carry a `schema_version`
//! field; bodies are JSON throughout. Worker threads pull requests off one
//! shared listener; every request builds its own workflow state, so
//! concurrent asks are isolated.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::Result;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use docrag_core::corpus::Modality;
use docrag_core::retrieval::RetrievalMode;
use docrag_core::workflow::{run_workflow, Termination};

use crate::commands::ServiceState;
use crate::ServeArgs;

const SCHEMA_VERSION: u32 = 1;

pub fn serve(args: ServeArgs) -> Result<()> {
    let state = Arc::new(ServiceState::load(&args.config)?);
    let listen = args
        .listen
        .unwrap_or_else(|| state.config.service.listen.clone());
    let server =
        Arc::new(Server::http(&listen).map_err(|e| anyhow::anyhow!("cannot bind {listen}: {e}"))?);
    // The bound address is the contract for callers (port 0 picks a free one).
    eprintln!("listening on http://{}", server.server_addr());
    let workers = state.config.service.workers.max(1);
    let mut handles = Vec::with_capacity(workers);
    for _ in 0..workers {
        let server = Arc::clone(&server);
        let state = Arc::clone(&state);
        handles.push(std::thread::spawn(move || worker_loop(server, state)));
    }
    for handle in handles {
        let _ = handle.join();
    }
    Ok(())
}

static REQUEST_COUNTER: AtomicU64 = AtomicU64::new(1);

fn worker_loop(server: Arc<Server>, state: Arc<ServiceState>) {
    while let Ok(mut request) = server.recv() {
        let request_id = REQUEST_COUNTER.fetch_add(1, Ordering::Relaxed);
        let (method, url) = (request.method().clone(), request.url().to_string());
        let (status, body) = route(&state, &mut request);
        // A dead log consumer must not kill the worker.
        use std::io::Write;
        let _ = writeln!(
            std::io::stderr(),
            "[req-{request_id}] {method} {url} -> {status}"
        );
        let response = Response::from_string(body.to_string())
            .with_status_code(status)
            .with_header(
                Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header"),
            );
        let _ = request.respond(response);
    }
}

fn error_body(message: impl std::fmt::Display) -> Value {
    json!({ "schema_version": SCHEMA_VERSION, "error": message.to_string() })
}

fn route(state: &ServiceState, request: &mut tiny_http::Request) -> (u16, Value) {
    match (request.method().clone(), request.url()) {
        (Method::Get, "/healthz") => healthz(state),
        (Method::Post, "/retrieve") => match read_json(request) {
            Ok(body) => retrieve_route(state, &body),
            Err(message) => (400, error_body(message)),
        },
        (Method::Post, "/ask") => match read_json(request) {
            Ok(body) => ask_route(state, &body),
            Err(message) => (400, error_body(message)),
        },
        _ => (404, error_body("no such route")),
    }
}

fn read_json(request: &mut tiny_http::Request) -> Result<Value, String> {
    let mut raw = String::new();
    request
        .as_reader()
        .read_to_string(&mut raw)
        .map_err(|e| format!("unreadable body: {e}"))?;
    serde_json::from_str(&raw).map_err(|e| format!("body is not valid JSON: {e}"))
}

fn healthz(state: &ServiceState) -> (u16, Value) {
    (
        200,
        json!({
            "schema_version": SCHEMA_VERSION,
            "status": "ok",
            "pages": state.corpus.page_count(),
            "documents": state.corpus.document_count(),
            "chunks": state.corpus.chunk_count(),
            "modalities": state.corpus.modalities(),
        }),
    )
}

/// Mode plus either a known uid (vectors from the sidecars) or ad-hoc
/// query text (vectors from the embedding backends).
fn query_inputs(
    state: &ServiceState,
    body: &Value,
) -> Result<
    (
        String,
        Option<String>,
        std::collections::BTreeMap<Modality, Vec<f64>>,
    ),
    (u16, Value),
> {
    match (
        body.get("uid").and_then(Value::as_str),
        body.get("query").and_then(Value::as_str),
    ) {
        (Some(uid), _) => {
            let vectors = state.vectors.vectors_for(uid);
            if vectors.is_empty() {
                return Err((404, error_body(format!("unknown uid `{uid}`"))));
            }
            let text = state.queries.get(uid).map(|q| q.query.clone());
            Ok((uid.to_string(), text, vectors))
        }
        (None, Some(text)) => match state.config.embed_query(text) {
            Ok(vectors) => Ok(("adhoc".to_string(), Some(text.to_string()), vectors)),
            Err(e) => Err((503, error_body(format!("embedding unavailable: {e}")))),
        },
        (None, None) => Err((400, error_body("body needs `uid` or `query`"))),
    }
}

fn parse_mode(body: &Value, default: RetrievalMode) -> Result<RetrievalMode, (u16, Value)> {
    match body.get("mode") {
        None => Ok(default),
        Some(Value::String(s)) => s.parse::<RetrievalMode>().map_err(|e| (400, error_body(e))),
        Some(other) => Err((
            400,
            error_body(format!("`mode` must be a string, got {other}")),
        )),
    }
}

fn retrieve_route(state: &ServiceState, body: &Value) -> (u16, Value) {
    let mode = match parse_mode(body, RetrievalMode::DynamicHybrid) {
        Ok(mode) => mode,
        Err(e) => return e,
    };
    let (query_id, _, vectors) = match query_inputs(state, body) {
        Ok(t) => t,
        Err(e) => return e,
    };
    match docrag_core::retrieval::retrieve(
        &query_id,
        &vectors,
        &state.corpus,
        &state.config.recall,
        mode,
    ) {
        Ok(result) => (
            200,
            json!({ "schema_version": SCHEMA_VERSION, "result": result }),
        ),
        Err(docrag_core::retrieval::RetrievalError::EmptyCorpus) => {
            (503, error_body("corpus is empty"))
        }
        Err(e) => (400, error_body(e)),
    }
}

fn ask_route(state: &ServiceState, body: &Value) -> (u16, Value) {
    let mode = match parse_mode(body, RetrievalMode::DynamicHybrid) {
        Ok(mode) => mode,
        Err(e) => return e,
    };
    let (query_id, query_text, vectors) = match query_inputs(state, body) {
        Ok(t) => t,
        Err(e) => return e,
    };
    let Some(query_text) = query_text else {
        return (
            404,
            error_body(format!("uid `{query_id}` has no dataset record to ask")),
        );
    };
    let retrieval = match docrag_core::retrieval::retrieve(
        &query_id,
        &vectors,
        &state.corpus,
        &state.config.recall,
        mode,
    ) {
        Ok(result) => result,
        Err(e) => return (400, error_body(e)),
    };
    let gateway = match state.config.ask_gateway(&state.corpus, &query_id, None) {
        Ok(gateway) => gateway,
        Err(e) => return (503, error_body(format!("backend unavailable: {e}"))),
    };
    let limits = match state.config.limits_for(&state.config.default_generation) {
        Ok(limits) => limits,
        Err(e) => return (503, error_body(e)),
    };
    match run_workflow(&query_id, &query_text, &retrieval, &gateway, &limits) {
        Ok(result) if result.termination == Termination::Aborted => (
            503,
            error_body(format!(
                "workflow aborted: {}",
                result.abort_reason.unwrap_or_default()
            )),
        ),
        Ok(result) => (
            200,
            json!({
                "schema_version": SCHEMA_VERSION,
                "uid": query_id,
                "answer": result.answer,
                "reference": result.reference,
                "rounds": result.rounds,
                "termination": result.termination,
                "best_effort": result.best_effort,
            }),
        ),
        Err(e) => (400, error_body(e)),
    }
}
