//! Rendering, sending and checking requests.

use std::collections::HashMap;
use std::io::{self, Read};
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde_json::{Map, Value};

use crate::openapi::{
    example_json, json_literal_bytes, template_parameters, ApiSpec, Method, ParamLocation,
    SchemaKind, SchemaNode, SpecError,
};
use crate::sequence::{BodyNode, ParameterValue, RequestSequence, TemplatedRequest};
use crate::Warning;

/// Everything except RFC 3986 unreserved characters is escaped.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Largest response body kept, in bytes.
const MAX_BODY: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcreteRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Ok,
    Timeout,
    ConnectionClosed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRecord {
    pub request_index: usize,
    /// Present exactly when `transport` is `Ok`.
    pub status: Option<u16>,
    pub body: Vec<u8>,
    pub latency_ms: u64,
    pub transport: Transport,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum Verdict {
    ExpectedStatus,
    UnexpectedStatus,
    ServerError,
    TransportFailure,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [
        Verdict::ExpectedStatus,
        Verdict::UnexpectedStatus,
        Verdict::ServerError,
        Verdict::TransportFailure,
    ];

    pub fn is_finding(self) -> bool {
        matches!(self, Verdict::ServerError | Verdict::UnexpectedStatus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckerMode {
    #[default]
    Strict,
    ServerError,
}

impl std::str::FromStr for CheckerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strict" => Ok(CheckerMode::Strict),
            "server-error" | "server-error-only" => Ok(CheckerMode::ServerError),
            other => Err(format!(
                "unknown checker mode `{other}` (expected strict or server-error)"
            )),
        }
    }
}

/// Bindings from the responses seen so far in one sequence: for each
/// executed request, its JSON body flattened to dotted paths.
#[derive(Debug, Clone, Default)]
pub struct Env {
    responses: Vec<HashMap<String, Value>>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_response(&mut self, body: &[u8]) {
        let mut flat = HashMap::new();
        if let Ok(v) = serde_json::from_slice::<Value>(body) {
            flatten(&v, String::new(), &mut flat);
        }
        self.responses.push(flat);
    }

    pub fn lookup(&self, request: usize, field: &str) -> Option<&Value> {
        self.responses.get(request)?.get(field)
    }
}

fn flatten(v: &Value, prefix: String, out: &mut HashMap<String, Value>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, c) in m {
                flatten(c, join(k), out);
            }
        }
        Value::Array(items) => {
            for (i, c) in items.iter().enumerate() {
                flatten(c, join(&i.to_string()), out);
            }
        }
        _ => {}
    }
    if !prefix.is_empty() {
        out.insert(prefix, v.clone());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub auth_header: Option<(String, String)>,
}

impl TargetConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: 2000,
            auth_header: None,
        }
    }
}

/// Renders a request against the bindings collected so far.
pub fn render_request(
    spec: &ApiSpec,
    req: &TemplatedRequest,
    env: &Env,
    target: &TargetConfig,
    warnings: &mut Vec<Warning>,
) -> ConcreteRequest {
    let op = spec.operation(&req.path, req.method);
    let templated = template_parameters(&req.path);
    let mut path = req.path.clone();
    let mut query = Vec::new();
    let mut headers = Vec::new();
    for (name, value) in &req.params {
        let schema = op.and_then(|o| o.parameter(name)).map(|p| &p.schema);
        let text = text_value(value, schema, env, req, name, warnings);
        let location = op.and_then(|o| o.parameter(name)).map(|p| &p.location);
        if templated.iter().any(|t| t == name) || location == Some(&ParamLocation::Path) {
            let encoded = utf8_percent_encode(&text, COMPONENT).to_string();
            path = path.replace(&format!("{{{name}}}"), &encoded);
        } else if location == Some(&ParamLocation::Header) {
            headers.push((name.clone(), header_safe(&text)));
        } else {
            query.push(format!(
                "{}={}",
                utf8_percent_encode(name, COMPONENT),
                utf8_percent_encode(&text, COMPONENT)
            ));
        }
    }
    // Templates with no value at all still must not reach the wire.
    for t in &templated {
        path = path.replace(&format!("{{{t}}}"), "");
    }
    let mut url = format!("{}{}", target.base_url.trim_end_matches('/'), path);
    if !query.is_empty() {
        url.push('?');
        url.push_str(&query.join("&"));
    }
    let mut body = Vec::new();
    if let Some(tree) = &req.body {
        headers.push(("Content-Type".into(), "application/json".into()));
        body = match (op, tree) {
            (Some(o), BodyNode::Leaf(ParameterValue::Literal(bytes))) if !o.json_body => {
                bytes.clone()
            }
            _ => {
                let schema = op.and_then(|o| o.request_body.as_ref());
                let json = body_json(tree, schema, env, req, warnings);
                serde_json::to_vec(&json).expect("JSON serializes")
            }
        };
    }
    if let Some((name, value)) = &target.auth_header {
        headers.push((name.clone(), value.clone()));
    }
    ConcreteRequest {
        method: req.method,
        url,
        headers,
        body,
    }
}

fn header_safe(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            0x20..=0x7e => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn resolve(
    value: &ParameterValue,
    schema: Option<&SchemaNode>,
    env: &Env,
    req: &TemplatedRequest,
    slot: &str,
    warnings: &mut Vec<Warning>,
) -> Result<Value, Vec<u8>> {
    match value {
        ParameterValue::Literal(bytes) => Err(bytes.clone()),
        ParameterValue::Reference { request, field } => match env.lookup(*request, field) {
            Some(v) => Ok(v.clone()),
            None => {
                warnings.push(Warning::new(
                    "harness",
                    format!(
                        "{}: `{slot}` references field `{field}` of request {request}, which the response lacked; using the default",
                        req.label()
                    ),
                ));
                let fallback = schema
                    .cloned()
                    .unwrap_or_else(|| SchemaNode::of_kind(SchemaKind::String));
                Ok(example_json(
                    &fallback,
                    &mut rand::rngs::mock::StepRng::new(0, 1),
                    &mut Vec::new(),
                ))
            }
        },
    }
}

fn text_value(
    value: &ParameterValue,
    schema: Option<&SchemaNode>,
    env: &Env,
    req: &TemplatedRequest,
    slot: &str,
    warnings: &mut Vec<Warning>,
) -> String {
    match resolve(value, schema, env, req, slot, warnings) {
        Ok(v) => String::from_utf8_lossy(&json_literal_bytes(&v)).into_owned(),
        Err(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
    }
}

fn body_json(
    node: &BodyNode,
    schema: Option<&SchemaNode>,
    env: &Env,
    req: &TemplatedRequest,
    warnings: &mut Vec<Warning>,
) -> Value {
    match node {
        BodyNode::Object(children) => {
            let mut map = Map::new();
            for (k, c) in children {
                map.insert(
                    k.clone(),
                    body_json(c, schema.and_then(|s| s.property(k)), env, req, warnings),
                );
            }
            Value::Object(map)
        }
        BodyNode::Array(items) => {
            let item_schema = schema.and_then(|s| s.items.as_deref());
            Value::Array(
                items
                    .iter()
                    .map(|c| body_json(c, item_schema, env, req, warnings))
                    .collect(),
            )
        }
        BodyNode::Leaf(v) => match resolve(v, schema, env, req, "body", warnings) {
            Ok(v) => v,
            Err(bytes) => {
                typed_literal(&bytes, schema.map(|s| s.kind).unwrap_or(SchemaKind::String))
            }
        },
    }
}

/// String-typed literals become JSON strings; other literals are inserted
/// as raw JSON when they parse as JSON, and as strings otherwise.
fn typed_literal(bytes: &[u8], kind: SchemaKind) -> Value {
    if kind != SchemaKind::String {
        if let Ok(v) = serde_json::from_slice::<Value>(bytes) {
            return v;
        }
    }
    Value::String(String::from_utf8_lossy(bytes).into_owned())
}

/// HTTP client bound to one target; keeps connections alive between
/// requests.
pub struct Harness {
    agent: ureq::Agent,
    pub target: TargetConfig,
}

impl Harness {
    pub fn new(target: TargetConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(target.timeout_ms.max(1)))
            .redirects(0)
            .build();
        Self { agent, target }
    }

    pub fn send(&self, request_index: usize, req: &ConcreteRequest) -> ResponseRecord {
        let start = Instant::now();
        let mut call = self.agent.request(req.method.as_str(), &req.url);
        for (k, v) in &req.headers {
            call = call.set(k, v);
        }
        let result =
            if req.body.is_empty() && req.method != Method::Post && req.method != Method::Put {
                call.call()
            } else {
                call.send_bytes(&req.body)
            };
        let response = match result {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(_, r)) => Ok(r),
            Err(ureq::Error::Transport(t)) => Err(classify(&t)),
        };
        let outcome = response.and_then(|r| {
            let status = r.status();
            let mut body = Vec::new();
            match r.into_reader().take(MAX_BODY).read_to_end(&mut body) {
                Ok(_) => Ok((status, body)),
                Err(e) if is_timeout(&e) => Err(Transport::Timeout),
                Err(_) => Err(Transport::ConnectionClosed),
            }
        });
        let latency_ms = start.elapsed().as_millis() as u64;
        match outcome {
            Ok((status, body)) => ResponseRecord {
                request_index,
                status: Some(status),
                body,
                latency_ms,
                transport: Transport::Ok,
            },
            Err(transport) => ResponseRecord {
                request_index,
                status: None,
                body: Vec::new(),
                latency_ms,
                transport,
            },
        }
    }

    /// Sends the requests in order, binding each response for later
    /// references. Stops after the first transport failure.
    pub fn execute_sequence(
        &self,
        spec: &ApiSpec,
        seq: &RequestSequence,
        warnings: &mut Vec<Warning>,
    ) -> Vec<ResponseRecord> {
        let mut env = Env::new();
        let mut records = Vec::with_capacity(seq.len());
        for (i, req) in seq.requests.iter().enumerate() {
            let concrete = render_request(spec, req, &env, &self.target, warnings);
            let record = self.send(i, &concrete);
            env.push_response(&record.body);
            let failed = record.transport != Transport::Ok;
            records.push(record);
            if failed {
                break;
            }
        }
        records
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
    )
}

fn classify(t: &ureq::Transport) -> Transport {
    let mut source = std::error::Error::source(t);
    while let Some(s) = source {
        if let Some(io) = s.downcast_ref::<io::Error>() {
            if is_timeout(io) {
                return Transport::Timeout;
            }
        }
        source = s.source();
    }
    Transport::ConnectionClosed
}

/// Judges one response against the operation's documented statuses.
pub fn check_response(
    spec: &ApiSpec,
    req: &TemplatedRequest,
    record: &ResponseRecord,
    mode: CheckerMode,
) -> Result<Verdict, SpecError> {
    let expected = spec.expected_statuses(&req.path, req.method)?;
    let Some(status) = record.status.filter(|_| record.transport == Transport::Ok) else {
        return Ok(Verdict::TransportFailure);
    };
    if (500..600).contains(&status) {
        return Ok(Verdict::ServerError);
    }
    Ok(match mode {
        CheckerMode::ServerError => Verdict::ExpectedStatus,
        CheckerMode::Strict if expected.admits(status) => Verdict::ExpectedStatus,
        CheckerMode::Strict => Verdict::UnexpectedStatus,
    })
}

/// Like [`check_response`], but requests outside the spec are judged on
/// status class alone instead of failing.
pub fn verdict_for(
    spec: &ApiSpec,
    req: &TemplatedRequest,
    record: &ResponseRecord,
    mode: CheckerMode,
) -> Verdict {
    check_response(spec, req, record, mode).unwrap_or(match record.status {
        None => Verdict::TransportFailure,
        Some(s) if (500..600).contains(&s) => Verdict::ServerError,
        Some(_) if mode == CheckerMode::ServerError => Verdict::ExpectedStatus,
        Some(_) => Verdict::UnexpectedStatus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::openapi::parse_spec;
    use crate::sequence::BodyNode;

    fn spec() -> ApiSpec {
        parse_spec(crate::MINIPET_SPEC).unwrap()
    }

    fn target() -> TargetConfig {
        TargetConfig::new("http://127.0.0.1:9")
    }

    fn ok(status: u16) -> ResponseRecord {
        ResponseRecord {
            request_index: 0,
            status: Some(status),
            body: Vec::new(),
            latency_ms: 1,
            transport: Transport::Ok,
        }
    }

    #[test]
    fn path_literal_substitution() {
        let mut req = TemplatedRequest::new(Method::Get, "/store/{id}");
        req.params.insert("id".into(), ParameterValue::literal("9"));
        let c = render_request(&spec(), &req, &Env::new(), &target(), &mut Vec::new());
        assert_eq!(c.url, "http://127.0.0.1:9/store/9");
        req.params
            .insert("id".into(), ParameterValue::literal("a/b c"));
        req.params
            .insert("voucher".into(), ParameterValue::literal("W&U"));
        let c = render_request(&spec(), &req, &Env::new(), &target(), &mut Vec::new());
        assert_eq!(c.url, "http://127.0.0.1:9/store/a%2Fb%20c?voucher=W%26U");
        assert!(!c.url.contains('{'));
    }

    #[test]
    fn references_resolve_from_env() {
        let mut req = TemplatedRequest::new(Method::Post, "/pet");
        req.body = Some(BodyNode::Object(vec![
            (
                "name".into(),
                BodyNode::Leaf(ParameterValue::literal("rex")),
            ),
            (
                "store_id".into(),
                BodyNode::Leaf(ParameterValue::Reference {
                    request: 0,
                    field: "id".into(),
                }),
            ),
        ]));
        let mut env = Env::new();
        env.push_response(br#"{"id":"7"}"#);
        let mut warnings = Vec::new();
        let c = render_request(&spec(), &req, &env, &target(), &mut warnings);
        let body = String::from_utf8(c.body).unwrap();
        assert!(body.contains(r#""store_id":"7""#), "{body}");
        assert!(warnings.is_empty());
        assert!(c
            .headers
            .contains(&("Content-Type".into(), "application/json".into())));
    }

    #[test]
    fn missing_reference_falls_back_with_warning() {
        let mut req = TemplatedRequest::new(Method::Get, "/pet/{id}");
        req.params.insert(
            "id".into(),
            ParameterValue::Reference {
                request: 0,
                field: "id".into(),
            },
        );
        let mut env = Env::new();
        env.push_response(b"not json");
        let mut warnings = Vec::new();
        let c = render_request(&spec(), &req, &env, &target(), &mut warnings);
        assert_eq!(c.url, "http://127.0.0.1:9/pet/1");
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn env_flattens_nested_fields() {
        let mut env = Env::new();
        env.push_response(br#"{"a":{"b":[1,{"c":"x"}]}}"#);
        assert_eq!(env.lookup(0, "a.b.1.c"), Some(&Value::from("x")));
        assert_eq!(env.lookup(0, "a.b.0"), Some(&Value::from(1)));
        assert!(env.lookup(0, "a").unwrap().is_object());
        assert_eq!(env.lookup(1, "a"), None);
    }

    #[test]
    fn auth_header_and_control_characters() {
        let mut t = target();
        t.auth_header = Some(("X-Token".into(), "s3cret".into()));
        let req = TemplatedRequest::new(Method::Post, "/store");
        let c = render_request(&spec(), &req, &Env::new(), &t, &mut Vec::new());
        assert_eq!(
            c.headers,
            vec![("X-Token".to_string(), "s3cret".to_string())]
        );
        assert_eq!(header_safe("a\r\nb"), "a%0D%0Ab");
    }

    #[test]
    fn non_string_literals_stay_raw_when_valid_json() {
        assert_eq!(typed_literal(b"12", SchemaKind::Integer), Value::from(12));
        assert_eq!(typed_literal(b"1x", SchemaKind::Integer), Value::from("1x"));
        assert_eq!(typed_literal(b"12", SchemaKind::String), Value::from("12"));
    }

    #[test]
    fn verdicts() {
        let s = spec();
        let get = TemplatedRequest::new(Method::Get, "/store/{id}");
        assert_eq!(
            check_response(&s, &get, &ok(200), CheckerMode::Strict),
            Ok(Verdict::ExpectedStatus)
        );
        assert_eq!(
            check_response(&s, &get, &ok(418), CheckerMode::Strict),
            Ok(Verdict::UnexpectedStatus)
        );
        assert_eq!(
            check_response(&s, &get, &ok(418), CheckerMode::ServerError),
            Ok(Verdict::ExpectedStatus)
        );
        for mode in [CheckerMode::Strict, CheckerMode::ServerError] {
            assert_eq!(
                check_response(&s, &get, &ok(500), mode),
                Ok(Verdict::ServerError)
            );
        }
        let failed = ResponseRecord {
            status: None,
            transport: Transport::Timeout,
            ..ok(0)
        };
        assert_eq!(
            check_response(&s, &get, &failed, CheckerMode::Strict),
            Ok(Verdict::TransportFailure)
        );
        let unknown = TemplatedRequest::new(Method::Get, "/nope");
        assert!(check_response(&s, &unknown, &ok(404), CheckerMode::Strict).is_err());
        assert_eq!(
            verdict_for(&s, &unknown, &ok(404), CheckerMode::Strict),
            Verdict::UnexpectedStatus
        );
    }

    #[test]
    fn unreachable_target_aborts_after_first_request() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let h = Harness::new(TargetConfig {
            timeout_ms: 500,
            ..TargetConfig::new(format!("http://127.0.0.1:{port}"))
        });
        let s = spec();
        let seq = RequestSequence::new(vec![
            TemplatedRequest::new(Method::Post, "/store"),
            TemplatedRequest::new(Method::Post, "/store"),
        ]);
        let records = h.execute_sequence(&s, &seq, &mut Vec::new());
        assert_eq!(records.len(), 1);
        assert_ne!(records[0].transport, Transport::Ok);
        assert_eq!(records[0].status, None);
    }
}
