//! In-process minipet target with a simulated coverage agent.
//!
//! Two listeners share one state: the API on one port and
//! `GET /coverage?reset=…` on the other. Handlers are serialized behind a
//! mutex. The coverage bit layout is documented in
//! `fixtures/minipet_coverage_layout.md` and mirrored by [`bits`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Request, Response, Server};

use crate::coverage::{encode_payload, LineCoverageMap};

pub const TOTAL_BITS: usize = 64;
const MAX_STORE_NAME: usize = 64;
const MAX_PET_NAME: usize = 100;
const MAGIC: &str = "WUPPIE";

/// Instrumentation points.
pub mod bits {
    pub const POST_STORE: usize = 0;
    pub const POST_STORE_INVALID: usize = 1;
    pub const POST_STORE_CREATED: usize = 2;
    pub const GET_STORE: usize = 3;
    pub const GET_STORE_NOT_FOUND: usize = 4;
    pub const GET_STORE_FOUND: usize = 5;
    pub const VOUCHER_PRESENT: usize = 6;
    /// Prefixes "W", "WU", "WUP", "WUPP", "WUPPI", then the full token.
    pub const VOUCHER_PREFIX: [usize; 6] = [7, 8, 9, 10, 11, 12];
    pub const PUT_STORE: usize = 13;
    pub const PUT_STORE_NOT_FOUND: usize = 14;
    pub const PUT_STORE_INVALID: usize = 15;
    pub const PUT_STORE_UPDATED: usize = 16;
    pub const DELETE_STORE: usize = 17;
    pub const DELETE_STORE_NOT_FOUND: usize = 18;
    pub const DELETE_STORE_EMPTY: usize = 19;
    pub const DELETE_STORE_WITH_PETS: usize = 20;
    pub const POST_PET: usize = 21;
    pub const POST_PET_INVALID: usize = 22;
    pub const POST_PET_UNKNOWN_STORE: usize = 23;
    pub const POST_PET_CREATED: usize = 24;
    pub const GET_PET: usize = 25;
    pub const GET_PET_NOT_FOUND: usize = 26;
    pub const GET_PET_FOUND: usize = 27;
    pub const GET_PET_DANGLING: usize = 28;
    pub const PUT_PET: usize = 29;
    pub const PUT_PET_NOT_FOUND: usize = 30;
    pub const PUT_PET_INVALID: usize = 31;
    pub const PUT_PET_LONG_NAME: usize = 32;
    pub const PUT_PET_UPDATED: usize = 33;
    pub const DELETE_PET: usize = 34;
    pub const DELETE_PET_NOT_FOUND: usize = 35;
    pub const DELETE_PET_DELETED: usize = 36;
    pub const UNKNOWN_ROUTE: usize = 37;
    pub const METHOD_NOT_ALLOWED: usize = 38;
    pub const BAD_JSON: usize = 39;
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("port {port} is in use: {message}")]
    PortInUse { port: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pet {
    name: String,
    store_id: String,
}

/// Application state plus the coverage accumulator.
#[derive(Debug, Clone)]
pub struct MiniPet {
    stores: BTreeMap<u64, String>,
    pets: BTreeMap<u64, Pet>,
    next_id: u64,
    coverage: LineCoverageMap,
}

impl Default for MiniPet {
    fn default() -> Self {
        Self::new()
    }
}

type Reply = (u16, Value);

fn not_found() -> Reply {
    (404, json!({"error": "not found"}))
}

fn unprocessable(msg: &str) -> Reply {
    (422, json!({"error": msg}))
}

impl MiniPet {
    pub fn new() -> Self {
        Self {
            stores: BTreeMap::new(),
            pets: BTreeMap::new(),
            next_id: 1,
            coverage: LineCoverageMap::new(TOTAL_BITS),
        }
    }

    pub fn coverage(&self) -> &LineCoverageMap {
        &self.coverage
    }

    /// Returns the accumulated coverage, clearing it when `reset` is set.
    pub fn take_coverage(&mut self, reset: bool) -> LineCoverageMap {
        let out = self.coverage.clone();
        if reset {
            self.coverage.clear();
        }
        out
    }

    fn hit(&mut self, bit: usize) {
        self.coverage.set(bit);
    }

    fn issue_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Serves one API request. `target` is the path plus optional query.
    pub fn handle(&mut self, method: &str, target: &str, body: &[u8]) -> (u16, Vec<u8>) {
        let (status, value) = self.route(method, target, body);
        (status, value.to_string().into_bytes())
    }

    fn route(&mut self, method: &str, target: &str, body: &[u8]) -> Reply {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        let id = |s: &str| {
            percent_encoding::percent_decode_str(s)
                .decode_utf8_lossy()
                .into_owned()
        };
        match (segments.as_slice(), method) {
            (["store"], "POST") => self.with_json(body, |s, v| s.post_store(&v)),
            (["store", raw], "GET") => {
                let voucher = query_param(query, "voucher");
                self.get_store(&id(raw), voucher.as_deref())
            }
            (["store", raw], "PUT") => {
                let raw = id(raw);
                self.with_json(body, |s, v| s.put_store(&raw, &v))
            }
            (["store", raw], "DELETE") => self.delete_store(&id(raw)),
            (["pet"], "POST") => self.with_json(body, |s, v| s.post_pet(&v)),
            (["pet", raw], "GET") => self.get_pet(&id(raw)),
            (["pet", raw], "PUT") => {
                let raw = id(raw);
                self.with_json(body, |s, v| s.put_pet(&raw, &v))
            }
            (["pet", raw], "DELETE") => self.delete_pet(&id(raw)),
            (["store"] | ["store", _] | ["pet"] | ["pet", _], _) => {
                self.hit(bits::METHOD_NOT_ALLOWED);
                (405, json!({"error": "method not allowed"}))
            }
            _ => {
                self.hit(bits::UNKNOWN_ROUTE);
                not_found()
            }
        }
    }

    fn with_json(&mut self, body: &[u8], f: impl FnOnce(&mut Self, Value) -> Reply) -> Reply {
        match serde_json::from_slice::<Value>(body) {
            Ok(v) => f(self, v),
            Err(_) => {
                self.hit(bits::BAD_JSON);
                (400, json!({"error": "invalid JSON"}))
            }
        }
    }

    fn lookup_store(&self, raw: &str) -> Option<u64> {
        raw.parse::<u64>()
            .ok()
            .filter(|id| self.stores.contains_key(id))
    }

    fn lookup_pet(&self, raw: &str) -> Option<u64> {
        raw.parse::<u64>()
            .ok()
            .filter(|id| self.pets.contains_key(id))
    }

    fn post_store(&mut self, v: &Value) -> Reply {
        self.hit(bits::POST_STORE);
        let Some(name) = valid_name(v, MAX_STORE_NAME) else {
            self.hit(bits::POST_STORE_INVALID);
            return unprocessable("store name must be 1 to 64 bytes");
        };
        let id = self.issue_id();
        self.stores.insert(id, name);
        self.hit(bits::POST_STORE_CREATED);
        (201, json!({"id": id.to_string()}))
    }

    fn get_store(&mut self, raw: &str, voucher: Option<&str>) -> Reply {
        self.hit(bits::GET_STORE);
        if let Some(v) = voucher.filter(|v| !v.is_empty()) {
            self.hit(bits::VOUCHER_PRESENT);
            // Nested guards, evaluated before the lookup.
            if v.starts_with("W") {
                self.hit(bits::VOUCHER_PREFIX[0]);
                if v.starts_with("WU") {
                    self.hit(bits::VOUCHER_PREFIX[1]);
                    if v.starts_with("WUP") {
                        self.hit(bits::VOUCHER_PREFIX[2]);
                        if v.starts_with("WUPP") {
                            self.hit(bits::VOUCHER_PREFIX[3]);
                            if v.starts_with("WUPPI") {
                                self.hit(bits::VOUCHER_PREFIX[4]);
                                if v == MAGIC {
                                    self.hit(bits::VOUCHER_PREFIX[5]);
                                    return (500, json!({"error": "voucher redemption failed"}));
                                }
                            }
                        }
                    }
                }
            }
        }
        match self.lookup_store(raw) {
            Some(id) => {
                self.hit(bits::GET_STORE_FOUND);
                (200, json!({"id": id.to_string(), "name": self.stores[&id]}))
            }
            None => {
                self.hit(bits::GET_STORE_NOT_FOUND);
                not_found()
            }
        }
    }

    fn put_store(&mut self, raw: &str, v: &Value) -> Reply {
        self.hit(bits::PUT_STORE);
        let Some(id) = self.lookup_store(raw) else {
            self.hit(bits::PUT_STORE_NOT_FOUND);
            return not_found();
        };
        let Some(name) = valid_name(v, MAX_STORE_NAME) else {
            self.hit(bits::PUT_STORE_INVALID);
            return unprocessable("store name must be 1 to 64 bytes");
        };
        self.stores.insert(id, name.clone());
        self.hit(bits::PUT_STORE_UPDATED);
        (200, json!({"id": id.to_string(), "name": name}))
    }

    fn delete_store(&mut self, raw: &str) -> Reply {
        self.hit(bits::DELETE_STORE);
        let Some(id) = self.lookup_store(raw) else {
            self.hit(bits::DELETE_STORE_NOT_FOUND);
            return not_found();
        };
        self.stores.remove(&id);
        // Pets of the store are left in place.
        let key = id.to_string();
        if self.pets.values().any(|p| p.store_id == key) {
            self.hit(bits::DELETE_STORE_WITH_PETS);
        } else {
            self.hit(bits::DELETE_STORE_EMPTY);
        }
        (204, Value::Null)
    }

    fn post_pet(&mut self, v: &Value) -> Reply {
        self.hit(bits::POST_PET);
        let name = valid_name(v, usize::MAX);
        let store_id = v.get("store_id").and_then(Value::as_str);
        let (Some(name), Some(store_id)) = (name, store_id) else {
            self.hit(bits::POST_PET_INVALID);
            return unprocessable("pet needs a name and a store_id");
        };
        if self.lookup_store(store_id).is_none() {
            self.hit(bits::POST_PET_UNKNOWN_STORE);
            return unprocessable("unknown store");
        }
        let id = self.issue_id();
        let pet = Pet {
            name,
            store_id: store_id.to_string(),
        };
        self.pets.insert(id, pet);
        self.hit(bits::POST_PET_CREATED);
        (201, json!({"id": id.to_string()}))
    }

    fn pet_json(&self, id: u64) -> Value {
        let p = &self.pets[&id];
        json!({"id": id.to_string(), "name": p.name, "store_id": p.store_id})
    }

    fn get_pet(&mut self, raw: &str) -> Reply {
        self.hit(bits::GET_PET);
        let Some(id) = self.lookup_pet(raw) else {
            self.hit(bits::GET_PET_NOT_FOUND);
            return not_found();
        };
        if self.lookup_store(&self.pets[&id].store_id).is_none() {
            self.hit(bits::GET_PET_DANGLING);
            return (500, json!({"error": "store of pet is gone"}));
        }
        self.hit(bits::GET_PET_FOUND);
        (200, self.pet_json(id))
    }

    fn put_pet(&mut self, raw: &str, v: &Value) -> Reply {
        self.hit(bits::PUT_PET);
        let Some(id) = self.lookup_pet(raw) else {
            self.hit(bits::PUT_PET_NOT_FOUND);
            return not_found();
        };
        let Some(name) = valid_name(v, usize::MAX) else {
            self.hit(bits::PUT_PET_INVALID);
            return unprocessable("pet name must be a non-empty string");
        };
        if name.len() > MAX_PET_NAME {
            self.hit(bits::PUT_PET_LONG_NAME);
            return (500, json!({"error": "name column overflow"}));
        }
        self.pets.get_mut(&id).expect("looked up").name = name;
        self.hit(bits::PUT_PET_UPDATED);
        (200, self.pet_json(id))
    }

    fn delete_pet(&mut self, raw: &str) -> Reply {
        self.hit(bits::DELETE_PET);
        let Some(id) = self.lookup_pet(raw) else {
            self.hit(bits::DELETE_PET_NOT_FOUND);
            return not_found();
        };
        self.pets.remove(&id);
        self.hit(bits::DELETE_PET_DELETED);
        (204, Value::Null)
    }
}

/// A non-empty string `name` of at most `max` bytes.
fn valid_name(v: &Value, max: usize) -> Option<String> {
    v.get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.is_empty() && n.len() <= max)
        .map(str::to_string)
}

fn query_param(query: &str, key: &str) -> Option<String> {
    url::form_urlencoded::parse(query.as_bytes())
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.into_owned())
}

/// Running mock: API and coverage agent on two local ports.
pub struct MockServer {
    state: Arc<Mutex<MiniPet>>,
    servers: Vec<Arc<Server>>,
    threads: Vec<JoinHandle<()>>,
    api_port: u16,
    agent_port: u16,
}

impl MockServer {
    /// Binds both listeners on 127.0.0.1. Port 0 picks a free port.
    pub fn start(api_port: u16, agent_port: u16) -> Result<Self, MockError> {
        let bind = |port: u16| {
            Server::http(("127.0.0.1", port))
                .map(Arc::new)
                .map_err(|e| MockError::PortInUse {
                    port,
                    message: e.to_string(),
                })
        };
        let api = bind(api_port)?;
        let agent = bind(agent_port)?;
        let port_of = |s: &Server| s.server_addr().to_ip().map(|a| a.port()).unwrap_or(0);
        let (api_port, agent_port) = (port_of(&api), port_of(&agent));
        let state = Arc::new(Mutex::new(MiniPet::new()));
        let threads = vec![
            spawn_loop(api.clone(), state.clone(), serve_api),
            spawn_loop(agent.clone(), state.clone(), serve_agent),
        ];
        Ok(Self {
            state,
            servers: vec![api, agent],
            threads,
            api_port,
            agent_port,
        })
    }

    pub fn api_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.api_port)
    }

    pub fn agent_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.agent_port)
    }

    /// Clears application state and coverage.
    pub fn reset_state(&self) {
        *self.state.lock().expect("mock state") = MiniPet::new();
    }

    pub fn coverage(&self) -> LineCoverageMap {
        self.state.lock().expect("mock state").coverage().clone()
    }

    /// Blocks until the listeners stop.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for s in &self.servers {
            s.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn spawn_loop(
    server: Arc<Server>,
    state: Arc<Mutex<MiniPet>>,
    serve: fn(&Mutex<MiniPet>, &mut Request) -> (u16, Vec<u8>),
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let content_type =
            Header::from_bytes("Content-Type", "application/json").expect("static header");
        while let Ok(mut req) = server.recv() {
            let (status, body) = serve(&state, &mut req);
            let mut response = Response::from_data(body).with_status_code(status);
            if status != 204 {
                response = response.with_header(content_type.clone());
            }
            let _ = req.respond(response);
        }
    })
}

fn serve_api(state: &Mutex<MiniPet>, req: &mut Request) -> (u16, Vec<u8>) {
    let mut body = Vec::new();
    let _ = req.as_reader().read_to_end(&mut body);
    let method = req.method().as_str().to_string();
    let url = req.url().to_string();
    let (status, out) = state
        .lock()
        .expect("mock state")
        .handle(&method, &url, &body);
    if status == 204 {
        (status, Vec::new())
    } else {
        (status, out)
    }
}

fn serve_agent(state: &Mutex<MiniPet>, req: &mut Request) -> (u16, Vec<u8>) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    if path != "/coverage" || req.method().as_str() != "GET" {
        return (404, b"{\"error\":\"not found\"}".to_vec());
    }
    let reset = query_param(query, "reset").as_deref() == Some("true");
    let map = state.lock().expect("mock state").take_coverage(reset);
    (200, encode_payload(&map).into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(m: &mut MiniPet, method: &str, target: &str, body: &str) -> (u16, Value) {
        let (s, b) = m.handle(method, target, body.as_bytes());
        (s, serde_json::from_slice(&b).unwrap())
    }

    #[test]
    fn ids_start_at_one_and_are_shared() {
        let mut m = MiniPet::new();
        assert_eq!(
            call(&mut m, "POST", "/store", r#"{"name":"a"}"#),
            (201, json!({"id":"1"}))
        );
        let (s, v) = call(&mut m, "POST", "/pet", r#"{"name":"rex","store_id":"1"}"#);
        assert_eq!((s, v), (201, json!({"id":"2"})));
    }

    #[test]
    fn dangling_pet_is_a_server_error() {
        let mut m = MiniPet::new();
        call(&mut m, "POST", "/store", r#"{"name":"a"}"#);
        call(&mut m, "POST", "/pet", r#"{"name":"rex","store_id":"1"}"#);
        assert_eq!(call(&mut m, "GET", "/pet/2", "").0, 200);
        assert_eq!(m.handle("DELETE", "/store/1", b"").0, 204);
        assert!(m.coverage().is_set(bits::DELETE_STORE_WITH_PETS));
        assert_eq!(call(&mut m, "GET", "/pet/2", "").0, 500);
        assert!(m.coverage().is_set(bits::GET_PET_DANGLING));
    }

    #[test]
    fn long_pet_name_is_a_server_error() {
        let mut m = MiniPet::new();
        call(&mut m, "POST", "/store", r#"{"name":"a"}"#);
        call(&mut m, "POST", "/pet", r#"{"name":"rex","store_id":"1"}"#);
        let at_limit = format!(r#"{{"name":"{}"}}"#, "x".repeat(100));
        assert_eq!(call(&mut m, "PUT", "/pet/2", &at_limit).0, 200);
        let over = format!(r#"{{"name":"{}"}}"#, "x".repeat(101));
        assert_eq!(call(&mut m, "PUT", "/pet/2", &over).0, 500);
        assert_eq!(call(&mut m, "PUT", "/pet/2", r#"{"name":""}"#).0, 422);
    }

    #[test]
    fn voucher_guards_set_prefix_bits() {
        let mut m = MiniPet::new();
        call(&mut m, "POST", "/store", r#"{"name":"a"}"#);
        assert_eq!(call(&mut m, "GET", "/store/1?voucher=WU", "").0, 200);
        let cov = m.take_coverage(true);
        assert!(cov.is_set(bits::VOUCHER_PREFIX[0]) && cov.is_set(bits::VOUCHER_PREFIX[1]));
        assert!(!cov.is_set(bits::VOUCHER_PREFIX[2]));
        assert_eq!(call(&mut m, "GET", "/store/99?voucher=WUPPIE", "").0, 500);
        let cov = m.take_coverage(true);
        assert!(bits::VOUCHER_PREFIX.iter().all(|&b| cov.is_set(b)));
        assert_eq!(call(&mut m, "GET", "/store/1?voucher=WUPPIEX", "").0, 200);
        // entry, voucher present, five prefixes, found
        assert_eq!(m.take_coverage(false).count_set(), 8);
        assert_eq!(m.take_coverage(true).count_set(), 8);
        assert_eq!(m.take_coverage(true).count_set(), 0);
    }

    #[test]
    fn routing_errors() {
        let mut m = MiniPet::new();
        assert_eq!(call(&mut m, "GET", "/nope", "").0, 404);
        assert_eq!(call(&mut m, "PATCH", "/store/1", "").0, 405);
        assert_eq!(call(&mut m, "POST", "/store", "{").0, 400);
        assert_eq!(call(&mut m, "POST", "/store", r#"{"name":""}"#).0, 422);
        assert_eq!(
            call(&mut m, "POST", "/pet", r#"{"name":"a","store_id":"7"}"#).0,
            422
        );
        assert_eq!(call(&mut m, "GET", "/store/abc", "").0, 404);
    }

    #[test]
    fn every_server_error_is_an_injected_bug() {
        // Exhaust a small grid of inputs; only the three bug branches may 500.
        let mut m = MiniPet::new();
        let bodies = [
            "",
            "{",
            "{}",
            r#"{"name":"a"}"#,
            r#"{"name":"a","store_id":"1"}"#,
            r#"{"name":5}"#,
        ];
        let targets = [
            "/store",
            "/store/1",
            "/store/2",
            "/pet",
            "/pet/1",
            "/pet/2",
            "/x",
            "/store/1?voucher=W",
        ];
        for _ in 0..2 {
            for method in ["GET", "POST", "PUT", "DELETE", "PATCH"] {
                for t in targets {
                    for b in bodies {
                        let (s, _) = m.handle(method, t, b.as_bytes());
                        if s >= 500 {
                            let cov = m.coverage();
                            assert!(
                                cov.is_set(bits::GET_PET_DANGLING)
                                    || cov.is_set(bits::PUT_PET_LONG_NAME)
                            );
                        }
                    }
                }
            }
        }
    }
}
