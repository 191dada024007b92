//! OpenAPI 3.x ingestion.
//!
//! Only what the fuzzer needs is modelled: operations (path + method),
//! their parameters, the JSON request body and the listed responses.
//! `$ref`s are resolved within the same document; anything outside it is
//! rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::pattern;
use crate::Warning;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unresolvable $ref `{0}`")]
    UnresolvableRef(String),
    #[error("document has no `paths` object")]
    MissingPaths,
    #[error("duplicate status {status} for {method} {path}")]
    DuplicateStatus {
        path: String,
        method: Method,
        status: String,
    },
    #[error("unknown operation {method} {path}")]
    UnknownOperation { path: String, method: Method },
    #[error("unknown HTTP method `{0}`")]
    UnknownMethod(String),
}

/// The five methods the fuzzer models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Post,
    Get,
    Put,
    Patch,
    Delete,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Post,
        Method::Get,
        Method::Put,
        Method::Patch,
        Method::Delete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Post => "POST",
            Method::Get => "GET",
            Method::Put => "PUT",
            Method::Patch => "PATCH",
            Method::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpecError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaNode {
    pub kind: SchemaKind,
    pub example: Option<Value>,
    /// Only ever set for `SchemaKind::String`.
    pub pattern: Option<String>,
    /// Object members in document order.
    pub properties: Vec<(String, SchemaNode)>,
    pub items: Option<Box<SchemaNode>>,
}

impl SchemaNode {
    pub fn of_kind(kind: SchemaKind) -> Self {
        Self {
            kind,
            example: None,
            pattern: None,
            properties: Vec::new(),
            items: None,
        }
    }

    pub fn property(&self, name: &str) -> Option<&SchemaNode> {
        self.properties
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    /// Follows a dotted path through object members. Numeric segments step
    /// into array items.
    pub fn at_path(&self, dotted: &str) -> Option<&SchemaNode> {
        if dotted.is_empty() {
            return Some(self);
        }
        let mut node = self;
        for seg in dotted.split('.') {
            node = match node.kind {
                SchemaKind::Array if seg.parse::<usize>().is_ok() => node.items.as_deref()?,
                _ => node.property(seg)?,
            };
        }
        Some(node)
    }

    /// Dotted paths of every non-object leaf, in document order.
    pub fn leaf_fields(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_leaves(self, String::new(), &mut out);
        out
    }
}

fn collect_leaves(node: &SchemaNode, prefix: String, out: &mut Vec<String>) {
    if node.kind == SchemaKind::Object && !node.properties.is_empty() {
        for (name, child) in &node.properties {
            let p = if prefix.is_empty() {
                name.clone()
            } else {
                format!("{prefix}.{name}")
            };
            collect_leaves(child, p, out);
        }
    } else if !prefix.is_empty() {
        out.push(prefix);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    /// Dotted field path into the JSON request body.
    BodyField(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDescriptor {
    pub name: String,
    pub location: ParamLocation,
    pub required: bool,
    pub schema: SchemaNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatusSpec {
    Code(u16),
    Default,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDescriptor {
    pub status: StatusSpec,
    pub schema: Option<SchemaNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperationDescriptor {
    pub path: String,
    pub method: Method,
    pub parameters: Vec<ParameterDescriptor>,
    pub request_body: Option<SchemaNode>,
    /// True when the body media type is JSON; otherwise the body is sent as
    /// opaque bytes.
    pub json_body: bool,
    pub responses: Vec<ResponseDescriptor>,
}

impl OperationDescriptor {
    /// Parameters outside the request body, in declaration order.
    pub fn plain_parameters(&self) -> impl Iterator<Item = &ParameterDescriptor> {
        self.parameters
            .iter()
            .filter(|p| !matches!(p.location, ParamLocation::BodyField(_)))
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterDescriptor> {
        self.plain_parameters().find(|p| p.name == name)
    }

    /// Leaf fields of every listed response body, deduplicated, in order.
    pub fn response_fields(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.responses {
            if let Some(schema) = &r.schema {
                for f in schema.leaf_fields() {
                    if seen.insert(f.clone()) {
                        out.push(f);
                    }
                }
            }
        }
        out
    }

    pub fn has_response_field(&self, field: &str) -> bool {
        self.responses
            .iter()
            .filter_map(|r| r.schema.as_ref())
            .any(|s| s.at_path(field).is_some())
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.method, self.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiSpec {
    pub base_url: String,
    pub operations: Vec<OperationDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExpectedStatuses {
    pub codes: BTreeSet<u16>,
    pub wildcard: bool,
}

impl ExpectedStatuses {
    pub fn admits(&self, status: u16) -> bool {
        self.wildcard || self.codes.contains(&status)
    }
}

impl ApiSpec {
    pub fn operation(&self, path: &str, method: Method) -> Option<&OperationDescriptor> {
        self.operations
            .iter()
            .find(|op| op.path == path && op.method == method)
    }

    pub fn operation_index(&self, path: &str, method: Method) -> Option<usize> {
        self.operations
            .iter()
            .position(|op| op.path == path && op.method == method)
    }

    pub fn expected_statuses(
        &self,
        path: &str,
        method: Method,
    ) -> Result<ExpectedStatuses, SpecError> {
        let op = self
            .operation(path, method)
            .ok_or_else(|| SpecError::UnknownOperation {
                path: path.to_string(),
                method,
            })?;
        let mut out = ExpectedStatuses::default();
        for r in &op.responses {
            match r.status {
                StatusSpec::Code(c) => {
                    out.codes.insert(c);
                }
                StatusSpec::Default => out.wildcard = true,
            }
        }
        Ok(out)
    }

    /// Every (path, method, status) triple listed in the document, in
    /// document order. `default` responses carry no status and are skipped.
    pub fn listed_triples(&self) -> Vec<(String, Method, u16)> {
        let mut out = Vec::new();
        for op in &self.operations {
            for r in &op.responses {
                if let StatusSpec::Code(c) = r.status {
                    out.push((op.path.clone(), op.method, c));
                }
            }
        }
        out
    }
}

pub fn parse_spec(document: &str) -> Result<ApiSpec, SpecError> {
    parse_spec_with_warnings(document).map(|(spec, _)| spec)
}

pub fn parse_spec_with_warnings(document: &str) -> Result<(ApiSpec, Vec<Warning>), SpecError> {
    let root = load_document(document)?;
    let mut parser = Parser {
        root: &root,
        warnings: Vec::new(),
    };
    let spec = parser.spec()?;
    Ok((spec, parser.warnings))
}

fn load_document(document: &str) -> Result<Value, SpecError> {
    let trimmed = document.trim_start_matches('\u{feff}').trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed)
            .map_err(|e| SpecError::MalformedDocument(e.to_string()));
    }
    let yaml: serde_yaml::Value =
        serde_yaml::from_str(document).map_err(|e| SpecError::MalformedDocument(e.to_string()))?;
    yaml_to_json(yaml)
}

fn yaml_to_json(v: serde_yaml::Value) -> Result<Value, SpecError> {
    use serde_yaml::Value as Y;
    Ok(match v {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => serde_json::to_value(&n).unwrap_or(Value::Null),
        Y::String(s) => Value::String(s),
        Y::Sequence(items) => Value::Array(
            items
                .into_iter()
                .map(yaml_to_json)
                .collect::<Result<_, _>>()?,
        ),
        Y::Mapping(m) => {
            let mut out = Map::new();
            for (k, v) in m {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    other => {
                        return Err(SpecError::MalformedDocument(format!(
                            "unsupported mapping key {other:?}"
                        )))
                    }
                };
                if out.contains_key(&key) {
                    return Err(SpecError::MalformedDocument(format!(
                        "duplicate key `{key}`"
                    )));
                }
                out.insert(key, yaml_to_json(v)?);
            }
            Value::Object(out)
        }
        Y::Tagged(t) => yaml_to_json(t.value)?,
    })
}

const MAX_SCHEMA_DEPTH: usize = 16;
const MAX_REF_HOPS: usize = 32;

struct Parser<'a> {
    root: &'a Value,
    warnings: Vec<Warning>,
}

impl<'a> Parser<'a> {
    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(Warning::new("openapi", msg));
    }

    fn deref(&self, mut v: &'a Value) -> Result<&'a Value, SpecError> {
        for _ in 0..MAX_REF_HOPS {
            let Some(r) = v.get("$ref").and_then(Value::as_str) else {
                return Ok(v);
            };
            let pointer = r
                .strip_prefix('#')
                .ok_or_else(|| SpecError::UnresolvableRef(r.to_string()))?;
            v = self
                .root
                .pointer(pointer)
                .ok_or_else(|| SpecError::UnresolvableRef(r.to_string()))?;
        }
        Err(SpecError::UnresolvableRef(
            "reference chain too long".into(),
        ))
    }

    fn spec(&mut self) -> Result<ApiSpec, SpecError> {
        let root = self.root;
        if !root.is_object() {
            return Err(SpecError::MalformedDocument(
                "top level is not a mapping".into(),
            ));
        }
        let paths = root
            .get("paths")
            .and_then(Value::as_object)
            .ok_or(SpecError::MissingPaths)?;
        let base_url = root
            .get("servers")
            .and_then(Value::as_array)
            .and_then(|s| s.first())
            .and_then(|s| s.get("url"))
            .and_then(Value::as_str)
            .unwrap_or("http://localhost")
            .trim_end_matches('/')
            .to_string();

        let mut operations = Vec::new();
        for (path, item) in paths {
            let item = self.deref(item)?;
            let Some(item) = item.as_object() else {
                continue;
            };
            let shared = match item.get("parameters") {
                Some(p) => self.parameters(p)?,
                None => Vec::new(),
            };
            for (key, op) in item {
                if matches!(
                    key.as_str(),
                    "parameters" | "summary" | "description" | "servers" | "$ref"
                ) || key.starts_with("x-")
                {
                    continue;
                }
                match key.parse::<Method>() {
                    Ok(method) => {
                        let op = self.operation(path, method, op, &shared)?;
                        operations.push(op);
                    }
                    Err(_) => self.warn(format!("ignoring method `{key}` on {path}")),
                }
            }
        }
        Ok(ApiSpec {
            base_url,
            operations,
        })
    }

    fn parameters(&mut self, v: &'a Value) -> Result<Vec<ParameterDescriptor>, SpecError> {
        let mut out = Vec::new();
        let Some(list) = self.deref(v)?.as_array() else {
            return Ok(out);
        };
        for p in list {
            let p = self.deref(p)?;
            let name = p.get("name").and_then(Value::as_str).unwrap_or_default();
            if name.is_empty() {
                self.warn("ignoring parameter without a name");
                continue;
            }
            let location = match p.get("in").and_then(Value::as_str) {
                Some("path") => ParamLocation::Path,
                Some("query") => ParamLocation::Query,
                Some("header") => ParamLocation::Header,
                other => {
                    self.warn(format!("ignoring parameter `{name}` in {other:?}"));
                    continue;
                }
            };
            let schema = if let Some(s) = p.get("schema") {
                self.schema(s, 0)?
            } else if let Some(s) = p
                .get("content")
                .and_then(Value::as_object)
                .and_then(|c| c.values().next())
                .and_then(|m| m.get("schema"))
            {
                self.schema(s, 0)?
            } else {
                SchemaNode::of_kind(SchemaKind::String)
            };
            let mut schema = schema;
            if schema.example.is_none() {
                schema.example = p.get("example").cloned();
            }
            let required = location == ParamLocation::Path
                || p.get("required").and_then(Value::as_bool).unwrap_or(false);
            out.push(ParameterDescriptor {
                name: name.to_string(),
                location,
                required,
                schema,
            });
        }
        Ok(out)
    }

    fn operation(
        &mut self,
        path: &str,
        method: Method,
        v: &'a Value,
        shared: &[ParameterDescriptor],
    ) -> Result<OperationDescriptor, SpecError> {
        let v = self.deref(v)?;
        let own = match v.get("parameters") {
            Some(p) => self.parameters(p)?,
            None => Vec::new(),
        };
        let mut parameters: Vec<ParameterDescriptor> = shared
            .iter()
            .filter(|s| {
                !own.iter()
                    .any(|o| o.name == s.name && o.location == s.location)
            })
            .cloned()
            .collect();
        parameters.extend(own);

        for name in template_parameters(path) {
            let declared = parameters
                .iter()
                .any(|p| p.name == name && p.location == ParamLocation::Path);
            if !declared {
                self.warn(format!(
                    "{method} {path}: path parameter `{name}` not declared, assuming a string"
                ));
                parameters.push(ParameterDescriptor {
                    name,
                    location: ParamLocation::Path,
                    required: true,
                    schema: SchemaNode::of_kind(SchemaKind::String),
                });
            }
        }

        let mut request_body = None;
        let mut json_body = false;
        if let Some(body) = v.get("requestBody") {
            let body = self.deref(body)?;
            if let Some(content) = body.get("content").and_then(Value::as_object) {
                let json = content
                    .iter()
                    .find(|(mt, _)| is_json_media(mt))
                    .map(|(_, m)| m);
                match json {
                    Some(media) => {
                        json_body = true;
                        let schema = match media.get("schema") {
                            Some(s) => self.schema(s, 0)?,
                            None => SchemaNode::of_kind(SchemaKind::Object),
                        };
                        request_body = Some(schema);
                    }
                    None if !content.is_empty() => {
                        request_body = Some(SchemaNode::of_kind(SchemaKind::String));
                    }
                    None => {}
                }
            }
        }
        if let Some(schema) = &request_body {
            if json_body {
                let fields = schema.leaf_fields();
                if fields.is_empty() {
                    parameters.push(ParameterDescriptor {
                        name: "body".into(),
                        location: ParamLocation::BodyField(String::new()),
                        required: true,
                        schema: schema.clone(),
                    });
                }
                for f in fields {
                    let leaf = schema.at_path(&f).cloned().expect("leaf exists");
                    let name = f.rsplit('.').next().unwrap_or(&f).to_string();
                    parameters.push(ParameterDescriptor {
                        name,
                        location: ParamLocation::BodyField(f),
                        required: true,
                        schema: leaf,
                    });
                }
            }
        }

        let mut responses: Vec<ResponseDescriptor> = Vec::new();
        if let Some(map) = v.get("responses").and_then(Value::as_object) {
            for (key, r) in map {
                let status = if key == "default" {
                    StatusSpec::Default
                } else {
                    match key.parse::<u16>() {
                        Ok(c) if (100..=599).contains(&c) => StatusSpec::Code(c),
                        _ => {
                            self.warn(format!("{method} {path}: ignoring response key `{key}`"));
                            continue;
                        }
                    }
                };
                if responses.iter().any(|x| x.status == status) {
                    return Err(SpecError::DuplicateStatus {
                        path: path.to_string(),
                        method,
                        status: key.clone(),
                    });
                }
                let r = self.deref(r)?;
                let schema = match r
                    .get("content")
                    .and_then(Value::as_object)
                    .and_then(|c| c.iter().find(|(mt, _)| is_json_media(mt)))
                    .and_then(|(_, m)| m.get("schema"))
                {
                    Some(s) => Some(self.schema(s, 0)?),
                    None => None,
                };
                responses.push(ResponseDescriptor { status, schema });
            }
        }

        Ok(OperationDescriptor {
            path: path.to_string(),
            method,
            parameters,
            request_body,
            json_body,
            responses,
        })
    }

    fn schema(&mut self, v: &'a Value, depth: usize) -> Result<SchemaNode, SpecError> {
        let mut v = self.deref(v)?;
        // Composition keywords are opaque: the first alternative stands in.
        for key in ["allOf", "oneOf", "anyOf"] {
            if let Some(first) = v.get(key).and_then(Value::as_array).and_then(|a| a.first()) {
                v = self.deref(first)?;
                break;
            }
        }
        let declared = match v.get("type") {
            Some(Value::String(t)) => Some(t.as_str()),
            Some(Value::Array(ts)) => ts.iter().filter_map(Value::as_str).find(|t| *t != "null"),
            _ => None,
        };
        let kind = match declared {
            Some("string") => SchemaKind::String,
            Some("integer") => SchemaKind::Integer,
            Some("number") => SchemaKind::Number,
            Some("boolean") => SchemaKind::Boolean,
            Some("array") => SchemaKind::Array,
            Some("object") => SchemaKind::Object,
            _ if v.get("properties").is_some() => SchemaKind::Object,
            _ if v.get("items").is_some() => SchemaKind::Array,
            _ => SchemaKind::String,
        };
        let example = v.get("example").cloned().or_else(|| {
            v.get("enum")
                .and_then(Value::as_array)
                .and_then(|e| e.first())
                .cloned()
        });
        let pattern = match kind {
            SchemaKind::String => v.get("pattern").and_then(Value::as_str).map(str::to_string),
            _ => None,
        };
        let mut node = SchemaNode {
            kind,
            example,
            pattern,
            properties: Vec::new(),
            items: None,
        };
        if depth >= MAX_SCHEMA_DEPTH {
            return Ok(node);
        }
        match kind {
            SchemaKind::Object => {
                if let Some(props) = v.get("properties").and_then(Value::as_object) {
                    for (name, p) in props {
                        let child = self.schema(p, depth + 1)?;
                        node.properties.push((name.clone(), child));
                    }
                }
            }
            SchemaKind::Array => {
                let items = match v.get("items") {
                    Some(i) => self.schema(i, depth + 1)?,
                    None => SchemaNode::of_kind(SchemaKind::String),
                };
                node.items = Some(Box::new(items));
            }
            _ => {}
        }
        Ok(node)
    }
}

fn is_json_media(media_type: &str) -> bool {
    let mt = media_type.split(';').next().unwrap_or("").trim();
    mt == "application/json" || mt.ends_with("+json")
}

/// Names of the `{param}` segments of a path template, in order.
pub fn template_parameters(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

/// Value used for a schema when nothing better is known: the document's
/// example, then a string generated from `pattern`, then the type default.
pub fn example_json<R: Rng + ?Sized>(
    schema: &SchemaNode,
    rng: &mut R,
    warnings: &mut Vec<Warning>,
) -> Value {
    if let Some(ex) = &schema.example {
        return ex.clone();
    }
    match schema.kind {
        SchemaKind::String => {
            if let Some(p) = &schema.pattern {
                match pattern::generate(p, rng) {
                    Ok(s) => return Value::String(s),
                    Err(e) => warnings.push(Warning::new(
                        "example_value",
                        format!("pattern `{p}`: {e}; using the type default"),
                    )),
                }
            }
            Value::String("a".into())
        }
        SchemaKind::Integer => Value::from(1),
        SchemaKind::Number => Value::from(1.0),
        SchemaKind::Boolean => Value::Bool(true),
        SchemaKind::Array => {
            let item = schema
                .items
                .as_deref()
                .cloned()
                .unwrap_or_else(|| SchemaNode::of_kind(SchemaKind::String));
            Value::Array(vec![example_json(&item, rng, warnings)])
        }
        SchemaKind::Object => {
            let mut map = Map::new();
            for (name, child) in &schema.properties {
                map.insert(name.clone(), example_json(child, rng, warnings));
            }
            Value::Object(map)
        }
    }
}

/// [`example_json`] rendered as literal bytes: strings are taken verbatim,
/// everything else as compact JSON text.
pub fn example_value<R: Rng + ?Sized>(
    schema: &SchemaNode,
    rng: &mut R,
    warnings: &mut Vec<Warning>,
) -> Vec<u8> {
    json_literal_bytes(&example_json(schema, rng, warnings))
}

pub(crate) fn json_literal_bytes(v: &Value) -> Vec<u8> {
    match v {
        Value::String(s) => s.as_bytes().to_vec(),
        other => other.to_string().into_bytes(),
    }
}
