//! Resource-relation inference between operations.
//!
//! A response field of one operation is linked to a parameter of another
//! when their normalized names match, either directly or once the
//! producer's resource name is used as a prefix or suffix
//! (`id` from `POST /store` feeds `store_id` and `stores_id`).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::openapi::{ApiSpec, Method, OperationDescriptor, SpecError};

/// Lowercase stem tokens of an identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormalizedName {
    pub tokens: Vec<String>,
}

impl NormalizedName {
    pub fn joined(&self) -> String {
        self.tokens.join("_")
    }
}

pub fn normalize_name(raw: &str) -> NormalizedName {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in raw.chars() {
        if !c.is_alphanumeric() {
            flush(&mut current, &mut tokens);
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower {
            flush(&mut current, &mut tokens);
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        current.extend(c.to_lowercase());
    }
    flush(&mut current, &mut tokens);
    if tokens.is_empty() {
        tokens.push(raw.to_lowercase());
    }
    NormalizedName { tokens }
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(stem(current));
        current.clear();
    }
}

/// Plural-stripping stemmer, iterated to a fixed point so that normalizing
/// an already-normalized name is the identity.
fn stem(word: &str) -> String {
    let mut w = word.to_string();
    loop {
        let next = stem_once(&w);
        if next == w {
            return w;
        }
        w = next;
    }
}

fn stem_once(w: &str) -> String {
    let n = w.chars().count();
    if n <= 3 || !w.is_ascii() {
        return w.to_string();
    }
    if let Some(base) = w.strip_suffix("ies") {
        return format!("{base}y");
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is")) {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

/// The resource a path is about: its last non-parameter segment.
pub fn context_token(path: &str) -> Option<NormalizedName> {
    path.split('/')
        .rev()
        .find(|seg| !seg.is_empty() && !seg.starts_with('{'))
        .map(normalize_name)
}

/// How a consumer parameter name matched a producer field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    /// Field name prefixed or suffixed with the producer's resource.
    Affixed,
    Equal,
}

pub fn relation(
    producer_field: &str,
    producer_path: &str,
    consumer_param: &str,
) -> Option<Relation> {
    let field_leaf = producer_field.rsplit('.').next().unwrap_or(producer_field);
    let f = normalize_name(field_leaf).tokens;
    let c = normalize_name(consumer_param).tokens;
    if c == f {
        return Some(Relation::Equal);
    }
    let ctx = context_token(producer_path)?.tokens;
    let prefixed: Vec<String> = ctx.iter().chain(f.iter()).cloned().collect();
    let suffixed: Vec<String> = f.iter().chain(ctx.iter()).cloned().collect();
    (c == prefixed || c == suffixed).then_some(Relation::Affixed)
}

pub fn names_related(producer_field: &str, producer_path: &str, consumer_param: &str) -> bool {
    relation(producer_field, producer_path, consumer_param).is_some()
}

/// Create, Read, Update, Delete.
pub fn crud_rank(method: Method) -> u8 {
    match method {
        Method::Post => 0,
        Method::Get => 1,
        Method::Put | Method::Patch => 2,
        Method::Delete => 3,
    }
}

/// Fallible variant for method names coming from user input.
pub fn crud_rank_of(method: &str) -> Result<u8, SpecError> {
    method.parse::<Method>().map(crud_rank)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    /// Index into `DependencyGraph::nodes`.
    pub producer: usize,
    pub consumer: usize,
    /// Dotted path of the response field.
    pub field: String,
    pub param: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub path: String,
    pub method: Method,
    pub crud_rank: u8,
}

impl Node {
    pub fn label(&self) -> String {
        format!("{} {}", self.method, self.path)
    }
}

/// Directed multigraph over operations. Node `i` is `spec.operations[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl DependencyGraph {
    pub fn edges_into(&self, consumer: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.consumer == consumer)
    }

    /// Weakly connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.producer), find(&mut parent, e.consumer));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of_group: Vec<usize> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            match root_of_group.iter().position(|&g| g == r) {
                Some(k) => groups[k].push(i),
                None => {
                    root_of_group.push(r);
                    groups.push(vec![i]);
                }
            }
        }
        groups
    }
}

pub fn build_dependency_graph(spec: &ApiSpec) -> DependencyGraph {
    let nodes: Vec<Node> = spec
        .operations
        .iter()
        .map(|op| Node {
            path: op.path.clone(),
            method: op.method,
            crud_rank: crud_rank(op.method),
        })
        .collect();

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for (pi, producer) in spec.operations.iter().enumerate() {
        let fields = producer.response_fields();
        for (ci, consumer) in spec.operations.iter().enumerate() {
            if pi == ci {
                continue;
            }
            for field in &fields {
                for param in &consumer.parameters {
                    if let Some(rel) = relation(field, &producer.path, &param.name) {
                        if seen.insert((pi, ci, field.clone(), param.name.clone())) {
                            edges.push(Edge {
                                producer: pi,
                                consumer: ci,
                                field: field.clone(),
                                param: param.name.clone(),
                                relation: rel,
                            });
                        }
                    }
                }
            }
        }
    }
    edges.sort_by(|a, b| edge_order(spec, a, b));
    DependencyGraph { nodes, edges }
}

fn edge_order(spec: &ApiSpec, a: &Edge, b: &Edge) -> Ordering {
    let key = |e: &Edge| {
        let p: &OperationDescriptor = &spec.operations[e.producer];
        let c: &OperationDescriptor = &spec.operations[e.consumer];
        (
            p.path.clone(),
            c.path.clone(),
            e.field.clone(),
            e.param.clone(),
            p.method,
            c.method,
        )
    };
    key(a).cmp(&key(b))
}
