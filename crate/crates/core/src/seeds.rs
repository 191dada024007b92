//! Seed corpus generation.
//!
//! One sequence per operation: the operation's producer chain (resolved
//! transitively along dependency-graph edges, each producer once), followed
//! by the operation itself. Linked parameters become references; the rest
//! get example values.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::graph::{context_token, crud_rank, DependencyGraph, Edge, Relation};
use crate::openapi::{
    example_value, ApiSpec, OperationDescriptor, ParamLocation, SchemaKind, SchemaNode,
};
use crate::sequence::{
    parse_sequence, BodyNode, MalformedCorpusFile, ParameterValue, RequestSequence,
    TemplatedRequest,
};
use crate::Warning;

/// Identity of a parameter inside one operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Plain(String),
    Body(String),
}

impl ParamKey {
    fn of(location: &ParamLocation, name: &str) -> Self {
        match location {
            ParamLocation::BodyField(f) => ParamKey::Body(f.clone()),
            _ => ParamKey::Plain(name.to_string()),
        }
    }
}

/// A resolved link: `param` is filled from `field` of the request at
/// `position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub param: ParamKey,
    pub position: usize,
    pub field: String,
}

/// Edges kept for chain building. In a two-cycle (A feeds B, B feeds A) the
/// edge whose consumer has the lower CRUD rank is dropped.
pub struct ChainEdges<'g> {
    graph: &'g DependencyGraph,
    dropped: HashSet<usize>,
}

impl<'g> ChainEdges<'g> {
    pub fn new(graph: &'g DependencyGraph, warnings: &mut Vec<Warning>) -> Self {
        let mut pairs = BTreeSet::new();
        for e in &graph.edges {
            pairs.insert((e.producer, e.consumer));
        }
        let mut dropped = HashSet::new();
        let mut reported = BTreeSet::new();
        for (i, e) in graph.edges.iter().enumerate() {
            let reverse = pairs.contains(&(e.consumer, e.producer));
            let (pr, cr) = (
                graph.nodes[e.producer].crud_rank,
                graph.nodes[e.consumer].crud_rank,
            );
            if reverse && cr < pr {
                dropped.insert(i);
                if reported.insert((e.producer, e.consumer)) {
                    warnings.push(Warning::new(
                        "corpus_gen",
                        format!(
                            "cycle between {} and {}: ignoring links into {}",
                            graph.nodes[e.producer].label(),
                            graph.nodes[e.consumer].label(),
                            graph.nodes[e.consumer].label()
                        ),
                    ));
                }
            }
        }
        Self { graph, dropped }
    }

    /// Usable edges into `consumer` for parameter `param`, best first.
    pub fn candidates(&self, spec: &ApiSpec, consumer: usize, param: &str) -> Vec<&'g Edge> {
        let mut out: Vec<(usize, &Edge)> = self
            .graph
            .edges
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                e.consumer == consumer && e.param == param && !self.dropped.contains(i)
            })
            .collect();
        out.sort_by_key(|(i, e)| (preference(spec, e), *i));
        out.into_iter().map(|(_, e)| e).collect()
    }
}

/// Lower is better: producers ranked after the consumer in CRUD order come
/// last, then same-resource producers first, then affix matches, then
/// lower CRUD rank.
fn preference(spec: &ApiSpec, e: &Edge) -> (bool, u8, u8) {
    let p = &spec.operations[e.producer];
    let c = &spec.operations[e.consumer];
    let late = crud_rank(p.method) > crud_rank(c.method);
    let class =
        if context_token(&p.path).is_some() && context_token(&p.path) == context_token(&c.path) {
            0
        } else if e.relation == Relation::Affixed {
            1
        } else {
            2
        };
    (late, class, crud_rank(p.method))
}

struct ChainEntry {
    op: usize,
    links: Vec<Link>,
}

struct ChainBuilder<'a, 'g> {
    spec: &'a ApiSpec,
    edges: &'a ChainEdges<'g>,
    chain: Vec<ChainEntry>,
    stack: Vec<usize>,
    warnings: Vec<Warning>,
}

impl ChainBuilder<'_, '_> {
    fn resolve(&mut self, op: usize) -> usize {
        if let Some(pos) = self.chain.iter().position(|c| c.op == op) {
            return pos;
        }
        self.stack.push(op);
        let mut links = Vec::new();
        let descriptor = &self.spec.operations[op];
        for param in &descriptor.parameters {
            for cand in self.edges.candidates(self.spec, op, &param.name) {
                if self.stack.contains(&cand.producer) {
                    self.warnings.push(Warning::new(
                        "corpus_gen",
                        format!(
                            "cycle: {} already pending while resolving `{}` of {}",
                            self.spec.operations[cand.producer].label(),
                            param.name,
                            descriptor.label()
                        ),
                    ));
                    continue;
                }
                let position = self.resolve(cand.producer);
                links.push(Link {
                    param: ParamKey::of(&param.location, &param.name),
                    position,
                    field: cand.field.clone(),
                });
                break;
            }
        }
        self.stack.pop();
        self.chain.push(ChainEntry { op, links });
        self.chain.len() - 1
    }
}

/// Builds a request for `op`, taking values from `links` where present and
/// example values elsewhere.
pub fn build_request<R: Rng + ?Sized>(
    op: &OperationDescriptor,
    links: &[Link],
    rng: &mut R,
    warnings: &mut Vec<Warning>,
) -> TemplatedRequest {
    let linked = |key: &ParamKey| {
        links
            .iter()
            .find(|l| &l.param == key)
            .map(|l| ParameterValue::Reference {
                request: l.position,
                field: l.field.clone(),
            })
    };
    let mut req = TemplatedRequest::new(op.method, op.path.clone());
    for p in op.plain_parameters() {
        let v = linked(&ParamKey::Plain(p.name.clone()))
            .unwrap_or_else(|| ParameterValue::Literal(example_value(&p.schema, rng, warnings)));
        req.params.insert(p.name.clone(), v);
    }
    if let Some(schema) = &op.request_body {
        req.body = Some(if op.json_body {
            body_tree(schema, String::new(), &linked, rng, warnings)
        } else {
            BodyNode::Leaf(ParameterValue::Literal(example_value(
                schema, rng, warnings,
            )))
        });
    }
    req
}

fn body_tree<R: Rng + ?Sized>(
    schema: &SchemaNode,
    prefix: String,
    linked: &dyn Fn(&ParamKey) -> Option<ParameterValue>,
    rng: &mut R,
    warnings: &mut Vec<Warning>,
) -> BodyNode {
    if schema.kind == SchemaKind::Object && !schema.properties.is_empty() {
        let children = schema
            .properties
            .iter()
            .map(|(name, child)| {
                let path = if prefix.is_empty() {
                    name.clone()
                } else {
                    format!("{prefix}.{name}")
                };
                (name.clone(), body_tree(child, path, linked, rng, warnings))
            })
            .collect();
        return BodyNode::Object(children);
    }
    let value = linked(&ParamKey::Body(prefix))
        .unwrap_or_else(|| ParameterValue::Literal(example_value(schema, rng, warnings)));
    BodyNode::Leaf(value)
}

/// The seed sequence for one operation.
pub fn sequence_for<R: Rng + ?Sized>(
    spec: &ApiSpec,
    edges: &ChainEdges<'_>,
    op: usize,
    rng: &mut R,
    warnings: &mut Vec<Warning>,
) -> RequestSequence {
    let mut builder = ChainBuilder {
        spec,
        edges,
        chain: Vec::new(),
        stack: Vec::new(),
        warnings: Vec::new(),
    };
    builder.resolve(op);
    warnings.append(&mut builder.warnings);
    let requests = builder
        .chain
        .iter()
        .map(|entry| build_request(&spec.operations[entry.op], &entry.links, rng, warnings))
        .collect();
    RequestSequence::new(requests)
}

pub fn generate_corpus<R: Rng + ?Sized>(
    spec: &ApiSpec,
    graph: &DependencyGraph,
    rng: &mut R,
) -> (Vec<RequestSequence>, Vec<Warning>) {
    let mut warnings = Vec::new();
    let edges = ChainEdges::new(graph, &mut warnings);
    let corpus = (0..spec.operations.len())
        .map(|op| sequence_for(spec, &edges, op, rng, &mut warnings))
        .collect();
    (corpus, warnings)
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusDirError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Malformed {
        path: PathBuf,
        source: MalformedCorpusFile,
    },
}

/// Writes `corpus/<k>.json`, zero-padded to at least four digits.
pub fn write_corpus_dir(
    dir: &Path,
    corpus: &[RequestSequence],
) -> Result<Vec<PathBuf>, CorpusDirError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusDirError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let width = corpus.len().to_string().len().max(4);
    let mut written = Vec::new();
    for (k, seq) in corpus.iter().enumerate() {
        let path = dir.join(format!("{k:0width$}.json"));
        fs::write(&path, seq.serialize()).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `*.json` file in `dir`, in file-name order. A missing
/// directory is an empty corpus.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<RequestSequence>, CorpusDirError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(CorpusDirError::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(|source| CorpusDirError::Io {
                path: path.clone(),
                source,
            })?;
            parse_sequence(&text).map_err(|source| CorpusDirError::Malformed { path, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_dependency_graph;
    use crate::openapi::{parse_spec, Method};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn minipet_corpus(seed: u64) -> (ApiSpec, Vec<RequestSequence>) {
        let spec = parse_spec(crate::MINIPET_SPEC).unwrap();
        let graph = build_dependency_graph(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (corpus, _) = generate_corpus(&spec, &graph, &mut rng);
        (spec, corpus)
    }

    fn labels(seq: &RequestSequence) -> Vec<String> {
        seq.requests.iter().map(TemplatedRequest::label).collect()
    }

    #[test]
    fn pet_lookup_chain() {
        let (spec, corpus) = minipet_corpus(1);
        assert_eq!(corpus.len(), spec.operations.len());
        let get_pet = &corpus[spec.operation_index("/pet/{id}", Method::Get).unwrap()];
        assert_eq!(
            labels(get_pet),
            ["POST /store", "POST /pet", "GET /pet/{id}"]
        );
        let store_id = match &get_pet.requests[1].body {
            Some(BodyNode::Object(c)) => c.iter().find(|(k, _)| k == "store_id").unwrap().1.clone(),
            other => panic!("{other:?}"),
        };
        assert_eq!(
            store_id,
            BodyNode::Leaf(ParameterValue::Reference {
                request: 0,
                field: "id".into()
            })
        );
        assert_eq!(
            get_pet.requests[2].params["id"],
            ParameterValue::Reference {
                request: 1,
                field: "id".into()
            }
        );
    }

    #[test]
    fn store_operations_link_to_store_creation() {
        let (spec, corpus) = minipet_corpus(1);
        for method in [Method::Get, Method::Put, Method::Delete] {
            let seq = &corpus[spec.operation_index("/store/{id}", method).unwrap()];
            assert_eq!(
                labels(seq),
                ["POST /store".to_string(), format!("{method} /store/{{id}}")]
            );
        }
        let get_store = &corpus[1];
        assert_eq!(
            get_store.requests[1].params["voucher"],
            ParameterValue::literal("a")
        );
        assert_eq!(corpus[0].requests.len(), 1);
    }

    #[test]
    fn single_operation_spec() {
        let spec = parse_spec(
            "paths:\n  /health:\n    get:\n      responses: {'200': {description: ok}}\n",
        )
        .unwrap();
        let graph = build_dependency_graph(&spec);
        let (corpus, _) = generate_corpus(&spec, &graph, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(corpus.len(), 1);
        assert_eq!(labels(&corpus[0]), ["GET /health"]);
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(minipet_corpus(3).1, minipet_corpus(3).1);
    }

    #[test]
    fn corpus_dir_round_trip() {
        let (_, corpus) = minipet_corpus(1);
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpus_dir(dir.path(), &corpus).unwrap();
        assert_eq!(files[0].file_name().unwrap(), "0000.json");
        assert_eq!(load_corpus_dir(dir.path()).unwrap(), corpus);
        assert!(load_corpus_dir(&dir.path().join("missing"))
            .unwrap()
            .is_empty());
        fs::write(
            dir.path().join("9999.json"),
            "{\"version\":1,\"requests\":[]}",
        )
        .unwrap();
        assert!(matches!(
            load_corpus_dir(dir.path()),
            Err(CorpusDirError::Malformed { .. })
        ));
    }
}
