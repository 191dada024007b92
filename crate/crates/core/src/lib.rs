//! Coverage-guided, stateful REST API fuzzing.
//!
//! The pipeline reads an OpenAPI document ([`openapi`]), infers which
//! response fields feed which request parameters ([`graph`]), builds a seed
//! corpus of linked request sequences ([`seeds`]), and then runs a
//! select → mutate → execute → check → coverage loop ([`campaign`]) against a
//! live HTTP target. [`mock`] ships a small stateful target with a simulated
//! coverage agent so the whole loop can be exercised locally.

pub mod campaign;
pub mod config;
pub mod coverage;
pub mod graph;
pub mod harness;
pub mod mock;
pub mod mutation;
pub mod openapi;
pub mod report;
pub mod scheduler;
pub mod seeds;
pub mod sequence;

mod hash;
mod pattern;

pub use campaign::{run_campaign, tick_stats, CampaignStats};
pub use config::CampaignConfig;
pub use coverage::{EndpointCoverageMap, LineCoverageMap};
pub use graph::DependencyGraph;
pub use openapi::{parse_spec, ApiSpec, Method};
pub use sequence::{ParameterValue, RequestSequence, TemplatedRequest};

use std::fmt;

/// A non-fatal condition raised while generating, mutating or executing
/// sequences. The campaign turns these into `warning` events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub source: &'static str,
    pub message: String,
}

impl Warning {
    pub fn new(source: &'static str, message: impl Into<String>) -> Self {
        Self {
            source,
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.source, self.message)
    }
}

/// Bundled fixture: the minipet OpenAPI document served by [`mock`].
pub const MINIPET_SPEC: &str = include_str!("../fixtures/minipet.yaml");
