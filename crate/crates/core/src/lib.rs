//! Plan-aware training signal for learned cardinality estimators.
//!
//! A query's left-deep plans are the source-to-sink paths of its plan graph.
//! Edge costs come from a simple analytic cost model over sub-plan
//! cardinalities. Relaxing shortest-path plan search to an electrical flow
//! yields a smooth loss, Flow-Loss, whose gradient tells an estimator which
//! cardinalities matter for plan choice.
//!
//! Modules, bottom-up:
//!
//! - [`join_model`]: schemas, queries, join graphs, connected sub-plans
//! - [`plan_graph`]: the sub-plan DAG and path enumeration
//! - [`cost_model`]: edge costs and their cardinality gradients
//! - [`plan_search`]: P-Opt, P-Cost, P-Error, Q-Error
//! - [`flow_solver`]: electrical flows on the plan graph
//! - [`flow_loss`]: Flow-Loss, its gradient, sensitivity sweeps
//! - [`featurize`]: sub-plan feature vectors
//! - [`estimator`]: a small feed-forward estimator and its training loop
//! - [`synthdb`]: synthetic databases, exact and wander-join labels
//! - [`workload`]: template-driven query generation and splits
//! - [`pipeline`]: file-level orchestration behind the `flowloss` binary

pub mod cost_model;
pub mod error;
pub mod estimator;
pub mod featurize;
pub mod flow_loss;
pub mod flow_solver;
pub mod join_model;
pub mod plan_graph;
pub mod pipeline;
pub mod plan_search;
pub mod synthdb;
pub mod workload;

pub use error::{Error, Result};
