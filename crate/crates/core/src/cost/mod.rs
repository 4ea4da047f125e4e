//! Cost accounting, cost sharing, run metrics and small-world graph measures.

pub mod graph;
pub mod metrics;
pub mod model;

pub use graph::{graph_efficiency, hybrid_topology, GraphError, GraphMetrics};
pub use metrics::{parse_metrics_csv, RunMetrics, SeriesRow};
pub use model::{split_cost, CostLedger, CostModel, CostModelError, LedgerEntry};
