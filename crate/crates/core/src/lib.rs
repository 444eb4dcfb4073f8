//! History-aware, segment-based trajectory k-anonymization.
//!
//! Location records are snapped to road-graph nodes and paired per user.
//! Each pair is resolved against a log of prior-period trajectories: if the
//! log holds paths between the pair's endpoints, every segment on those `h`
//! paths receives weight `1/h` (Q16.16, truncated); otherwise the shortest
//! path's segments each receive weight 1. Segments whose accumulated weight
//! reaches `k` are published.
//!
//! Geometry is generic over [`Scalar`] (`f32` or `f64`); counting is exact
//! integer fixed-point arithmetic regardless of the scalar type.

pub mod anonymizer;
pub mod error;
pub mod fixedpoint;
pub mod graph;
pub mod history;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod shortest_path;
pub mod synth;

pub use anonymizer::{
    anonymize, evaluate_pair, pair_records, process_record_pair, publish, AnonymizeParams, FallbackReason,
    PublishedSegment, RecordPair, SegmentCounter, SegmentKey, Selection, SelectionReport,
};
pub use error::{Error, Result};
pub use fixedpoint::{AccumQ48, WeightQ16};
pub use graph::{GeoPoint, GridIndex, NodeId};
pub use history::{build_history_log, history_search, max_hop_for, HistoryEntry, HistoryHit, HistoryLog, HopLimit};
pub use pipeline::{run_in_memory, run_pipeline, HistorySource, PipelineOutput, RunConfig, RunMeta, RunSnapshot};
pub use scalar::Scalar;
pub use shortest_path::{dijkstra, shortest_hop_count};

pub type RoadGraph<T = f64> = graph::RoadGraph<T>;
pub type Path<T = f64> = shortest_path::Path<T>;
pub type LocationRecord<T = f64> = anonymizer::LocationRecord<T>;

pub type RoadGraphF64 = graph::RoadGraph<f64>;
pub type RoadGraphF32 = graph::RoadGraph<f32>;
pub type PathF64 = shortest_path::Path<f64>;
pub type PathF32 = shortest_path::Path<f32>;
pub type GeoPointF64 = graph::GeoPoint<f64>;
pub type GeoPointF32 = graph::GeoPoint<f32>;
pub type LocationRecordF64 = anonymizer::LocationRecord<f64>;
pub type LocationRecordF32 = anonymizer::LocationRecord<f32>;
