//! Segment-based k-anonymization driven by historical paths.
//!
//! Each record pair is resolved either to the historical paths between its
//! endpoints (each weighted `1/h`) or, with no hits, to the shortest path
//! (weight 1 per segment). Segments whose accumulated weight reaches `k` are
//! published; the rest are suppressed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedpoint::{AccumQ48, WeightQ16};
use crate::graph::{GeoPoint, NodeId, RoadGraph};
use crate::history::{group_by_user, history_search, hop_limit_from, HistoryLog, HopLimit};
use crate::scalar::Scalar;
use crate::shortest_path::{dijkstra, Path};

/// Hop slack used when none is given.
pub const DEFAULT_DELTA_H: u32 = 5;

/// One raw location sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationRecord<T> {
    pub user: u64,
    pub point: GeoPoint<T>,
    /// Seconds since the epoch.
    pub ts: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct RecordPair {
    pub user: u64,
    pub s: NodeId,
    pub e: NodeId,
}

/// Undirected road segment, stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SegmentKey {
    pub a: NodeId,
    pub b: NodeId,
}

impl SegmentKey {
    pub fn new(x: NodeId, y: NodeId) -> Option<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(SegmentKey { a: x, b: y }),
            std::cmp::Ordering::Greater => Some(SegmentKey { a: y, b: x }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

/// Segments of a node sequence, one per consecutive pair.
pub fn segments(nodes: &[NodeId]) -> impl Iterator<Item = SegmentKey> + '_ {
    nodes.windows(2).filter_map(|w| SegmentKey::new(w[0], w[1]))
}

/// Weighted traversal counts per segment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentCounter {
    table: BTreeMap<SegmentKey, AccumQ48>,
    seen: BTreeSet<SegmentKey>,
}

impl SegmentCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: SegmentKey, w: WeightQ16) -> Result<()> {
        self.seen.insert(key);
        if w.raw() > 0 {
            let slot = self.table.entry(key).or_insert(AccumQ48::ZERO);
            *slot = slot.add(w)?;
        }
        Ok(())
    }

    pub fn apply<T>(&mut self, sel: &Selection<T>) -> Result<()> {
        match sel {
            Selection::History { paths, weight } => {
                for p in paths {
                    for key in segments(p) {
                        self.add(key, *weight)?;
                    }
                }
            }
            Selection::Shortest(path) => {
                for key in segments(&path.nodes) {
                    self.add(key, WeightQ16::unit())?;
                }
            }
            Selection::Nothing => {}
        }
        Ok(())
    }

    pub fn merge(mut self, other: SegmentCounter) -> Result<Self> {
        for (key, acc) in other.table {
            let slot = self.table.entry(key).or_insert(AccumQ48::ZERO);
            *slot = slot.merge(acc)?;
        }
        self.seen.extend(other.seen);
        Ok(self)
    }

    pub fn get(&self, key: SegmentKey) -> AccumQ48 {
        self.table.get(&key).copied().unwrap_or(AccumQ48::ZERO)
    }

    /// Every segment that ever received a contribution.
    pub fn seen(&self) -> &BTreeSet<SegmentKey> {
        &self.seen
    }

    /// Nonzero accumulators in key order.
    pub fn iter(&self) -> impl Iterator<Item = (SegmentKey, AccumQ48)> + '_ {
        self.table.iter().map(|(k, v)| (*k, *v))
    }

    pub fn total_raw(&self) -> u128 {
        self.table.values().map(|a| a.raw() as u128).sum()
    }

    /// `node_a,node_b,raw` for every seen segment.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node_a,node_b,raw")?;
        for key in &self.seen {
            writeln!(w, "{},{},{}", key.a, key.b, self.get(*key).raw())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: R, name: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut counter = SegmentCounter::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::parse(name, line, e.to_string()))?;
            let field = |j: usize| -> Result<u64> {
                row.get(j)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::parse(name, line, "expected node_a,node_b,raw"))
            };
            let (a, b, raw) = (field(0)?, field(1)?, field(2)?);
            let key = u32::try_from(a)
                .ok()
                .zip(u32::try_from(b).ok())
                .filter(|(a, b)| a < b)
                .map(|(a, b)| SegmentKey { a: NodeId(a), b: NodeId(b) })
                .ok_or_else(|| Error::parse(name, line, "segment key must satisfy node_a < node_b"))?;
            counter.seen.insert(key);
            if raw > 0 {
                counter.table.insert(key, AccumQ48::from_raw(raw));
            }
        }
        Ok(counter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    None,
    NoHits,
    Disconnected,
}

impl fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FallbackReason::None => "none",
            FallbackReason::NoHits => "no_hits",
            FallbackReason::Disconnected => "disconnected",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SelectionReport {
    pub pair: RecordPair,
    pub used_history: bool,
    pub h: usize,
    pub fallback_reason: FallbackReason,
}

/// What a record pair contributes to the counter.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection<T> {
    History { paths: Vec<Vec<NodeId>>, weight: WeightQ16 },
    Shortest(Path<T>),
    Nothing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome<T> {
    pub report: SelectionReport,
    pub selection: Selection<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AnonymizeParams {
    pub delta_h: u32,
    pub hop_filter: bool,
}

impl Default for AnonymizeParams {
    fn default() -> Self {
        AnonymizeParams {
            delta_h: DEFAULT_DELTA_H,
            hop_filter: true,
        }
    }
}

/// Turns raw records into consecutive per-user node pairs.
///
/// Users come out in ascending id order, each in timestamp order. Pairs whose
/// endpoints snap to the same node are dropped.
pub fn pair_records<T: Scalar>(graph: &RoadGraph<T>, records: &[LocationRecord<T>]) -> Vec<RecordPair> {
    let mut pairs = Vec::new();
    if graph.is_empty() {
        return pairs;
    }
    for (user, recs) in group_by_user(records) {
        let nodes: Vec<NodeId> = recs
            .iter()
            .map(|r| graph.nearest_node(&r.point).expect("nonempty graph"))
            .collect();
        for w in nodes.windows(2) {
            if w[0] != w[1] {
                pairs.push(RecordPair { user, s: w[0], e: w[1] });
            }
        }
    }
    pairs
}

/// Resolves one pair to historical paths or its shortest path without
/// touching any counter.
pub fn evaluate_pair<T: Scalar>(
    graph: &RoadGraph<T>,
    log: &HistoryLog,
    pair: RecordPair,
    params: AnonymizeParams,
) -> PairOutcome<T> {
    let shortest = dijkstra(graph, pair.s, pair.e);
    let limit = if params.hop_filter {
        hop_limit_from(shortest.as_ref().map(Path::hops), params.delta_h)
    } else {
        HopLimit::Unlimited
    };
    let hit = history_search(log, pair.s, pair.e, limit);

    let (selection, fallback_reason) = if hit.h > 0 {
        let weight = WeightQ16::reciprocal(hit.h as u64).expect("h > 0");
        (
            Selection::History {
                paths: hit.paths,
                weight,
            },
            FallbackReason::None,
        )
    } else if let Some(path) = shortest {
        (Selection::Shortest(path), FallbackReason::NoHits)
    } else {
        (Selection::Nothing, FallbackReason::Disconnected)
    };
    PairOutcome {
        report: SelectionReport {
            pair,
            used_history: hit.h > 0,
            h: hit.h,
            fallback_reason,
        },
        selection,
    }
}

pub fn process_record_pair<T: Scalar>(
    graph: &RoadGraph<T>,
    log: &HistoryLog,
    counter: &mut SegmentCounter,
    pair: RecordPair,
    params: AnonymizeParams,
) -> Result<SelectionReport> {
    let outcome = evaluate_pair(graph, log, pair, params);
    counter.apply(&outcome.selection)?;
    Ok(outcome.report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anonymized {
    pub reports: Vec<SelectionReport>,
    pub counter: SegmentCounter,
}

/// Processes every pair. With `threads > 1` pairs are evaluated on a rayon
/// pool and per-thread counters merged; the result is identical to the
/// sequential run because accumulation is plain integer addition.
pub fn anonymize<T: Scalar>(
    graph: &RoadGraph<T>,
    log: &HistoryLog,
    pairs: &[RecordPair],
    params: AnonymizeParams,
    threads: usize,
) -> Result<Anonymized> {
    if threads <= 1 {
        let mut counter = SegmentCounter::new();
        let mut reports = Vec::with_capacity(pairs.len());
        for &pair in pairs {
            reports.push(process_record_pair(graph, log, &mut counter, pair, params)?);
        }
        return Ok(Anonymized { reports, counter });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let outcomes: Vec<PairOutcome<T>> = pairs
            .par_iter()
            .map(|&pair| evaluate_pair(graph, log, pair, params))
            .collect();
        let counter = outcomes
            .par_iter()
            .try_fold(SegmentCounter::new, |mut c, o| {
                c.apply(&o.selection)?;
                Ok(c)
            })
            .try_reduce(SegmentCounter::new, |a, b| a.merge(b))?;
        Ok(Anonymized {
            reports: outcomes.into_iter().map(|o| o.report).collect(),
            counter,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PublishedSegment {
    pub key: SegmentKey,
    pub count: AccumQ48,
}

impl PublishedSegment {
    pub fn count_f64(&self) -> f64 {
        self.count.to_float()
    }
}

/// Segments whose count meets `k`, in key order.
pub fn publish(counter: &SegmentCounter, k: u32) -> Vec<PublishedSegment> {
    counter
        .iter()
        .filter(|(_, acc)| acc.meets_threshold(k))
        .map(|(key, count)| PublishedSegment { key, count })
        .collect()
}
