//! Historical trajectory database and the single-pass history search.
//!
//! The log is a flat sequence of `(node, run)` entries. A run is one
//! maximal, graph-connected movement of a single user; runs are stored
//! contiguously so that a tracking pass over the log stops exactly where a
//! movement ends.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use crate::anonymizer::LocationRecord;
use crate::error::{Error, Result};
use crate::graph::{NodeId, RoadGraph};
use crate::scalar::Scalar;
use crate::shortest_path::{dijkstra, shortest_hop_count};

pub const LOG_MAGIC: &[u8; 4] = b"THL1";

pub type RunId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HistoryEntry {
    pub node: NodeId,
    pub run: RunId,
}

impl HistoryEntry {
    pub fn new(node: u32, run: RunId) -> Self {
        HistoryEntry { node: NodeId(node), run }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HistoryLog {
    entries: Vec<HistoryEntry>,
}

/// Upper bound on the hops a tracked historical path may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HopLimit {
    Limited(u32),
    Unlimited,
}

impl HopLimit {
    #[inline]
    fn reached(self, c: u32) -> bool {
        match self {
            HopLimit::Limited(max) => c >= max,
            HopLimit::Unlimited => false,
        }
    }
}

/// Paths retrieved for one start/end query, in scan order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HistoryHit {
    pub paths: Vec<Vec<NodeId>>,
    pub h: usize,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps entries after checking run contiguity and that no run repeats a
    /// node in consecutive entries.
    pub fn from_entries(entries: Vec<HistoryEntry>) -> Result<Self> {
        validate_entries(&entries)?;
        Ok(HistoryLog { entries })
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn run_count(&self) -> usize {
        let mut count = 0;
        let mut prev = None;
        for e in &self.entries {
            if prev != Some(e.run) {
                count += 1;
                prev = Some(e.run);
            }
        }
        count
    }

    /// Consecutive entries of one run must be graph neighbors, and every
    /// node must exist.
    pub fn check_against<T: Scalar>(&self, graph: &RoadGraph<T>) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if !graph.contains(e.node) {
                return Err(Error::HistoryFormat(format!("entry {i}: unknown node {}", e.node)));
            }
            if i > 0 {
                let p = self.entries[i - 1];
                if p.run == e.run && !graph.are_adjacent(p.node, e.node) {
                    return Err(Error::HistoryFormat(format!(
                        "entry {i}: nodes {} and {} of run {} are not adjacent",
                        p.node, e.node, e.run
                    )));
                }
            }
        }
        Ok(())
    }

    /// First `len` entries, or the log repeated with fresh run ids until it
    /// reaches `len`. Used to scale the database for throughput runs.
    pub fn resized(&self, len: usize) -> HistoryLog {
        if len <= self.entries.len() || self.entries.is_empty() {
            return HistoryLog {
                entries: self.entries[..len.min(self.entries.len())].to_vec(),
            };
        }
        let span = self.entries.iter().map(|e| e.run).max().map_or(0, |m| m + 1);
        let mut entries = Vec::with_capacity(len);
        let mut copy = 0u32;
        'outer: loop {
            for e in &self.entries {
                if entries.len() == len {
                    break 'outer;
                }
                entries.push(HistoryEntry {
                    node: e.node,
                    run: e.run + copy * span,
                });
            }
            copy += 1;
        }
        HistoryLog { entries }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LOG_MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&e.node.0.to_le_bytes())?;
            w.write_all(&e.run.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::HistoryFormat("truncated header".into()))?;
        if &magic != LOG_MAGIC {
            return Err(Error::HistoryFormat(format!("bad magic {magic:?}")));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)
            .map_err(|_| Error::HistoryFormat("truncated header".into()))?;
        let count = u64::from_le_bytes(count);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() as u64 != count.saturating_mul(8) {
            return Err(Error::HistoryFormat(format!(
                "header declares {count} entries but body has {} bytes",
                body.len()
            )));
        }
        let entries = body
            .chunks_exact(8)
            .map(|c| HistoryEntry {
                node: NodeId(u32::from_le_bytes(c[0..4].try_into().unwrap())),
                run: u32::from_le_bytes(c[4..8].try_into().unwrap()),
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(BufWriter::new(file)).map_err(|e| rewrap_io(e, path))
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file)).map_err(|e| rewrap_io(e, path))
    }

    /// `node,run` debug export.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,run")?;
        for e in &self.entries {
            writeln!(w, "{},{}", e.node, e.run)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut entries = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(name, i + 2, e.to_string()))?;
            let field = |j: usize| -> Result<u32> {
                row.get(j)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::parse(name, i + 2, "expected node,run"))
            };
            entries.push(HistoryEntry {
                node: NodeId(field(0)?),
                run: field(1)?,
            });
        }
        Self::from_entries(entries)
    }
}

fn rewrap_io(e: Error, path: &FsPath) -> Error {
    match e {
        Error::Stream { source } => Error::io(path, source),
        other => other,
    }
}

fn validate_entries(entries: &[HistoryEntry]) -> Result<()> {
    let mut closed = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        if i == 0 {
            continue;
        }
        let p = entries[i - 1];
        if p.run == e.run {
            if p.node == e.node {
                return Err(Error::HistoryFormat(format!(
                    "entry {i}: run {} repeats node {}",
                    e.run, e.node
                )));
            }
        } else {
            closed.insert(p.run);
            if closed.contains(&e.run) {
                return Err(Error::NonContiguousRun { run: e.run, index: i });
            }
        }
    }
    Ok(())
}

/// Builds the log from prior-period records.
///
/// Per user (ascending id), records are ordered by timestamp, snapped to
/// their nearest node and deduplicated; each consecutive node pair is joined
/// by its shortest path. A disconnected pair ends the current run and starts
/// a new one.
pub fn build_history_log<T: Scalar>(graph: &RoadGraph<T>, records: &[LocationRecord<T>]) -> HistoryLog {
    let mut entries = Vec::new();
    if graph.is_empty() {
        return HistoryLog { entries };
    }
    let mut next_run: RunId = 0;
    for (_, recs) in group_by_user(records) {
        let mut nodes: Vec<NodeId> = Vec::with_capacity(recs.len());
        for r in recs {
            let n = graph.nearest_node(&r.point).expect("nonempty graph");
            if nodes.last() != Some(&n) {
                nodes.push(n);
            }
        }
        let Some(&first) = nodes.first() else { continue };

        let mut run = next_run;
        next_run += 1;
        entries.push(HistoryEntry { node: first, run });
        for w in nodes.windows(2) {
            match dijkstra(graph, w[0], w[1]) {
                Some(path) => {
                    entries.extend(path.nodes[1..].iter().map(|&node| HistoryEntry { node, run }));
                }
                None => {
                    run = next_run;
                    next_run += 1;
                    entries.push(HistoryEntry { node: w[1], run });
                }
            }
        }
    }
    HistoryLog { entries }
}

/// Records grouped by user id (ascending), each group in timestamp order.
/// Timestamp ties keep input order.
pub(crate) fn group_by_user<T: Scalar>(records: &[LocationRecord<T>]) -> BTreeMap<u64, Vec<&LocationRecord<T>>> {
    let mut by_user: BTreeMap<u64, Vec<&LocationRecord<T>>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user).or_default().push(r);
    }
    for recs in by_user.values_mut() {
        recs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    }
    by_user
}

/// Hop ceiling for a query: shortest hop count plus `delta_h` when the filter
/// is on; unlimited when it is off or no shortest path exists.
pub fn max_hop_for<T: Scalar>(graph: &RoadGraph<T>, s: NodeId, e: NodeId, delta_h: u32, filter_enabled: bool) -> HopLimit {
    if !filter_enabled {
        return HopLimit::Unlimited;
    }
    hop_limit_from(shortest_hop_count(graph, s, e), delta_h)
}

pub(crate) fn hop_limit_from(sp_hops: Option<usize>, delta_h: u32) -> HopLimit {
    match sp_hops {
        Some(sp) => HopLimit::Limited((sp as u32).saturating_add(delta_h)),
        None => HopLimit::Unlimited,
    }
}

/// Linear scan of the whole log for paths from `n_s` to `n_e`.
///
/// Every entry equal to `n_s` opens a tracking pass over the following
/// entries of the same run. The pass stops on a run change, on revisiting
/// `n_s`, or once it already holds `max_hop` hops; reaching `n_e` records the
/// path. Overlapping and repeated matches each count.
pub fn history_search(log: &HistoryLog, n_s: NodeId, n_e: NodeId, max_hop: HopLimit) -> HistoryHit {
    history_search_probed(log, n_s, n_e, max_hop, |_| {})
}

/// [`history_search`] reporting every entry index it reads to `probe`.
pub fn history_search_probed<F: FnMut(usize)>(
    log: &HistoryLog,
    n_s: NodeId,
    n_e: NodeId,
    max_hop: HopLimit,
    mut probe: F,
) -> HistoryHit {
    let h = &log.entries;
    let mut hit = HistoryHit::default();
    for i in 0..h.len() {
        probe(i);
        if h[i].node != n_s {
            continue;
        }
        let run = h[i].run;
        let mut cur = vec![n_s];
        let mut c: u32 = 0;
        for (j, entry) in h.iter().enumerate().skip(i + 1) {
            probe(j);
            if entry.run != run || entry.node == n_s || max_hop.reached(c) {
                break;
            }
            c += 1;
            cur.push(entry.node);
            if entry.node == n_e {
                hit.paths.push(cur);
                hit.h += 1;
                break;
            }
        }
    }
    hit
}
