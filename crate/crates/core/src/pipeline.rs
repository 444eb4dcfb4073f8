//! End-to-end runs over files: load inputs, anonymize, write outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anonymizer::{
    anonymize, pair_records, publish, AnonymizeParams, LocationRecord, PublishedSegment, RecordPair, SegmentCounter,
    SelectionReport,
};
use crate::error::{Error, Result};
use crate::graph::{GeoPoint, RoadGraph};
use crate::history::{build_history_log, HistoryLog};
use crate::metrics::{retention_curve, RetentionReport};
use crate::scalar::Scalar;

/// k values reported in `retention.csv` besides the run's own k.
pub const RETENTION_KS: [u32; 7] = [1, 2, 4, 8, 16, 32, 64];

pub const RECORDS_HEADER: &str = "user_id,lat,lon,ts";

pub fn read_records<T: Scalar, R: Read>(r: R, name: &str) -> Result<Vec<LocationRecord<T>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| Error::parse(name, 1, e.to_string()))?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != ["user_id", "lat", "lon", "ts"] {
        return Err(Error::parse(name, 1, format!("expected header {RECORDS_HEADER}")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(name, line, e.to_string()))?;
        let get = |j: usize, what: &str| -> Result<&str> {
            row.get(j)
                .map(str::trim)
                .ok_or_else(|| Error::parse(name, line, format!("missing {what}")))
        };
        let bad = |what: &str| Error::parse(name, line, format!("invalid {what}"));
        let user: u64 = get(0, "user_id")?.parse().map_err(|_| bad("user_id"))?;
        let lat: T = get(1, "lat")?.parse().map_err(|_| bad("lat"))?;
        let lon: T = get(2, "lon")?.parse().map_err(|_| bad("lon"))?;
        let ts: f64 = get(3, "ts")?.parse().map_err(|_| bad("ts"))?;
        let point = GeoPoint::new(lat, lon);
        if !point.is_valid() || !ts.is_finite() {
            return Err(Error::parse(name, line, "coordinates or timestamp out of range"));
        }
        out.push(LocationRecord { user, point, ts });
    }
    Ok(out)
}

pub fn load_records<T: Scalar>(path: impl AsRef<FsPath>) -> Result<Vec<LocationRecord<T>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, &path.display().to_string())
}

pub fn write_records<T: Scalar, W: Write>(records: &[LocationRecord<T>], mut w: W) -> Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.user, r.point.lat, r.point.lon, r.ts)?;
    }
    w.flush()?;
    Ok(())
}

/// Where the historical database comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HistorySource {
    /// No history: pure shortest-path anonymization.
    Empty,
    /// Prior-period raw records, gap-filled into a log at load time.
    Records(PathBuf),
    /// A prebuilt binary log.
    Log(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub map: PathBuf,
    pub records: PathBuf,
    pub history: HistorySource,
    pub k: u32,
    pub delta_h: u32,
    pub hop_filter: bool,
    pub parallel: usize,
}

impl RunConfig {
    pub fn new(map: impl Into<PathBuf>, records: impl Into<PathBuf>, history: HistorySource, k: u32) -> Self {
        RunConfig {
            map: map.into(),
            records: records.into(),
            history,
            k,
            delta_h: crate::anonymizer::DEFAULT_DELTA_H,
            hop_filter: true,
            parallel: 1,
        }
    }

    pub fn params(&self) -> AnonymizeParams {
        AnonymizeParams {
            delta_h: self.delta_h,
            hop_filter: self.hop_filter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut paths = vec![&self.map, &self.records];
        match &self.history {
            HistorySource::Records(p) | HistorySource::Log(p) => paths.push(p),
            HistorySource::Empty => {}
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        Ok(())
    }
}

/// Everything needed to compare two runs after the fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub k: u32,
    pub delta_h: u32,
    pub hop_filter: bool,
    /// SHA-256 over the graph, record pairs and history log.
    pub input_digest: String,
    pub pairs: usize,
    pub history_entries: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSnapshot {
    pub meta: RunMeta,
    pub counter: SegmentCounter,
}

impl RunSnapshot {
    /// Reads `run.json` and `counter.csv` from an output directory.
    pub fn load(dir: impl AsRef<FsPath>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("run.json");
        let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RunMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::parse(meta_path.display().to_string(), e.line(), e.to_string()))?;
        let counter_path = dir.join("counter.csv");
        let file = File::open(&counter_path).map_err(|e| Error::io(&counter_path, e))?;
        let counter = SegmentCounter::read_snapshot(file, &counter_path.display().to_string())?;
        Ok(RunSnapshot { meta, counter })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub snapshot: RunSnapshot,
    pub published: Vec<PublishedSegment>,
    pub reports: Vec<SelectionReport>,
}

impl PipelineOutput {
    pub fn counter(&self) -> &SegmentCounter {
        &self.snapshot.counter
    }

    pub fn k(&self) -> u32 {
        self.snapshot.meta.k
    }

    /// Retention over [`RETENTION_KS`] plus the run's k; empty when nothing
    /// was counted.
    pub fn retention(&self) -> Result<Vec<RetentionReport>> {
        if self.counter().seen().is_empty() {
            return Ok(Vec::new());
        }
        let mut ks: Vec<u32> = RETENTION_KS.to_vec();
        ks.push(self.k());
        ks.sort_unstable();
        ks.dedup();
        retention_curve(self.counter(), &ks)
    }

    pub fn published_csv(&self) -> String {
        let mut s = String::from("node_a,node_b,count\n");
        for p in &self.published {
            s.push_str(&format!("{},{},{}\n", p.key.a, p.key.b, p.count));
        }
        s
    }

    pub fn selection_csv(&self) -> String {
        let mut s = String::from("user,s,e,used_history,h,fallback_reason\n");
        for r in &self.reports {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.pair.user, r.pair.s, r.pair.e, r.used_history, r.h, r.fallback_reason
            ));
        }
        s
    }

    pub fn counter_csv(&self) -> String {
        let mut buf = Vec::new();
        self.counter().write_snapshot(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    /// Published segments as a GeoJSON FeatureCollection of LineStrings.
    pub fn geojson<T: Scalar>(&self, graph: &RoadGraph<T>) -> serde_json::Value {
        let features: Vec<serde_json::Value> = self
            .published
            .iter()
            .map(|p| {
                let (a, b) = (graph.point(p.key.a), graph.point(p.key.b));
                let coord = |q: GeoPoint<T>| [q.lon.to_f64().unwrap(), q.lat.to_f64().unwrap()];
                serde_json::json!({
                    "type": "Feature",
                    "geometry": { "type": "LineString", "coordinates": [coord(a), coord(b)] },
                    "properties": { "node_a": p.key.a, "node_b": p.key.b, "count": p.count_f64() },
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }

    /// Writes `published.csv`, `selection.csv`, `retention.csv`,
    /// `counter.csv` and `run.json` into `dir`; optionally JSON mirrors and a
    /// GeoJSON export. Returns the written paths in order.
    pub fn write_to<T: Scalar>(&self, dir: impl AsRef<FsPath>, json: bool, geo: Option<&RoadGraph<T>>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let retention = self.retention()?;
        let mut files = vec![
            ("published.csv", self.published_csv()),
            ("selection.csv", self.selection_csv()),
            ("retention.csv", crate::metrics::retention_csv(&retention)),
            ("counter.csv", self.counter_csv()),
            ("run.json", to_json(&self.snapshot.meta)),
        ];
        if json {
            files.push(("published.json", to_json(&self.published_rows())));
            files.push(("selection.json", to_json(&self.reports)));
            files.push(("retention.json", to_json(&retention)));
        }
        if let Some(g) = geo {
            files.push(("published.geojson", to_json(&self.geojson(g))));
        }
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            write_file(&path, body.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }

    fn published_rows(&self) -> Vec<serde_json::Value> {
        self.published
            .iter()
            .map(|p| serde_json::json!({ "node_a": p.key.a, "node_b": p.key.b, "count": p.count_f64() }))
            .collect()
    }
}

pub(crate) fn to_json<S: Serialize + ?Sized>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub(crate) fn write_file(path: &FsPath, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Digest identifying the inputs of a run independent of k and filter flags.
pub fn input_digest<T: Scalar>(graph: &RoadGraph<T>, pairs: &[RecordPair], log: &HistoryLog) -> String {
    let mut h = Sha256::new();
    h.update(b"graph");
    h.update((graph.node_count() as u64).to_le_bytes());
    for e in graph.edges() {
        h.update(e.u.0.to_le_bytes());
        h.update(e.v.0.to_le_bytes());
        h.update(e.length.to_f64().unwrap().to_le_bytes());
    }
    h.update(b"pairs");
    for p in pairs {
        h.update(p.user.to_le_bytes());
        h.update(p.s.0.to_le_bytes());
        h.update(p.e.0.to_le_bytes());
    }
    h.update(b"log");
    for e in log.entries() {
        h.update(e.node.0.to_le_bytes());
        h.update(e.run.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// In-memory pipeline: pair the records, anonymize, publish at `k`.
pub fn run_in_memory<T: Scalar>(
    graph: &RoadGraph<T>,
    log: &HistoryLog,
    records: &[LocationRecord<T>],
    k: u32,
    params: AnonymizeParams,
    parallel: usize,
) -> Result<PipelineOutput> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let pairs = pair_records(graph, records);
    let result = anonymize(graph, log, &pairs, params, parallel)?;
    let published = publish(&result.counter, k);
    Ok(PipelineOutput {
        snapshot: RunSnapshot {
            meta: RunMeta {
                k,
                delta_h: params.delta_h,
                hop_filter: params.hop_filter,
                input_digest: input_digest(graph, &pairs, log),
                pairs: pairs.len(),
                history_entries: log.len(),
            },
            counter: result.counter,
        },
        published,
        reports: result.reports,
    })
}

/// Loads the history log named by `source` against `graph`.
pub fn load_history<T: Scalar>(graph: &RoadGraph<T>, source: &HistorySource) -> Result<HistoryLog> {
    match source {
        HistorySource::Empty => Ok(HistoryLog::new()),
        HistorySource::Records(p) => Ok(build_history_log(graph, &load_records::<T>(p)?)),
        HistorySource::Log(p) => {
            let log = HistoryLog::load(p)?;
            log.check_against(graph)?;
            Ok(log)
        }
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let graph = RoadGraph::<f64>::load(&config.map)?;
    let records = load_records::<f64>(&config.records)?;
    let log = load_history(&graph, &config.history)?;
    run_in_memory(&graph, &log, &records, config.k, config.params(), config.parallel)
}
