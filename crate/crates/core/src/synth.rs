//! Seeded synthetic city: a jittered grid road network with arterial
//! corridors, plus current-period and prior-period location records.
//!
//! Users travel origin -> nearest arterial -> along arterials -> destination.
//! Prior-period users are sampled only at their turning points, so gap
//! filling reproduces the arterial route. Current-period users are sampled
//! at roughly even intervals along the route, which lets record pairs cut
//! corners that a pure shortest-path search would fill with side streets.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path as FsPath, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::anonymizer::{LocationRecord, SegmentKey};
use crate::error::{Error, Result};
use crate::graph::{GeoPoint, NodeId, RoadGraph};
use crate::pipeline::{write_file, write_records};
use crate::shortest_path::dijkstra;

const ORIGIN_LAT: f64 = 35.870;
const ORIGIN_LON: f64 = 139.640;
const METERS_PER_DEG_LAT: f64 = 111_194.93;
const CURRENT_START_TS: f64 = 1_700_000_000.0;
const HISTORY_START_TS: f64 = CURRENT_START_TS - 3600.0;
const SECONDS_PER_HOP: f64 = 12.0;
/// User ids of prior-period records start here.
pub const HISTORY_USER_BASE: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthParams {
    /// Nodes per side of the square grid.
    pub grid: usize,
    /// Share of grid rows (and of columns) that are arterial corridors.
    pub arterial_fraction: f64,
    /// Current-period users.
    pub users: usize,
    /// Samples per current-period user.
    pub samples_per_user: usize,
    /// Prior-period users; defaults to `users`.
    pub history_users: Option<usize>,
    /// Injected users whose prior-period route makes a long loop between two
    /// nearby nodes, each paired with a current user going straight there.
    pub detours: usize,
    pub spacing_m: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            grid: 20,
            arterial_fraction: 0.2,
            users: 500,
            samples_per_user: 6,
            history_users: None,
            detours: 0,
            spacing_m: 100.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCity {
    pub graph: RoadGraph<f64>,
    pub arterials: BTreeSet<SegmentKey>,
    pub current: Vec<LocationRecord<f64>>,
    pub history: Vec<LocationRecord<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub nodes: usize,
    pub edges: usize,
    pub arterial_edges: usize,
    pub current_records: usize,
    pub history_records: usize,
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "seed {}\nnodes {}\nedges {}\narterial_edges {}\ncurrent_records {}\nhistory_records {}\n",
            self.seed, self.nodes, self.edges, self.arterial_edges, self.current_records, self.history_records
        );
        for f in &self.files {
            s.push_str(&format!("{}  {}  {} bytes\n", f.sha256, f.name, f.bytes));
        }
        s
    }
}

pub const MAP_FILE: &str = "map.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const HISTORY_RECORDS_FILE: &str = "history_records.csv";
pub const ARTERIALS_FILE: &str = "arterials.csv";

impl SynthCity {
    pub fn files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut map = Vec::new();
        self.graph.write_map(&mut map)?;
        let mut current = Vec::new();
        write_records(&self.current, &mut current)?;
        let mut history = Vec::new();
        write_records(&self.history, &mut history)?;
        let mut arterials = String::from("node_a,node_b\n");
        for k in &self.arterials {
            arterials.push_str(&format!("{},{}\n", k.a, k.b));
        }
        Ok(vec![
            (MAP_FILE, map),
            (RECORDS_FILE, current),
            (HISTORY_RECORDS_FILE, history),
            (ARTERIALS_FILE, arterials.into_bytes()),
        ])
    }

    pub fn write_to(&self, dir: impl AsRef<FsPath>, seed: u64) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (name, bytes) in self.files()? {
            let path: PathBuf = dir.join(name);
            write_file(&path, &bytes)?;
            files.push(ManifestFile {
                name: name.to_string(),
                bytes: bytes.len(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(Manifest {
            seed,
            nodes: self.graph.node_count(),
            edges: self.graph.edge_count(),
            arterial_edges: self.arterials.len(),
            current_records: self.current.len(),
            history_records: self.history.len(),
            files,
        })
    }
}

pub fn read_arterials(path: impl AsRef<FsPath>) -> Result<BTreeSet<SegmentKey>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut it = line.split(',').map(|s| s.trim().parse::<u32>());
        match (it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b))) => {
                let key = SegmentKey::new(NodeId(a), NodeId(b))
                    .ok_or_else(|| Error::parse(&name, i + 1, "degenerate segment"))?;
                out.insert(key);
            }
            _ => return Err(Error::parse(&name, i + 1, "expected node_a,node_b")),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Cell {
    r: usize,
    c: usize,
}

struct Builder {
    n: usize,
    rng: ChaCha8Rng,
    art_rows: Vec<usize>,
    art_cols: Vec<usize>,
}

impl Builder {
    fn id(&self, cell: Cell) -> NodeId {
        NodeId((cell.r * self.n + cell.c) as u32)
    }

    fn random_cell(&mut self) -> Cell {
        Cell {
            r: self.rng.gen_range(0..self.n),
            c: self.rng.gen_range(0..self.n),
        }
    }

    fn nearest_line(lines: &[usize], x: usize) -> usize {
        *lines
            .iter()
            .min_by_key(|&&l| (l.abs_diff(x), l))
            .expect("at least one arterial line")
    }

    /// Origin, arterial entry, arterial turn, arterial exit, destination.
    fn arterial_waypoints(&mut self, o: Cell, d: Cell) -> Vec<Cell> {
        if self.rng.gen_bool(0.5) {
            let ra = Self::nearest_line(&self.art_rows, o.r);
            let ca = Self::nearest_line(&self.art_cols, d.c);
            vec![o, Cell { r: ra, c: o.c }, Cell { r: ra, c: ca }, Cell { r: d.r, c: ca }, d]
        } else {
            let ca = Self::nearest_line(&self.art_cols, o.c);
            let ra = Self::nearest_line(&self.art_rows, d.r);
            vec![o, Cell { r: o.r, c: ca }, Cell { r: ra, c: ca }, Cell { r: ra, c: d.c }, d]
        }
    }

    /// Concatenates straight walks between axis-aligned waypoints and cuts
    /// out any loop, yielding a simple path.
    fn walk(&self, waypoints: &[Cell]) -> Vec<Cell> {
        let mut route = vec![waypoints[0]];
        for w in waypoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            debug_assert!(a.r == b.r || a.c == b.c);
            let mut cur = a;
            while cur != b {
                cur = Cell {
                    r: step(cur.r, b.r),
                    c: step(cur.c, b.c),
                };
                route.push(cur);
            }
        }
        let mut simple: Vec<Cell> = Vec::with_capacity(route.len());
        let mut pos: HashMap<Cell, usize> = HashMap::new();
        for cell in route {
            if let Some(&i) = pos.get(&cell) {
                for dropped in simple.drain(i + 1..) {
                    pos.remove(&dropped);
                }
            } else {
                pos.insert(cell, simple.len());
                simple.push(cell);
            }
        }
        simple
    }

    /// Strictly increasing indices into a route of `len` nodes, first and
    /// last included, roughly evenly spaced.
    fn sample_indices(&mut self, len: usize, samples: usize) -> Vec<usize> {
        if len <= samples {
            return (0..len).collect();
        }
        let last = len - 1;
        let mut idx = vec![0];
        for j in 1..samples - 1 {
            let base = (j * last) as f64 / (samples - 1) as f64;
            let jitter = self.rng.gen_range(-1..=1) as f64;
            let i = (base + jitter).round().clamp(1.0, (last - 1) as f64) as usize;
            if i > *idx.last().unwrap() {
                idx.push(i);
            }
        }
        idx.push(last);
        idx
    }
}

fn step(from: usize, to: usize) -> usize {
    match from.cmp(&to) {
        std::cmp::Ordering::Less => from + 1,
        std::cmp::Ordering::Greater => from - 1,
        std::cmp::Ordering::Equal => from,
    }
}

/// Generates a city deterministically from `seed`.
pub fn synth_city(seed: u64, params: &SynthParams) -> Result<SynthCity> {
    let n = params.grid;
    if n < 2 {
        return Err(Error::Config("grid must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&params.arterial_fraction) {
        return Err(Error::Config("arterial fraction must be in [0, 1]".into()));
    }
    if params.samples_per_user < 2 {
        return Err(Error::Config("need at least 2 samples per user".into()));
    }
    if params.detours > 0 && n < 7 {
        return Err(Error::Config("detours need a grid of at least 7".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = params.spacing_m;
    let dlat = spacing / METERS_PER_DEG_LAT;
    let dlon = spacing / (METERS_PER_DEG_LAT * ORIGIN_LAT.to_radians().cos());
    let jitter = 0.05;

    let mut nodes = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let lat = ORIGIN_LAT + (r as f64 + rng.gen_range(-jitter..jitter)) * dlat;
            let lon = ORIGIN_LON + (c as f64 + rng.gen_range(-jitter..jitter)) * dlon;
            nodes.push(GeoPoint::new(lat, lon));
        }
    }
    let mut edges = Vec::with_capacity(2 * n * (n - 1));
    for r in 0..n {
        for c in 0..n {
            let id = (r * n + c) as u32;
            if c + 1 < n {
                edges.push((id, id + 1, None));
            }
            if r + 1 < n {
                edges.push((id, id + n as u32, None));
            }
        }
    }
    let graph = RoadGraph::new(nodes, edges)?;

    let lines = if params.arterial_fraction > 0.0 {
        ((params.arterial_fraction * n as f64).round() as usize).clamp(1, n)
    } else {
        0
    };
    let mut art_rows = sample(&mut rng, n, lines).into_vec();
    let mut art_cols = sample(&mut rng, n, lines).into_vec();
    art_rows.sort_unstable();
    art_cols.sort_unstable();

    let mut arterials = BTreeSet::new();
    for &r in &art_rows {
        for c in 0..n - 1 {
            let a = NodeId((r * n + c) as u32);
            arterials.insert(SegmentKey::new(a, NodeId(a.0 + 1)).unwrap());
        }
    }
    for &c in &art_cols {
        for r in 0..n - 1 {
            let a = NodeId((r * n + c) as u32);
            arterials.insert(SegmentKey::new(a, NodeId(a.0 + n as u32)).unwrap());
        }
    }

    let mut b = Builder {
        n,
        rng,
        art_rows,
        art_cols,
    };

    let trip = |b: &mut Builder| -> (Vec<Cell>, Vec<NodeId>) {
        let (o, d) = loop {
            let o = b.random_cell();
            let d = b.random_cell();
            if o.r.abs_diff(d.r) + o.c.abs_diff(d.c) >= 3 {
                break (o, d);
            }
        };
        if lines == 0 {
            let path = dijkstra(&graph, b.id(o), b.id(d)).expect("grid is connected");
            (vec![o, d], path.nodes)
        } else {
            let waypoints = b.arterial_waypoints(o, d);
            let route = b.walk(&waypoints);
            let ids = route.iter().map(|&c| b.id(c)).collect();
            (waypoints, ids)
        }
    };

    let noise_m = 4.0;
    let emit = |b: &mut Builder, out: &mut Vec<LocationRecord<f64>>, user: u64, nodes: &[NodeId], hops: &[usize], t0: f64| {
        for (&node, &hop) in nodes.iter().zip(hops) {
            let p = graph.point(node);
            let lat = p.lat + b.rng.gen_range(-noise_m..noise_m) / METERS_PER_DEG_LAT;
            let lon = p.lon + b.rng.gen_range(-noise_m..noise_m) / (METERS_PER_DEG_LAT * p.lat.to_radians().cos());
            out.push(LocationRecord {
                user,
                point: GeoPoint::new(lat, lon),
                ts: t0 + hop as f64 * SECONDS_PER_HOP,
            });
        }
    };

    let mut history = Vec::new();
    for i in 0..params.history_users.unwrap_or(params.users) {
        let (waypoints, route) = trip(&mut b);
        // turning points only, located by their position along the route
        let wp_ids: Vec<NodeId> = waypoints.iter().map(|&c| b.id(c)).collect();
        let mut hops = Vec::new();
        let mut nodes = Vec::new();
        for (pos, node) in route.iter().enumerate() {
            if wp_ids.contains(node) && nodes.last() != Some(node) {
                nodes.push(*node);
                hops.push(pos);
            }
        }
        let t0 = HISTORY_START_TS + b.rng.gen_range(0..3000) as f64;
        emit(&mut b, &mut history, HISTORY_USER_BASE + i as u64, &nodes, &hops, t0);
    }

    let mut current = Vec::new();
    for i in 0..params.users {
        let (_, route) = trip(&mut b);
        let idx = b.sample_indices(route.len(), params.samples_per_user);
        let nodes: Vec<NodeId> = idx.iter().map(|&j| route[j]).collect();
        let t0 = CURRENT_START_TS + b.rng.gen_range(0..3000) as f64;
        emit(&mut b, &mut current, i as u64, &nodes, &idx, t0);
    }

    let history_users = params.history_users.unwrap_or(params.users);
    for i in 0..params.detours {
        let r = b.rng.gen_range(0..n - 6);
        let c = b.rng.gen_range(0..n - 4);
        let o = Cell { r, c };
        let d = Cell { r, c: c + 2 };
        let up = Cell { r: r + 6, c };
        let far = Cell { r: r + 6, c: c + 4 };
        let loop_ids: Vec<NodeId> = [o, up, far, d].iter().map(|&x| b.id(x)).collect();
        let t0 = HISTORY_START_TS + b.rng.gen_range(0..3000) as f64;
        emit(&mut b, &mut history, HISTORY_USER_BASE + (history_users + i) as u64, &loop_ids, &[0, 6, 10, 18], t0);
        let direct = [b.id(o), b.id(d)];
        let t0 = CURRENT_START_TS + b.rng.gen_range(0..3000) as f64;
        emit(&mut b, &mut current, (params.users + i) as u64, &direct, &[0, 2], t0);
    }

    Ok(SynthCity {
        graph,
        arterials,
        current,
        history,
    })
}
