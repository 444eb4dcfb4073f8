//! Road network: nodes with coordinates, undirected weighted edges, and a
//! uniform grid index for nearest-node lookup.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of grid cells along the bounding-box diagonal.
pub const DEFAULT_GRID_DIVISIONS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GeoPoint<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Scalar> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat >= T::lit(-90.0)
            && self.lat <= T::lit(90.0)
            && self.lon >= T::lit(-180.0)
            && self.lon <= T::lit(180.0)
    }

    /// Equirectangular distance in meters.
    pub fn distance_to(&self, other: &GeoPoint<T>) -> T {
        let dlat = (other.lat - self.lat).to_radians();
        let dlon = (other.lon - self.lon).to_radians();
        let mean_lat = ((self.lat + other.lat) / T::lit(2.0)).to_radians();
        let x = dlon * mean_lat.cos();
        T::earth_radius() * x.hypot(dlat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge<T> {
    pub u: NodeId,
    pub v: NodeId,
    pub length: T,
}

/// Uniform lat/lon grid over the node bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridIndex<T> {
    min_lat: T,
    min_lon: T,
    max_lat: T,
    max_lon: T,
    cell_size: T,
    rows: usize,
    cols: usize,
    cells: Vec<Vec<NodeId>>,
}

impl<T: Scalar> GridIndex<T> {
    /// Builds a grid whose cell edge is the bounding-box diagonal divided by
    /// `divisions` (degrees).
    pub fn build(points: &[GeoPoint<T>], divisions: usize) -> Self {
        let divisions = divisions.max(1);
        let (mut min_lat, mut min_lon) = (T::infinity(), T::infinity());
        let (mut max_lat, mut max_lon) = (T::neg_infinity(), T::neg_infinity());
        for p in points {
            min_lat = min_lat.min(p.lat);
            min_lon = min_lon.min(p.lon);
            max_lat = max_lat.max(p.lat);
            max_lon = max_lon.max(p.lon);
        }
        if points.is_empty() {
            min_lat = T::zero();
            min_lon = T::zero();
            max_lat = T::zero();
            max_lon = T::zero();
        }
        let diag = (max_lat - min_lat).hypot(max_lon - min_lon);
        let mut cell_size = diag / T::from_usize(divisions).unwrap();
        if !(cell_size > T::zero()) {
            cell_size = T::one();
        }
        let span_cells = |span: T| -> usize { (span / cell_size).floor().to_usize().unwrap_or(0) + 1 };
        let rows = span_cells(max_lat - min_lat);
        let cols = span_cells(max_lon - min_lon);

        let mut grid = GridIndex {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
            cell_size,
            rows,
            cols,
            cells: vec![Vec::new(); rows * cols],
        };
        for (i, p) in points.iter().enumerate() {
            let (r, c) = grid.cell_of(p);
            grid.cells[r * cols + c].push(NodeId(i as u32));
        }
        grid
    }

    pub fn cell_size(&self) -> T {
        self.cell_size
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cell_nodes(&self, row: usize, col: usize) -> &[NodeId] {
        &self.cells[row * self.cols + col]
    }

    /// Cell containing `p`, clamped to the grid for points outside the box.
    pub fn cell_of(&self, p: &GeoPoint<T>) -> (usize, usize) {
        let idx = |v: T, lo: T, n: usize| -> usize {
            let f = ((v - lo) / self.cell_size).floor();
            if !(f > T::zero()) {
                0
            } else {
                f.to_usize().unwrap_or(usize::MAX).min(n - 1)
            }
        };
        (idx(p.lat, self.min_lat, self.rows), idx(p.lon, self.min_lon, self.cols))
    }

    /// Nearest node to `p` by ring expansion; ties go to the smaller id.
    fn nearest(&self, points: &[GeoPoint<T>], p: &GeoPoint<T>) -> Option<NodeId> {
        if points.is_empty() {
            return None;
        }
        let (rp, cp) = self.cell_of(p);
        let (rp, cp) = (rp as isize, cp as isize);
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let max_ring = rp.max(rows - 1 - rp).max(cp).max(cols - 1 - cp);

        // cos(mean lat) over any pair involving p is at least this.
        let lat_hi = self.max_lat.max(p.lat).abs().max(self.min_lat.min(p.lat).abs());
        let cos_min = lat_hi.min(T::lit(90.0)).to_radians().cos().max(T::zero());
        let slack = T::one() - T::epsilon() * T::lit(64.0);

        let mut best: Option<(T, NodeId)> = None;
        let consider = |r: isize, c: isize, best: &mut Option<(T, NodeId)>| {
            for &id in &self.cells[(r * cols + c) as usize] {
                let d = points[id.index()].distance_to(p);
                let better = match *best {
                    None => true,
                    Some((bd, bid)) => d < bd || (d == bd && id < bid),
                };
                if better {
                    *best = Some((d, id));
                }
            }
        };

        for ring in 0..=max_ring {
            for r in (rp - ring).max(0)..=(rp + ring).min(rows - 1) {
                if (r - rp).abs() == ring {
                    for c in (cp - ring).max(0)..=(cp + ring).min(cols - 1) {
                        consider(r, c, &mut best);
                    }
                } else {
                    if cp - ring >= 0 {
                        consider(r, cp - ring, &mut best);
                    }
                    if cp + ring < cols {
                        consider(r, cp + ring, &mut best);
                    }
                }
            }

            if let Some((bd, _)) = best {
                let lb = self.unvisited_lower_bound(p, rp, cp, ring, cos_min);
                match lb {
                    None => break,
                    Some(lb) if bd < lb * slack => break,
                    _ => {}
                }
            }
        }
        best.map(|(_, id)| id)
    }

    /// Lower bound (meters) on the distance from `p` to any point in a cell
    /// outside ring `ring`; `None` once every cell has been visited.
    fn unvisited_lower_bound(&self, p: &GeoPoint<T>, rp: isize, cp: isize, ring: isize, cos_min: T) -> Option<T> {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let cell = self.cell_size;
        let edge = |lo: T, k: isize| lo + T::from_isize(k).unwrap() * cell;
        let to_m = |deg: T| T::earth_radius() * deg.max(T::zero()).to_radians();

        let mut lb: Option<T> = None;
        let mut take = |v: T| lb = Some(lb.map_or(v, |b: T| b.min(v)));
        if rp + ring + 1 < rows {
            take(to_m(edge(self.min_lat, rp + ring + 1) - p.lat));
        }
        if rp - ring > 0 {
            take(to_m(p.lat - edge(self.min_lat, rp - ring)));
        }
        if cp + ring + 1 < cols {
            take(to_m(edge(self.min_lon, cp + ring + 1) - p.lon) * cos_min);
        }
        if cp - ring > 0 {
            take(to_m(p.lon - edge(self.min_lon, cp - ring)) * cos_min);
        }
        lb
    }
}

/// Immutable undirected road graph.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadGraph<T> {
    nodes: Vec<GeoPoint<T>>,
    edges: Vec<Edge<T>>,
    adjacency: Vec<Vec<(NodeId, T)>>,
    grid: GridIndex<T>,
}

impl<T: Scalar> RoadGraph<T> {
    /// Validates and builds a graph. Node `i` of `nodes` gets `NodeId(i)`.
    /// Missing edge lengths are computed from endpoint coordinates.
    pub fn new(nodes: Vec<GeoPoint<T>>, edges: Vec<(u32, u32, Option<T>)>) -> Result<Self> {
        Self::with_grid_divisions(nodes, edges, DEFAULT_GRID_DIVISIONS)
    }

    pub fn with_grid_divisions(
        nodes: Vec<GeoPoint<T>>,
        raw_edges: Vec<(u32, u32, Option<T>)>,
        divisions: usize,
    ) -> Result<Self> {
        for (i, p) in nodes.iter().enumerate() {
            if !p.is_valid() {
                return Err(Error::InvalidCoordinate {
                    id: i as u32,
                    lat: p.lat.to_string(),
                    lon: p.lon.to_string(),
                });
            }
        }
        let n = nodes.len();
        let mut seen = HashSet::with_capacity(raw_edges.len());
        let mut edges = Vec::with_capacity(raw_edges.len());
        let mut adjacency = vec![Vec::new(); n];
        for (u, v, length) in raw_edges {
            for end in [u, v] {
                if end as usize >= n {
                    return Err(Error::DanglingEndpoint {
                        u,
                        v,
                        missing: end,
                        node_count: n,
                    });
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::DuplicateEdge { u, v });
            }
            let length = length.unwrap_or_else(|| nodes[u as usize].distance_to(&nodes[v as usize]));
            if !(length > T::zero()) || !length.is_finite() {
                return Err(Error::NonPositiveLength {
                    u,
                    v,
                    length: length.to_string(),
                });
            }
            adjacency[u as usize].push((NodeId(v), length));
            adjacency[v as usize].push((NodeId(u), length));
            edges.push(Edge {
                u: NodeId(u),
                v: NodeId(v),
                length,
            });
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(id, _)| id);
        }
        let grid = GridIndex::build(&nodes, divisions);
        Ok(RoadGraph {
            nodes,
            edges,
            adjacency,
            grid,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point(&self, id: NodeId) -> GeoPoint<T> {
        self.nodes[id.index()]
    }

    pub fn points(&self) -> &[GeoPoint<T>] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn grid(&self) -> &GridIndex<T> {
        &self.grid
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Neighbors sorted by id, with the connecting edge length.
    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, T)] {
        &self.adjacency[id.index()]
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Option<T> {
        let list = self.adjacency.get(a.index())?;
        list.binary_search_by_key(&b, |&(id, _)| id).ok().map(|i| list[i].1)
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.edge_length(a, b).is_some()
    }

    /// Nearest node by equirectangular distance, smallest id on ties.
    /// Returns `None` only for an empty graph.
    pub fn nearest_node(&self, p: &GeoPoint<T>) -> Option<NodeId> {
        self.grid.nearest(&self.nodes, p)
    }

    pub fn write_map<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#nodes")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{},{},{}", i, p.lat, p.lon)?;
        }
        writeln!(w, "#edges")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.u, e.v, e.length)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_map(BufWriter::new(file)).map_err(|e| match e {
            Error::Stream { source } => Error::io(path, source),
            other => other,
        })
    }

    /// Parses the two-section map format (`#nodes` then `#edges`).
    pub fn read_map<R: Read>(reader: R, name: &str) -> Result<Self> {
        enum Section {
            None,
            Nodes,
            Edges,
        }
        let mut section = Section::None;
        let mut node_rows: Vec<(u32, GeoPoint<T>, usize)> = Vec::new();
        let mut edges = Vec::new();

        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "#nodes" => {
                    section = Section::Nodes;
                    continue;
                }
                "#edges" => {
                    section = Section::Edges;
                    continue;
                }
                "id,lat,lon" | "u,v" | "u,v,length_m" => continue,
                _ => {}
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match section {
                Section::None => return Err(Error::parse(name, lineno, "data before #nodes header")),
                Section::Nodes => {
                    if fields.len() != 3 {
                        return Err(Error::parse(name, lineno, "expected id,lat,lon"));
                    }
                    let id = parse_field::<u32>(fields[0], name, lineno, "node id")?;
                    let lat = parse_field::<T>(fields[1], name, lineno, "lat")?;
                    let lon = parse_field::<T>(fields[2], name, lineno, "lon")?;
                    node_rows.push((id, GeoPoint { lat, lon }, lineno));
                }
                Section::Edges => {
                    if fields.len() != 2 && fields.len() != 3 {
                        return Err(Error::parse(name, lineno, "expected u,v[,length_m]"));
                    }
                    let u = parse_field::<u32>(fields[0], name, lineno, "u")?;
                    let v = parse_field::<u32>(fields[1], name, lineno, "v")?;
                    let length = match fields.get(2) {
                        Some(s) if !s.is_empty() => Some(parse_field::<T>(s, name, lineno, "length")?),
                        _ => None,
                    };
                    edges.push((u, v, length));
                }
            }
        }

        let count = node_rows.len();
        let mut slots: Vec<Option<GeoPoint<T>>> = vec![None; count];
        for (id, p, lineno) in node_rows {
            let slot = slots.get_mut(id as usize).ok_or_else(|| Error::NodeIds {
                count,
                msg: format!("id {id} out of range (line {lineno})"),
            })?;
            if slot.replace(p).is_some() {
                return Err(Error::NodeIds {
                    count,
                    msg: format!("duplicate id {id} (line {lineno})"),
                });
            }
        }
        let nodes = slots.into_iter().map(|p| p.expect("dense ids checked")).collect();
        RoadGraph::new(nodes, edges)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_map(file, &path.display().to_string())
    }
}

fn parse_field<F: std::str::FromStr>(s: &str, file: &str, line: usize, what: &str) -> Result<F> {
    s.parse::<F>()
        .map_err(|_| Error::parse(file, line, format!("invalid {what} {s:?}")))
}

/// Exhaustive nearest-node scan; the reference the grid search must agree with.
pub fn nearest_node_linear<T: Scalar>(points: &[GeoPoint<T>], p: &GeoPoint<T>) -> Option<NodeId> {
    let mut best: Option<(T, NodeId)> = None;
    for (i, q) in points.iter().enumerate() {
        let d = q.distance_to(p);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, NodeId(i as u32)));
        }
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint<f64> {
        GeoPoint::new(lat, lon)
    }

    #[test]
    fn minimal_graph_adjacency() {
        let g = RoadGraph::<f64>::read_map("#nodes\n0,35.0,139.0\n1,35.001,139.0\n#edges\n0,1\n".as_bytes(), "t").unwrap();
        assert_eq!(g.neighbors(NodeId(0)).iter().map(|x| x.0).collect::<Vec<_>>(), vec![NodeId(1)]);
        assert_eq!(g.neighbors(NodeId(1)).iter().map(|x| x.0).collect::<Vec<_>>(), vec![NodeId(0)]);
        // 0.001 degrees of latitude
        let len = g.edge_length(NodeId(0), NodeId(1)).unwrap();
        assert!((len - 111.19).abs() < 0.01, "{len}");
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let err = RoadGraph::<f64>::read_map("#nodes\n0,0,0\n1,0,0.001\n#edges\n0,99\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::DanglingEndpoint { missing: 99, .. }), "{err}");
    }

    #[test]
    fn duplicate_and_bad_edges_rejected() {
        let base = "#nodes\n0,0,0\n1,0,0.001\n#edges\n";
        let dup = format!("{base}0,1\n1,0\n");
        assert!(matches!(
            RoadGraph::<f64>::read_map(dup.as_bytes(), "t"),
            Err(Error::DuplicateEdge { .. })
        ));
        let neg = format!("{base}0,1,-3\n");
        assert!(matches!(
            RoadGraph::<f64>::read_map(neg.as_bytes(), "t"),
            Err(Error::NonPositiveLength { .. })
        ));
        let zero = format!("{base}0,1,0\n");
        assert!(matches!(
            RoadGraph::<f64>::read_map(zero.as_bytes(), "t"),
            Err(Error::NonPositiveLength { .. })
        ));
        let lp = format!("{base}1,1\n");
        assert!(matches!(RoadGraph::<f64>::read_map(lp.as_bytes(), "t"), Err(Error::SelfLoop(1))));
        let garbage = format!("{base}0,x\n");
        assert!(matches!(
            RoadGraph::<f64>::read_map(garbage.as_bytes(), "t"),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn node_ids_must_be_dense() {
        let err = RoadGraph::<f64>::read_map("#nodes\n0,0,0\n2,0,1\n#edges\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::NodeIds { .. }));
        let err = RoadGraph::<f64>::read_map("#nodes\n0,0,0\n0,0,1\n#edges\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::NodeIds { .. }));
        let err = RoadGraph::<f64>::read_map("#nodes\n0,95,0\n#edges\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::InvalidCoordinate { .. }));
    }

    #[test]
    fn nearest_exact_and_tie() {
        let nodes = vec![
            pt(0.0, 0.0),
            pt(0.0, 0.01),
            pt(0.01, 0.0),
            pt(0.005, -0.002),
            pt(0.02, 0.02),
            pt(0.005, 0.002),
            pt(0.03, 0.0),
            pt(0.012, 0.017),
        ];
        let g = RoadGraph::new(nodes, vec![]).unwrap();
        assert_eq!(g.nearest_node(&pt(0.012, 0.017)), Some(NodeId(7)));
        // equidistant between 3 and 5
        assert_eq!(g.nearest_node(&pt(0.005, 0.0)), Some(NodeId(3)));
    }

    #[test]
    fn nearest_outside_bbox() {
        let g = RoadGraph::new(vec![pt(0.0, 0.0), pt(1.0, 1.0)], vec![]).unwrap();
        assert_eq!(g.nearest_node(&pt(-5.0, -5.0)), Some(NodeId(0)));
        assert_eq!(g.nearest_node(&pt(3.0, 2.0)), Some(NodeId(1)));
    }

    #[test]
    fn single_node_and_empty() {
        let g = RoadGraph::new(vec![pt(10.0, 10.0)], vec![]).unwrap();
        assert_eq!(g.nearest_node(&pt(-80.0, 170.0)), Some(NodeId(0)));
        let empty = RoadGraph::<f64>::new(vec![], vec![]).unwrap();
        assert_eq!(empty.nearest_node(&pt(0.0, 0.0)), None);
    }

    #[test]
    fn save_load_round_trip() {
        let g = RoadGraph::<f64>::read_map(
            "#nodes\nid,lat,lon\n1,35.123456789,139.5\n0,35.1,139.4\n2,35.2,139.45\n#edges\nu,v,length_m\n0,1\n1,2,1234.5\n".as_bytes(),
            "t",
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_map(&mut buf).unwrap();
        let g2 = RoadGraph::read_map(buf.as_slice(), "t").unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn f32_graph() {
        let g = RoadGraph::<f32>::read_map("#nodes\n0,35.0,139.0\n1,35.001,139.0\n#edges\n0,1\n".as_bytes(), "t").unwrap();
        assert_eq!(g.nearest_node(&GeoPoint::new(35.0008f32, 139.0)), Some(NodeId(1)));
    }
}
