use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{source}")]
    Stream {
        #[from]
        source: io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("edge {u}-{v} references node {missing}, but the graph has {node_count} nodes")]
    DanglingEndpoint {
        u: u32,
        v: u32,
        missing: u32,
        node_count: usize,
    },

    #[error("duplicate edge {u}-{v}")]
    DuplicateEdge { u: u32, v: u32 },

    #[error("self-loop on node {0}")]
    SelfLoop(u32),

    #[error("edge {u}-{v} has non-positive length {length}")]
    NonPositiveLength { u: u32, v: u32, length: String },

    #[error("node {id} has invalid coordinates ({lat}, {lon})")]
    InvalidCoordinate { id: u32, lat: String, lon: String },

    #[error("node ids must be dense in [0, {count}): {msg}")]
    NodeIds { count: usize, msg: String },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("history log: {0}")]
    HistoryFormat(String),

    #[error("history log: run {run} reappears at entry {index} after other runs")]
    NonContiguousRun { run: u32, index: usize },

    #[error("reciprocal of zero hit count")]
    ZeroHitCount,

    #[error("accumulator overflow")]
    AccumulatorOverflow,

    #[error("no segments received any contribution")]
    EmptySegmentSet,

    #[error("published segment {0}-{1} was never counted")]
    NotSubset(u32, u32),

    #[error("runs are not comparable: {0}")]
    MismatchedRuns(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Stream { .. } => 2,
            _ => 1,
        }
    }
}
