//! Retention, hop-filter impact, and throughput (measured and modeled).

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::anonymizer::{anonymize, publish, AnonymizeParams, RecordPair, SegmentCounter, SegmentKey};
use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::history::HistoryLog;
use crate::pipeline::RunSnapshot;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RetentionReport {
    pub k: u32,
    pub published: usize,
    pub total_input: usize,
    /// Percentage in [0, 100].
    pub rate: f64,
}

/// Share of counted segments that survive suppression at `k`.
pub fn retention_rate(seen: &BTreeSet<SegmentKey>, published: &BTreeSet<SegmentKey>, k: u32) -> Result<RetentionReport> {
    if seen.is_empty() {
        return Err(Error::EmptySegmentSet);
    }
    if let Some(stray) = published.iter().find(|key| !seen.contains(key)) {
        return Err(Error::NotSubset(stray.a.0, stray.b.0));
    }
    Ok(RetentionReport {
        k,
        published: published.len(),
        total_input: seen.len(),
        rate: 100.0 * published.len() as f64 / seen.len() as f64,
    })
}

pub fn published_keys(counter: &SegmentCounter, k: u32) -> BTreeSet<SegmentKey> {
    publish(counter, k).into_iter().map(|p| p.key).collect()
}

/// One retention report per k, all from the same counter.
pub fn retention_curve(counter: &SegmentCounter, ks: &[u32]) -> Result<Vec<RetentionReport>> {
    ks.iter()
        .map(|&k| retention_rate(counter.seen(), &published_keys(counter, k), k))
        .collect()
}

pub fn retention_csv(reports: &[RetentionReport]) -> String {
    let mut s = String::from("k,published,total,rate_pct\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{:.4}\n", r.k, r.published, r.total_input, r.rate));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HopFilterDelta {
    pub k: u32,
    pub published_with: usize,
    pub published_without: usize,
    /// `(without - with) / without` in percent; 0 when nothing is published
    /// without the filter.
    pub delta_pct: f64,
}

/// Relative drop in published segments caused by the hop filter, per k.
///
/// Both runs must come from the same inputs and hop slack.
pub fn hop_filter_impact(with: &RunSnapshot, without: &RunSnapshot, ks: &[u32]) -> Result<Vec<HopFilterDelta>> {
    if with.meta.input_digest != without.meta.input_digest {
        return Err(Error::MismatchedRuns("input digests differ".into()));
    }
    if with.meta.delta_h != without.meta.delta_h {
        return Err(Error::MismatchedRuns(format!(
            "delta_h {} vs {}",
            with.meta.delta_h, without.meta.delta_h
        )));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let w = publish(&with.counter, k).len();
            let wo = publish(&without.counter, k).len();
            let delta_pct = if wo == 0 {
                0.0
            } else {
                100.0 * (wo as f64 - w as f64) / wo as f64
            };
            HopFilterDelta {
                k,
                published_with: w,
                published_without: wo,
                delta_pct,
            }
        })
        .collect())
}

pub fn hop_filter_csv(deltas: &[HopFilterDelta]) -> String {
    let mut s = String::from("k,delta_pct\n");
    for d in deltas {
        s.push_str(&format!("{},{:.4}\n", d.k, d.delta_pct));
    }
    s
}

/// Analytical throughput model of the streaming history scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HwModelParams {
    pub f_clk_hz: f64,
    pub entries_per_cycle: u64,
    pub overhead_cycles: u64,
}

impl Default for HwModelParams {
    fn default() -> Self {
        HwModelParams {
            f_clk_hz: 107.0e6,
            entries_per_cycle: 4,
            overhead_cycles: 0,
        }
    }
}

/// Records per second: `f_clk / (overhead + ceil(size / entries_per_cycle))`.
/// Infinite when both terms are zero.
pub fn hw_throughput(params: &HwModelParams, history_size: u64) -> f64 {
    let scan = history_size.div_ceil(params.entries_per_cycle.max(1));
    let cycles = params.overhead_cycles + scan;
    if cycles == 0 {
        f64::INFINITY
    } else {
        params.f_clk_hz / cycles as f64
    }
}

pub fn hw_model_csv(params: &HwModelParams, sizes: &[u64]) -> String {
    let mut s = String::from("history_size,records_per_sec\n");
    for &n in sizes {
        s.push_str(&format!("{},{:.2}\n", n, hw_throughput(params, n)));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SwThroughput {
    pub pairs: usize,
    pub history_size: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Wall-clock pairs per second over `repetitions` single-threaded runs of
/// evaluation, counting and publication.
pub fn measure_sw_throughput<T: Scalar>(
    graph: &RoadGraph<T>,
    log: &HistoryLog,
    pairs: &[RecordPair],
    params: AnonymizeParams,
    k: u32,
    repetitions: usize,
) -> Result<SwThroughput> {
    let reps = repetitions.max(1);
    let mut rates = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let out = anonymize(graph, log, pairs, params, 1)?;
        std::hint::black_box(publish(&out.counter, k));
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(pairs.len() as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    Ok(SwThroughput {
        pairs: pairs.len(),
        history_size: log.len(),
        min: rates[0],
        median: rates[reps / 2],
        max: rates[reps - 1],
    })
}
