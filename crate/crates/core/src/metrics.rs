//! Moment-retrieval metrics: temporal IoU, R1@τ, mIoU and mAP@τ.
//!
//! Predictions carry no confidence scores, so a query's ranking is its list
//! order. mAP is the mean over queries of all-point AP under greedy
//! one-to-one matching; a corpus-level variant pools every query's
//! predictions instead.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::records::Moment;

pub const DEFAULT_R1_TAUS: [f64; 2] = [0.5, 0.7];
pub const DEFAULT_MAP_TAUS: [f64; 2] = [0.5, 0.75];

/// Ranked predictions and ground truth for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub predictions: Vec<Moment>,
    pub ground_truth: Vec<Moment>,
}

impl EvalPair {
    pub fn new(predictions: Vec<Moment>, ground_truth: Vec<Moment>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::arg("a query needs at least one prediction"));
        }
        if ground_truth.is_empty() {
            return Err(Error::arg("a query needs at least one ground-truth moment"));
        }
        Ok(Self {
            predictions,
            ground_truth,
        })
    }

    fn best_iou(&self, pred: &Moment) -> f64 {
        self.ground_truth
            .iter()
            .map(|g| temporal_iou(pred, g))
            .fold(0.0, f64::max)
    }

    /// IoU of the top-ranked prediction against its best ground-truth match.
    pub fn top1_iou(&self) -> f64 {
        self.best_iou(&self.predictions[0])
    }
}

/// Intersection over union of two intervals; 0 when the union is empty.
pub fn temporal_iou(a: &Moment, b: &Moment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn nonempty(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::NoQueries)
    } else {
        Ok(())
    }
}

/// Percentage of queries whose first `k` predictions include one with IoU ≥ τ.
pub fn recall_at_k(pairs: &[EvalPair], k: usize, tau: f64) -> Result<f64> {
    nonempty(pairs)?;
    if k == 0 {
        return Err(Error::arg("k must be >= 1"));
    }
    let hits = pairs
        .iter()
        .filter(|p| p.predictions.iter().take(k).any(|m| p.best_iou(m) >= tau))
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

pub fn mean_iou(pairs: &[EvalPair]) -> Result<f64> {
    nonempty(pairs)?;
    Ok(100.0 * pairs.iter().map(EvalPair::top1_iou).sum::<f64>() / pairs.len() as f64)
}

/// True-positive flag per prediction, in rank order. Each prediction claims
/// the unmatched ground-truth moment it overlaps most, if that IoU ≥ τ.
fn match_predictions(pair: &EvalPair, tau: f64) -> Vec<bool> {
    let mut taken = vec![false; pair.ground_truth.len()];
    pair.predictions
        .iter()
        .map(|p| {
            let best = pair
                .ground_truth
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, m)| (g, temporal_iou(p, m)))
                .fold(None, |acc: Option<(usize, f64)>, (g, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((g, iou)),
                });
            match best {
                Some((g, iou)) if iou >= tau => {
                    taken[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

fn ap_from_flags(flags: impl IntoIterator<Item = bool>, n_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in flags.into_iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    sum / n_gt as f64
}

/// All-point average precision of one query's ranked predictions, in `[0, 1]`.
pub fn average_precision(pair: &EvalPair, tau: f64) -> f64 {
    ap_from_flags(match_predictions(pair, tau), pair.ground_truth.len())
}

/// AP over the pooled predictions of all queries, ordered by rank and then
/// by query position.
pub fn corpus_average_precision(pairs: &[EvalPair], tau: f64) -> Result<f64> {
    nonempty(pairs)?;
    let flags: Vec<Vec<bool>> = pairs.iter().map(|p| match_predictions(p, tau)).collect();
    let depth = flags.iter().map(Vec::len).max().unwrap_or(0);
    let pooled = (0..depth).flat_map(|r| flags.iter().filter_map(move |f| f.get(r).copied()));
    let n_gt = pairs.iter().map(|p| p.ground_truth.len()).sum();
    Ok(ap_from_flags(pooled, n_gt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapProtocol {
    #[default]
    PerQuery,
    Corpus,
}

impl FromStr for MapProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-query" | "per_query" => Ok(Self::PerQuery),
            "corpus" => Ok(Self::Corpus),
            other => Err(Error::arg(format!("unknown mAP protocol `{other}`"))),
        }
    }
}

impl fmt::Display for MapProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerQuery => "per-query",
            Self::Corpus => "corpus",
        })
    }
}

/// Running sums of per-query metrics. Merging is associative and commutative.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    taus_r1: Vec<f64>,
    taus_map: Vec<f64>,
    n_queries: usize,
    r1_hits: Vec<usize>,
    iou_sum: f64,
    ap_sum: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(taus_r1: &[f64], taus_map: &[f64]) -> Self {
        Self {
            taus_r1: taus_r1.to_vec(),
            taus_map: taus_map.to_vec(),
            n_queries: 0,
            r1_hits: vec![0; taus_r1.len()],
            iou_sum: 0.0,
            ap_sum: vec![0.0; taus_map.len()],
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn add(&mut self, pair: &EvalPair) {
        let iou = pair.top1_iou();
        self.n_queries += 1;
        self.iou_sum += iou;
        for (hits, &tau) in self.r1_hits.iter_mut().zip(&self.taus_r1) {
            if iou >= tau {
                *hits += 1;
            }
        }
        for (sum, &tau) in self.ap_sum.iter_mut().zip(&self.taus_map) {
            *sum += average_precision(pair, tau);
        }
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.taus_r1 != other.taus_r1 || self.taus_map != other.taus_map {
            return Err(Error::arg("cannot merge accumulators with different thresholds"));
        }
        self.n_queries += other.n_queries;
        self.iou_sum += other.iou_sum;
        for (a, b) in self.r1_hits.iter_mut().zip(&other.r1_hits) {
            *a += b;
        }
        for (a, b) in self.ap_sum.iter_mut().zip(&other.ap_sum) {
            *a += b;
        }
        Ok(self)
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.n_queries == 0 {
            return Err(Error::NoQueries);
        }
        let n = self.n_queries as f64;
        Ok(EvalReport {
            n_queries: self.n_queries,
            r1: self
                .taus_r1
                .iter()
                .zip(&self.r1_hits)
                .map(|(&t, &h)| (t, 100.0 * h as f64 / n))
                .collect(),
            miou: 100.0 * self.iou_sum / n,
            map: self
                .taus_map
                .iter()
                .zip(&self.ap_sum)
                .map(|(&t, &s)| (t, 100.0 * s / n))
                .collect(),
            protocol: MapProtocol::PerQuery,
        })
    }
}

/// Aggregated metrics, all in percent and unrounded.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_queries: usize,
    pub r1: Vec<(f64, f64)>,
    pub miou: f64,
    pub map: Vec<(f64, f64)>,
    pub protocol: MapProtocol,
}

fn lookup(table: &[(f64, f64)], tau: f64) -> Option<f64> {
    table.iter().find(|(t, _)| *t == tau).map(|(_, v)| *v)
}

/// Rounds a percentage half-up to two decimals.
pub fn round_pct(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

impl EvalReport {
    pub fn r1_at(&self, tau: f64) -> Option<f64> {
        lookup(&self.r1, tau)
    }

    pub fn map_at(&self, tau: f64) -> Option<f64> {
        lookup(&self.map, tau)
    }

    pub fn conventions(&self) -> String {
        let map = match self.protocol {
            MapProtocol::PerQuery => "mAP averages per-query all-point AP over queries",
            MapProtocol::Corpus => "mAP is all-point AP over the pooled predictions of every query",
        };
        format!(
            "ranking is prediction list order (no confidence scores); R1 and mIoU use the top-1 \
             prediction against its best ground-truth moment; {map}; greedy one-to-one matching \
             at IoU >= threshold; percentages rounded half-up to two decimals"
        )
    }

    /// Report JSON with percentages rounded to two decimals.
    pub fn to_json(&self) -> Value {
        let table = |rows: &[(f64, f64)]| {
            rows.iter()
                .map(|(t, v)| (format!("{t}"), json!(round_pct(*v))))
                .collect::<Map<String, Value>>()
        };
        json!({
            "n_queries": self.n_queries,
            "r1": table(&self.r1),
            "miou": round_pct(self.miou),
            "map": table(&self.map),
            "conventions": self.conventions(),
        })
    }
}

/// R1 at each `taus_r1`, mIoU, and mAP at each `taus_map`.
pub fn evaluate(
    pairs: &[EvalPair],
    taus_r1: &[f64],
    taus_map: &[f64],
    protocol: MapProtocol,
) -> Result<EvalReport> {
    nonempty(pairs)?;
    let mut acc = MetricAccumulator::new(taus_r1, taus_map);
    for p in pairs {
        acc.add(p);
    }
    let mut report = acc.report()?;
    if protocol == MapProtocol::Corpus {
        report.map = taus_map
            .iter()
            .map(|&t| Ok((t, 100.0 * corpus_average_precision(pairs, t)?)))
            .collect::<Result<_>>()?;
        report.protocol = MapProtocol::Corpus;
    }
    Ok(report)
}
