//! Risk estimators for the three blocks, the two generalization gaps, and
//! per-client percentile summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::models::{evaluate, ModelParams};
use crate::parallel;

/// How clients are weighted when averaging within a block (and when
/// aggregating client deltas).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    Uniform,
    /// Weight = number of the client's examples in the block at hand.
    #[default]
    SizeProportional,
    /// Weight = the client's stored `ρ_c`.
    ClientWeight,
}

impl RhoMode {
    pub fn weight(self, count: usize, rho: Option<f64>) -> f64 {
        match self {
            RhoMode::Uniform => 1.0,
            RhoMode::SizeProportional => count as f64,
            RhoMode::ClientWeight => rho.unwrap_or(count as f64),
        }
    }
}

pub const DEFAULT_PERCENTILES: [f64; 5] = [95.0, 75.0, 50.0, 25.0, 5.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ClientMetric {
    pub id: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEval {
    pub loss: f64,
    pub accuracy: f64,
    pub per_client: Vec<ClientMetric>,
}

/// Weighted mean, accumulated in the given order as a running mean so that
/// identical inputs reproduce their common value exactly.
fn running_mean(values: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut mean, mut total) = (0.0, 0.0);
    for (w, v) in values {
        if w <= 0.0 {
            continue;
        }
        total += w;
        mean += (w / total) * (v - mean);
    }
    mean
}

/// Evaluates every client of `block` and combines them with `rho_mode`
/// weights, in ascending client-id order.
pub fn eval_block(
    params: &ModelParams,
    block: &BTreeMap<String, Vec<Example>>,
    weights: &BTreeMap<String, f64>,
    rho_mode: RhoMode,
) -> Result<BlockEval> {
    let clients: Vec<(&String, &Vec<Example>)> = block
        .iter()
        .filter(|(id, ex)| {
            if ex.is_empty() {
                log::warn!("client `{id}` has no examples in this block; skipped");
            }
            !ex.is_empty()
        })
        .collect();
    if clients.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let per_client = parallel::try_map(&clients, |(id, ex)| {
        let (loss, accuracy) = evaluate(params, ex)?;
        Ok::<_, Error>(ClientMetric {
            id: (*id).clone(),
            loss,
            accuracy,
        })
    })?;
    let w: Vec<f64> = clients
        .iter()
        .map(|(id, ex)| rho_mode.weight(ex.len(), weights.get(*id).copied()))
        .collect();
    if w.iter().all(|&x| x <= 0.0) {
        return Err(Error::ZeroWeight);
    }
    Ok(BlockEval {
        loss: running_mean(w.iter().copied().zip(per_client.iter().map(|c| c.loss))),
        accuracy: running_mean(w.iter().copied().zip(per_client.iter().map(|c| c.accuracy))),
        per_client,
    })
}

/// `(out_of_sample, participation) = (part_val − part_train, unpart − part_val)`.
pub fn gaps(part_train: f64, part_val: f64, unpart: f64) -> (f64, f64) {
    (part_val - part_train, unpart - part_val)
}

/// Inclusive linear-interpolation percentiles of unweighted values.
pub fn client_percentiles(values: &[f64], ps: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    Ok(ps
        .iter()
        .map(|&p| {
            let rank = (p / 100.0).clamp(0.0, 1.0) * last;
            let lo = rank.floor() as usize;
            let hi = rank.ceil() as usize;
            let frac = rank - lo as f64;
            (p, sorted[lo] + frac * (sorted[hi] - sorted[lo]))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileTable {
    /// `(p, accuracy)` pairs across participating validation clients.
    pub part_val: Vec<(f64, f64)>,
    pub unpart: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRecord {
    /// Round (federated) or epoch (centralized).
    pub index: usize,
    pub part_train: BlockMetrics,
    pub part_val: BlockMetrics,
    pub unpart: BlockMetrics,
    pub percentiles: Option<PercentileTable>,
}

impl RiskRecord {
    pub fn from_blocks(
        index: usize,
        part_train: &BlockEval,
        part_val: &BlockEval,
        unpart: &BlockEval,
        with_percentiles: bool,
    ) -> Result<Self> {
        let m = |b: &BlockEval| BlockMetrics {
            loss: b.loss,
            accuracy: b.accuracy,
        };
        let percentiles = if with_percentiles {
            let acc = |b: &BlockEval| b.per_client.iter().map(|c| c.accuracy).collect::<Vec<_>>();
            Some(PercentileTable {
                part_val: client_percentiles(&acc(part_val), &DEFAULT_PERCENTILES)?,
                unpart: client_percentiles(&acc(unpart), &DEFAULT_PERCENTILES)?,
            })
        } else {
            None
        };
        Ok(RiskRecord {
            index,
            part_train: m(part_train),
            part_val: m(part_val),
            unpart: m(unpart),
            percentiles,
        })
    }

    pub fn loss_gaps(&self) -> (f64, f64) {
        gaps(self.part_train.loss, self.part_val.loss, self.unpart.loss)
    }

    pub fn accuracy_gaps(&self) -> (f64, f64) {
        gaps(
            self.part_train.accuracy,
            self.part_val.accuracy,
            self.unpart.accuracy,
        )
    }

    pub fn participation_gap_loss(&self) -> f64 {
        self.loss_gaps().1
    }

    pub fn participation_gap_accuracy(&self) -> f64 {
        self.accuracy_gaps().1
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub config_digest: String,
    pub records: Vec<RiskRecord>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&RiskRecord> {
        self.records.last()
    }
}

const BASE_COLUMNS: [&str; 11] = [
    "index",
    "part_train_loss",
    "part_train_acc",
    "part_val_loss",
    "part_val_acc",
    "unpart_loss",
    "unpart_acc",
    "oos_gap_loss",
    "part_gap_loss",
    "oos_gap_acc",
    "part_gap_acc",
];

pub fn metrics_csv_header(with_percentiles: bool) -> String {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if with_percentiles {
        for block in ["part_val", "unpart"] {
            for p in DEFAULT_PERCENTILES {
                cols.push(format!("p{p:02.0}_{block}_acc"));
            }
        }
    }
    cols.join(",")
}

pub fn format_metrics_csv(log: &MetricsLog) -> String {
    let with_pct = log.records.first().is_some_and(|r| r.percentiles.is_some());
    let mut out = metrics_csv_header(with_pct);
    out.push('\n');
    for r in &log.records {
        let (oos_l, part_l) = r.loss_gaps();
        let (oos_a, part_a) = r.accuracy_gaps();
        let mut fields = vec![
            r.part_train.loss,
            r.part_train.accuracy,
            r.part_val.loss,
            r.part_val.accuracy,
            r.unpart.loss,
            r.unpart.accuracy,
            oos_l,
            part_l,
            oos_a,
            part_a,
        ];
        if with_pct {
            let t = r
                .percentiles
                .as_ref()
                .expect("percentile columns in every record");
            fields.extend(t.part_val.iter().chain(&t.unpart).map(|(_, v)| *v));
        }
        let _ = write!(out, "{}", r.index);
        for v in fields {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(log: &MetricsLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_metrics_csv(log)).map_err(|e| Error::io(path, e))
}
