//! Baseline-relative comparison, bootstrap intervals and the per-context
//! benefit map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::run::{ControllerKind, EvalRecord};
use super::{MetricKind, Metrics};
use crate::error::{Error, Result};
use crate::scenario::Context;

const BOOTSTRAP_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x0b00_7575;

/// Seed-averaged metrics of one controller on one context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextResult {
    pub context: usize,
    pub controller: ControllerKind,
    pub metrics: Metrics,
}

/// Percentage change against the baseline on one context; `None` where the
/// baseline value is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDelta {
    pub context: usize,
    pub controller: ControllerKind,
    pub deltas: BTreeMap<MetricKind, Option<f64>>,
}

impl ContextDelta {
    pub fn get(&self, metric: MetricKind) -> Option<f64> {
        self.deltas.get(&metric).copied().flatten()
    }
}

/// Mean of the per-context deltas with a 95% percentile bootstrap interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub controller: ControllerKind,
    pub metric: MetricKind,
    pub mean_pct: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Contexts contributing to the mean.
    pub contexts: usize,
    /// Contexts dropped because the baseline value was zero.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub baseline: ControllerKind,
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
    pub per_context: Vec<ContextResult>,
    pub deltas: Vec<ContextDelta>,
    /// Corpus mean of the per-context metrics, per controller.
    pub means: BTreeMap<ControllerKind, Metrics>,
    pub summary: Vec<DeltaSummary>,
    /// Every constant the numbers depend on.
    pub config: serde_json::Value,
}

fn pct(treatment: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (treatment - baseline) / baseline * 100.0)
}

/// Sum after sorting, so the result does not depend on input order.
fn sorted_mean(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 95% percentile interval of the resampled mean.
fn bootstrap_ci(sorted: &[f64]) -> (f64, f64) {
    match sorted.len() {
        0 => return (f64::NAN, f64::NAN),
        1 => return (sorted[0], sorted[0]),
        _ => {}
    }
    let n = sorted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| sorted[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize).min(BOOTSTRAP_RESAMPLES - 1)];
    (at(0.025), at(0.975))
}

/// Builds the report from paired episode records. Every controller must
/// cover exactly the (context, seed) pairs of the baseline.
pub fn compare(
    records: &[EvalRecord],
    corpus_len: usize,
    baseline: ControllerKind,
    config: serde_json::Value,
) -> Result<BenchmarkReport> {
    let mut runs: BTreeMap<ControllerKind, BTreeMap<(usize, u64), &Metrics>> = BTreeMap::new();
    for r in records {
        if r.context >= corpus_len {
            return Err(Error::Pairing(format!("record for context {} outside a corpus of {corpus_len}", r.context)));
        }
        if runs.entry(r.kind).or_default().insert((r.context, r.seed), &r.metrics).is_some() {
            return Err(Error::Pairing(format!("duplicate {} run on context {} seed {}", r.kind, r.context, r.seed)));
        }
    }
    let base_runs = runs
        .get(&baseline)
        .ok_or_else(|| Error::Pairing(format!("no records for baseline {baseline}")))?;
    let pairs: BTreeSet<(usize, u64)> = base_runs.keys().copied().collect();
    for (kind, r) in &runs {
        if r.keys().copied().collect::<BTreeSet<_>>() != pairs {
            return Err(Error::Pairing(format!("{kind} was not run on the same (context, seed) pairs as {baseline}")));
        }
    }
    let contexts: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
    let seeds: BTreeSet<u64> = pairs.iter().map(|p| p.1).collect();
    if pairs.len() != contexts.len() * seeds.len() {
        return Err(Error::Pairing("contexts were evaluated on different seed sets".into()));
    }

    let mut per_context = Vec::new();
    let mut table: BTreeMap<(ControllerKind, usize), Metrics> = BTreeMap::new();
    for (&kind, r) in &runs {
        for &c in &contexts {
            let ms: Vec<Metrics> = seeds.iter().map(|&s| *r[&(c, s)]).collect();
            let m = Metrics::mean(&ms);
            table.insert((kind, c), m);
            per_context.push(ContextResult { context: c, controller: kind, metrics: m });
        }
    }

    let controllers: Vec<ControllerKind> = runs.keys().copied().collect();
    let mut means = BTreeMap::new();
    for &kind in &controllers {
        let mut m = Metrics::default();
        for metric in MetricKind::ALL {
            let mut xs: Vec<f64> = contexts.iter().map(|&c| table[&(kind, c)].get(metric)).collect();
            set(&mut m, metric, sorted_mean(&mut xs));
        }
        means.insert(kind, m);
    }

    let mut deltas = Vec::new();
    let mut summary = Vec::new();
    for &kind in controllers.iter().filter(|&&k| k != baseline) {
        let mut cols: BTreeMap<MetricKind, Vec<f64>> = BTreeMap::new();
        let mut excluded: BTreeMap<MetricKind, usize> = BTreeMap::new();
        for &c in &contexts {
            let (t, b) = (table[&(kind, c)], table[&(baseline, c)]);
            let d: BTreeMap<MetricKind, Option<f64>> =
                MetricKind::ALL.iter().map(|&k| (k, pct(t.get(k), b.get(k)))).collect();
            for (&k, v) in &d {
                match v {
                    Some(x) => cols.entry(k).or_default().push(*x),
                    None => *excluded.entry(k).or_default() += 1,
                }
            }
            deltas.push(ContextDelta { context: c, controller: kind, deltas: d });
        }
        for metric in MetricKind::ALL {
            let mut xs = cols.remove(&metric).unwrap_or_default();
            let mean_pct = if xs.is_empty() { f64::NAN } else { sorted_mean(&mut xs) };
            let (ci_low, ci_high) = bootstrap_ci(&xs);
            summary.push(DeltaSummary {
                controller: kind,
                metric,
                mean_pct,
                ci_low,
                ci_high,
                contexts: xs.len(),
                excluded: excluded.get(&metric).copied().unwrap_or(0),
            });
        }
    }

    Ok(BenchmarkReport {
        baseline,
        controllers,
        seeds: seeds.into_iter().collect(),
        per_context,
        deltas,
        means,
        summary,
        config,
    })
}

fn set(m: &mut Metrics, kind: MetricKind, v: f64) {
    let slot = match kind {
        MetricKind::TotalEmission => &mut m.total_emission,
        MetricKind::EmissionPerVehicle => &mut m.emission_per_vehicle,
        MetricKind::MeanSpeed => &mut m.mean_speed,
        MetricKind::Throughput => &mut m.throughput,
        MetricKind::MeanTravelTime => &mut m.mean_travel_time,
        MetricKind::IdlingTimePerVehicle => &mut m.idling_time_per_vehicle,
        MetricKind::VehiclesCompleted => &mut m.vehicles_completed,
    };
    *slot = v;
}

impl BenchmarkReport {
    pub fn summary_for(&self, controller: ControllerKind, metric: MetricKind) -> Option<&DeltaSummary> {
        self.summary.iter().find(|s| s.controller == controller && s.metric == metric)
    }

    /// Human-readable table: one row per controller, deltas against the
    /// baseline for emission, speed and throughput.
    pub fn summary_table(&self) -> String {
        let cols = [MetricKind::TotalEmission, MetricKind::MeanSpeed, MetricKind::Throughput];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} contexts x {} seeds, deltas vs {} (emission: lower is better)",
            self.deltas.iter().map(|d| d.context).collect::<BTreeSet<_>>().len().max(
                self.per_context.iter().map(|d| d.context).collect::<BTreeSet<_>>().len()
            ),
            self.seeds.len(),
            self.baseline
        );
        let _ = writeln!(out, "{:<10} {:>34} {:>34} {:>34}", "controller", "emission", "speed", "throughput");
        for &kind in &self.controllers {
            let _ = write!(out, "{kind:<10}");
            for metric in cols {
                let abs = self.means[&kind].get(metric);
                let cell = match self.summary_for(kind, metric) {
                    Some(s) => format!("{abs:.1} ({:+.2}% [{:+.2}, {:+.2}])", s.mean_pct, s.ci_low, s.ci_high),
                    None => format!("{abs:.1}"),
                };
                let _ = write!(out, " {cell:>34}");
            }
            out.push('\n');
        }
        out
    }

    /// Emission benefit of every non-baseline controller on every context.
    pub fn benefit_rows(&self, corpus: &[Context]) -> Result<Vec<BenefitRow>> {
        self.deltas
            .iter()
            .map(|d| {
                let ctx = corpus
                    .get(d.context)
                    .ok_or_else(|| Error::Pairing(format!("report context {} missing from corpus", d.context)))?;
                Ok(BenefitRow::new(ctx, d.controller, d.get(MetricKind::TotalEmission)))
            })
            .collect()
    }
}

/// Context features paired with the emission delta of one controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitRow {
    pub lane_length: f64,
    pub inflow: f64,
    pub speed_limit: f64,
    pub lane_count: u32,
    pub green_s: f64,
    pub red_s: f64,
    pub phase_offset: f64,
    pub penetration: f64,
    pub seed: u64,
    pub controller: ControllerKind,
    pub emission_delta_pct: Option<f64>,
}

const BENEFIT_HEADER: [&str; 11] = [
    "lane_length",
    "inflow",
    "speed_limit",
    "lane_count",
    "green_s",
    "red_s",
    "phase_offset",
    "penetration",
    "seed",
    "controller",
    "emission_delta_pct",
];

impl BenefitRow {
    pub fn new(ctx: &Context, controller: ControllerKind, emission_delta_pct: Option<f64>) -> Self {
        Self {
            lane_length: ctx.lane_length,
            inflow: ctx.inflow,
            speed_limit: ctx.speed_limit,
            lane_count: ctx.lane_count,
            green_s: ctx.green_s,
            red_s: ctx.red_s,
            phase_offset: ctx.phase_offset,
            penetration: ctx.penetration,
            seed: ctx.seed,
            controller,
            emission_delta_pct,
        }
    }
}

/// CSV with a header line, even when there are no rows. An undefined delta
/// is an empty field.
pub fn write_benefit_map<W: Write>(rows: &[BenefitRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(BENEFIT_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_benefit_map<R: Read>(input: R) -> Result<Vec<BenefitRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != BENEFIT_HEADER {
        return Err(Error::Parse { line: 1, field: None, msg: format!("unexpected benefit map header {header:?}") });
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<BenefitRow>, _>>()?)
}
