//! Trajectory CSV files and cross-seed summaries.
//!
//! Trajectory schema, one row per accepted state:
//!
//! ```text
//! strategy,seed,rate,overall_acc,harmonic_mean,acc_class_0,...,acc_class_{C-1},wall_time_s
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::{auc_lowest_class, auc_lowest_class_on_grid, resample_nearest, ClassAccuracy, CurveRecord};

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Csv(e.to_string())
}

pub fn curve_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["strategy", "seed", "rate", "overall_acc", "harmonic_mean"].map(String::from).to_vec();
    h.extend((0..num_classes).map(|c| format!("acc_class_{c}")));
    h.push("wall_time_s".into());
    h
}

/// Writes records sharing one class set `0..C`.
pub fn write_curves<W: Write>(out: W, records: &[CurveRecord]) -> Result<()> {
    let classes: Vec<usize> = records.first().map(|r| r.per_class.classes().collect()).unwrap_or_default();
    if classes.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::invalid("trajectory classes must be 0..C"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(curve_header(classes.len())).map_err(csv_err)?;
    for r in records {
        if !r.per_class.classes().eq(classes.iter().copied()) {
            return Err(Error::invalid("records with differing class sets"));
        }
        let mut row = vec![
            r.strategy.clone(),
            r.seed.to_string(),
            r.rate.to_string(),
            r.overall_accuracy.to_string(),
            r.harmonic_mean.to_string(),
        ];
        row.extend(r.per_class.accuracies().iter().map(|a| a.to_string()));
        row.push(r.wall_time_seconds.to_string());
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e))
}

/// Parses a trajectory CSV written by [`write_curves`].
pub fn read_curves<R: Read>(input: R) -> Result<Vec<CurveRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let classes = header.iter().filter(|h| h.starts_with("acc_class_")).count();
    if header != curve_header(classes) {
        return Err(Error::Csv(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (n, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Csv(format!("row {}: bad value in column {}", n + 1, header[i])))
        };
        let acc: Vec<f64> = (0..classes).map(|c| num(5 + c)).collect::<Result<_>>()?;
        let seed = row[1].parse().map_err(|_| Error::Csv(format!("row {}: bad seed", n + 1)))?;
        let mut rec = CurveRecord::new(&row[0], seed, num(2)?, ClassAccuracy::from_fractions(&acc)?, num(5 + classes)?)?;
        rec.overall_accuracy = num(3)?;
        rec.harmonic_mean = num(4)?;
        out.push(rec);
    }
    Ok(out)
}

/// Mean/min/max across runs at one grid rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Band {
        let n = values.len().max(1) as f64;
        Band {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Cross-run summary of one strategy at one grid rate.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub strategy: String,
    pub rate: f64,
    pub runs: usize,
    pub overall: Band,
    pub harmonic_mean: Band,
    pub lowest_class: Band,
    pub wall_time: Band,
}

/// Groups runs by strategy and averages them on `grid` (nearest recorded
/// rate per grid point).
pub fn seed_average(runs: &[Vec<CurveRecord>], grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let mut by_strategy: BTreeMap<&str, Vec<&Vec<CurveRecord>>> = BTreeMap::new();
    for run in runs {
        let first = run.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
        by_strategy.entry(&first.strategy).or_default().push(run);
    }
    let mut out = Vec::new();
    for (strategy, group) in by_strategy {
        let picked: Vec<Vec<&CurveRecord>> =
            group.iter().map(|run| resample_nearest(run, grid)).collect::<Result<_>>()?;
        for (i, &rate) in grid.iter().enumerate() {
            let col = |f: &dyn Fn(&CurveRecord) -> f64| -> Band {
                Band::of(&picked.iter().map(|p| f(p[i])).collect::<Vec<_>>())
            };
            out.push(CurvePoint {
                strategy: strategy.to_string(),
                rate,
                runs: picked.len(),
                overall: col(&|r| r.overall_accuracy),
                harmonic_mean: col(&|r| r.harmonic_mean),
                lowest_class: col(&|r| r.per_class.lowest().unwrap_or(0.0)),
                wall_time: col(&|r| r.wall_time_seconds),
            });
        }
    }
    Ok(out)
}

pub fn write_curve_points<W: Write>(out: W, points: &[CurvePoint], extra: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = extra.iter().map(|(k, _)| *k).collect();
    header.extend([
        "strategy",
        "rate",
        "runs",
        "mean_overall_acc",
        "min_overall_acc",
        "max_overall_acc",
        "mean_harmonic_mean",
        "mean_lowest_class_acc",
        "min_lowest_class_acc",
        "mean_wall_time_s",
    ]);
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut row: Vec<String> = extra.iter().map(|(_, v)| v.clone()).collect();
        row.extend([
            p.strategy.clone(),
            p.rate.to_string(),
            p.runs.to_string(),
            p.overall.mean.to_string(),
            p.overall.min.to_string(),
            p.overall.max.to_string(),
            p.harmonic_mean.mean.to_string(),
            p.lowest_class.mean.to_string(),
            p.lowest_class.min.to_string(),
            p.wall_time.mean.to_string(),
        ]);
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e))
}

/// Lowest-class AUC of every run, grouped by strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct AucSummary {
    pub strategy: String,
    /// `(seed, auc)` per run.
    pub runs: Vec<(u64, f64)>,
    pub band: Band,
}

/// Per-strategy AUC. With `grid`, every run is resampled onto it first.
/// All runs must share one class set.
pub fn auc_by_strategy(runs: &[Vec<CurveRecord>], grid: Option<&[f64]>) -> Result<Vec<AucSummary>> {
    let mut classes: Option<Vec<usize>> = None;
    let mut by: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for run in runs {
        let first = run.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
        let c: Vec<usize> = first.per_class.classes().collect();
        match &classes {
            Some(prev) if *prev != c => return Err(Error::invalid("trajectories have mismatched class columns")),
            _ => classes = Some(c),
        }
        let auc = match grid {
            Some(g) => auc_lowest_class_on_grid(run, g)?,
            None => auc_lowest_class(run)?,
        };
        by.entry(first.strategy.clone()).or_default().push((first.seed, auc));
    }
    Ok(by
        .into_iter()
        .map(|(strategy, runs)| {
            let band = Band::of(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
            AucSummary { strategy, runs, band }
        })
        .collect())
}

pub fn write_auc_summary<W: Write>(out: W, summary: &[AucSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "runs", "mean_auc_lowest_class", "min_auc_lowest_class", "max_auc_lowest_class"])
        .map_err(csv_err)?;
    for s in summary {
        w.write_record([
            s.strategy.clone(),
            s.runs.len().to_string(),
            s.band.mean.to_string(),
            s.band.min.to_string(),
            s.band.max.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e))
}
