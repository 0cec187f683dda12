//! Desk-computable metrics and a table for merging externally computed scores.
//!
//! A PSNR of identical inputs is reported as `f64::INFINITY`; CSV output
//! writes it as `inf`, and aggregation counts it separately from the mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, MaskGrid};

/// Soft masks binarize at this value (inclusive).
pub const SOFT_MASK_THRESHOLD: f64 = 0.5;

pub const SCORE_CSV_HEADER: [&str; 4] = ["sample", "method", "metric", "value"];

/// `|A ∩ B| / |A ∪ B|` of two binary masks.
pub fn iou(pred: &MaskGrid, reference: &MaskGrid) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::dim(format!(
            "masks {:?} and {:?} differ in shape",
            pred.shape(),
            reference.shape()
        )));
    }
    pred.require_binary("predicted mask")?;
    reference.require_binary("reference mask")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.values().iter().zip(reference.values()) {
        inter += (a == 1.0 && b == 1.0) as usize;
        union += (a == 1.0 || b == 1.0) as usize;
    }
    if union == 0 {
        return Err(Error::domain("IoU of two empty masks is undefined"));
    }
    Ok(inter as f64 / union as f64)
}

fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// `10 · log10(max² / MSE)`, or infinity when the inputs are identical.
pub fn psnr(a: &LatentGrid, b: &LatentGrid, max_value: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("images {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(Error::domain(format!("max_value must be > 0, got {max_value}")));
    }
    let n = a.values().len() as f64;
    let sse: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(psnr_from_mse(sse / n, max_value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    /// PSNR over every channel of the pixels outside the mask.
    pub psnr_outside: f64,
    /// Fraction of mask pixels where some channel moved by more than the threshold.
    pub changed_fraction_inside: f64,
}

pub fn masked_region_metrics(
    output: &LatentGrid,
    reference: &LatentGrid,
    mask: &MaskGrid,
    max_value: f64,
    change_threshold: f64,
) -> Result<RegionMetrics> {
    if output.shape() != reference.shape() {
        return Err(Error::dim(format!(
            "images {:?} and {:?} differ",
            output.shape(),
            reference.shape()
        )));
    }
    let (c, h, w) = output.shape();
    if mask.shape() != (h, w) {
        return Err(Error::dim(format!("mask {:?} does not cover image {h}x{w}", mask.shape())));
    }
    mask.require_binary("region mask")?;
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(Error::domain(format!("max_value must be > 0, got {max_value}")));
    }

    let plane = h * w;
    let (mut sse, mut outside) = (0.0, 0usize);
    let (mut changed, mut inside) = (0usize, 0usize);
    for p in 0..plane {
        if mask.values()[p] == 1.0 {
            inside += 1;
            let moved = (0..c).any(|k| {
                (output.values()[k * plane + p] - reference.values()[k * plane + p]).abs() > change_threshold
            });
            changed += moved as usize;
        } else {
            outside += 1;
            for k in 0..c {
                let d = output.values()[k * plane + p] - reference.values()[k * plane + p];
                sse += d * d;
            }
        }
    }
    if inside == 0 || outside == 0 {
        return Err(Error::domain(format!(
            "empty region: {inside} pixels inside the mask, {outside} outside"
        )));
    }
    Ok(RegionMetrics {
        psnr_outside: psnr_from_mse(sse / (outside * c) as f64, max_value),
        changed_fraction_inside: changed as f64 / inside as f64,
    })
}

/// Mask of pixels where any channel differs by more than `threshold`.
pub fn change_mask(a: &LatentGrid, b: &LatentGrid, threshold: f64) -> Result<MaskGrid> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("images {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let (c, h, w) = a.shape();
    let plane = h * w;
    Ok(MaskGrid::from_fn(h, w, |i, j| {
        let p = i * w + j;
        (0..c).any(|k| (a.values()[k * plane + p] - b.values()[k * plane + p]).abs() > threshold)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Internal,
    External,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: f64,
    /// CSV line the value came from, when ingested.
    line: Option<usize>,
}

type Key = (String, String, String);

/// Scores keyed by `(sample, method, metric)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: BTreeMap<Key, Entry>,
    provenance: BTreeMap<String, Provenance>,
}

fn describe(key: &Key) -> String {
    format!("({}, {}, {})", key.0, key.1, key.2)
}

fn origin(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}"),
        None => "an internal measurement".to_string(),
    }
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, sample: &str, method: &str, metric: &str) -> Option<f64> {
        self.rows
            .get(&(sample.to_string(), method.to_string(), metric.to_string()))
            .map(|e| e.value)
    }

    pub fn provenance(&self, metric: &str) -> Option<Provenance> {
        self.provenance.get(metric).copied()
    }

    /// Rows in `(sample, method, metric)` order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &str, &str, f64)> {
        self.rows
            .iter()
            .map(|((s, m, k), e)| (s.as_str(), m.as_str(), k.as_str(), e.value))
    }

    fn check_insert(&self, key: &Key, line: Option<usize>, provenance: Provenance) -> Result<()> {
        if let Some(existing) = self.rows.get(key) {
            return Err(Error::Conflict(format!(
                "duplicate {} from {} and {}",
                describe(key),
                origin(existing.line),
                origin(line)
            )));
        }
        if let Some(&p) = self.provenance.get(&key.2) {
            if p != provenance {
                return Err(Error::Conflict(format!(
                    "metric {} is already {p:?}, cannot add {provenance:?} values",
                    key.2
                )));
            }
        }
        Ok(())
    }

    pub fn insert(
        &mut self,
        sample: &str,
        method: &str,
        metric: &str,
        value: f64,
        provenance: Provenance,
    ) -> Result<()> {
        self.insert_at(
            (sample.to_string(), method.to_string(), metric.to_string()),
            value,
            None,
            provenance,
        )
    }

    fn insert_at(&mut self, key: Key, value: f64, line: Option<usize>, provenance: Provenance) -> Result<()> {
        if value.is_nan() {
            return Err(Error::domain(format!("NaN score for {}", describe(&key))));
        }
        self.check_insert(&key, line, provenance)?;
        self.provenance.insert(key.2.clone(), provenance);
        self.rows.insert(key, Entry { value, line });
        Ok(())
    }

    /// Merge `sample,method,metric,value` rows tagged external. Either every
    /// row is merged or, on error, none is.
    pub fn ingest_csv<R: Read>(&mut self, reader: R) -> Result<usize> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut staged = self.clone();
        let mut added = 0;
        let mut seen_header = false;
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 1;
            let record = record.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if !seen_header {
                let header: Vec<&str> = record.iter().collect();
                if header != SCORE_CSV_HEADER {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected header {}", SCORE_CSV_HEADER.join(",")),
                    });
                }
                seen_header = true;
                continue;
            }
            if record.len() != 4 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", record.len()),
                });
            }
            let value: f64 = record[3].parse().map_err(|_| Error::Parse {
                line,
                message: format!("value {:?} is not a number", &record[3]),
            })?;
            if value.is_nan() {
                return Err(Error::Parse {
                    line,
                    message: "NaN is not a valid score".into(),
                });
            }
            if record.iter().take(3).any(str::is_empty) {
                return Err(Error::Parse {
                    line,
                    message: "sample, method and metric must be non-empty".into(),
                });
            }
            let key = (record[0].to_string(), record[1].to_string(), record[2].to_string());
            staged.insert_at(key, value, Some(line), Provenance::External)?;
            added += 1;
        }
        if !seen_header {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        }
        *self = staged;
        Ok(added)
    }

    pub fn ingest_external_scores(&mut self, path: &Path) -> Result<usize> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        self.ingest_csv(file)
    }

    pub fn export_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::Integrity(format!("csv write failed: {e}"));
        writer.write_record(SCORE_CSV_HEADER).map_err(wrap)?;
        for (s, m, k, v) in self.rows() {
            writer.write_record([s, m, k, &v.to_string()]).map_err(wrap)?;
        }
        writer.flush().map_err(|e| Error::Integrity(format!("csv flush failed: {e}")))
    }

    /// Per-(method, metric) arithmetic mean over finite values.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut acc: BTreeMap<(&str, &str), (f64, usize, usize)> = BTreeMap::new();
        for (_, method, metric, value) in self.rows() {
            let slot = acc.entry((method, metric)).or_insert((0.0, 0, 0));
            if value.is_finite() {
                slot.0 += value;
                slot.1 += 1;
            } else {
                slot.2 += 1;
            }
        }
        acc.into_iter()
            .map(|((method, metric), (sum, count, infinite))| Aggregate {
                method: method.to_string(),
                metric: metric.to_string(),
                mean: (count > 0).then(|| sum / count as f64),
                count,
                infinite_count: infinite,
                provenance: self.provenance[metric],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub metric: String,
    /// `None` when every value was infinite.
    pub mean: Option<f64>,
    pub count: usize,
    pub infinite_count: usize,
    pub provenance: Provenance,
}

/// Methods as rows, metrics as columns; external metrics are marked `*`.
pub fn format_aggregate_table(aggregates: &[Aggregate]) -> String {
    let mut methods: Vec<&str> = aggregates.iter().map(|a| a.method.as_str()).collect();
    methods.dedup();
    let mut metrics: Vec<(&str, Provenance)> = aggregates
        .iter()
        .map(|a| (a.metric.as_str(), a.provenance))
        .collect();
    metrics.sort();
    metrics.dedup();

    let cell = |method: &str, metric: &str| -> String {
        match aggregates.iter().find(|a| a.method == method && a.metric == metric) {
            None => "-".into(),
            Some(a) => match (a.mean, a.infinite_count) {
                (Some(m), 0) => format!("{m:.4}"),
                (Some(m), n) => format!("{m:.4} (+{n} inf)"),
                (None, _) => "inf".into(),
            },
        }
    };

    let mut out = String::new();
    let _ = write!(out, "{:<16}", "method");
    for (metric, prov) in &metrics {
        let label = match prov {
            Provenance::External => format!("{metric}*"),
            Provenance::Internal => metric.to_string(),
        };
        let _ = write!(out, " {label:>18}");
    }
    out.push('\n');
    for method in methods {
        let _ = write!(out, "{method:<16}");
        for (metric, _) in &metrics {
            let _ = write!(out, " {:>18}", cell(method, metric));
        }
        out.push('\n');
    }
    out
}
