use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{boxplot_summary, mean_std, seg_metrics, BoxplotSummary, MeanStd, SegMetrics, METRIC_NAMES};
use crate::data::{list_pngs, read_mask, write_json, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Per-sample metrics, sorted by id.
    pub rows: Vec<(String, SegMetrics)>,
    /// Mean and population std per metric, keyed ACC/DIC/IoU/SEN/SPE.
    pub aggregate: BTreeMap<&'static str, MeanStd>,
    pub dice_box: BoxplotSummary,
    pub iou_box: BoxplotSummary,
}

/// Metrics for `(id, pred, gt)` triples; rows come back sorted by id.
pub fn evaluate_pairs(pairs: &[(String, Mask, Mask)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut rows: Vec<(String, SegMetrics)> = pairs
        .par_iter()
        .map(|(id, p, g)| Ok((id.clone(), seg_metrics(p, g)?)))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let column = |k: usize| rows.iter().map(|(_, m)| m.values()[k]).collect::<Vec<f64>>();
    let aggregate = METRIC_NAMES.iter().enumerate().map(|(k, &name)| (name, mean_std(&column(k)))).collect();
    Ok(EvalReport {
        dice_box: boxplot_summary(&column(1))?,
        iou_box: boxplot_summary(&column(2))?,
        aggregate,
        rows,
    })
}

/// Pair masks by file stem across two directories.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let preds = list_pngs(pred_dir)?;
    let gts = list_pngs(gt_dir)?;
    let only_first: Vec<String> = preds.keys().filter(|k| !gts.contains_key(*k)).cloned().collect();
    let only_second: Vec<String> = gts.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if !only_first.is_empty() || !only_second.is_empty() {
        return Err(Error::StemMismatch { only_first, only_second });
    }
    let pairs = preds
        .par_iter()
        .map(|(id, p)| Ok((id.clone(), read_mask(p)?, read_mask(&gts[id])?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&pairs)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    #[serde(rename = "ACC")]
    acc: f64,
    #[serde(rename = "DIC")]
    dice: f64,
    #[serde(rename = "IoU")]
    iou: f64,
    #[serde(rename = "SEN")]
    sen: f64,
    #[serde(rename = "SPE")]
    spe: f64,
    sen_undefined: bool,
    spe_undefined: bool,
}

#[derive(Serialize)]
struct AggregateJson<'a> {
    n: usize,
    std_kind: &'static str,
    metrics: &'a BTreeMap<&'static str, MeanStd>,
}

#[derive(Serialize)]
struct BoxplotJson<'a> {
    #[serde(rename = "DIC")]
    dice: &'a BoxplotSummary,
    #[serde(rename = "IoU")]
    iou: &'a BoxplotSummary,
}

impl EvalReport {
    /// Writes `metrics.csv`, `metrics.json` and `boxplot.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
        for (id, m) in &self.rows {
            w.serialize(CsvRow {
                id,
                acc: m.acc,
                dice: m.dice,
                iou: m.iou,
                sen: m.sen,
                spe: m.spe,
                sen_undefined: m.sen_undefined,
                spe_undefined: m.spe_undefined,
            })?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let agg = AggregateJson {
            n: self.rows.len(),
            std_kind: "population standard deviation over samples",
            metrics: &self.aggregate,
        };
        write_json(&dir.join("metrics.json"), &agg)?;
        write_json(
            &dir.join("boxplot.json"),
            &BoxplotJson {
                dice: &self.dice_box,
                iou: &self.iou_box,
            },
        )
    }
}
