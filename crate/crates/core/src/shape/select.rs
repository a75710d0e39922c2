use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureGroup;
use super::forest::{rf_train, ForestConfig};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Exhaustive search is capped at 2^16 subsets.
pub const MAX_GROUPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvScheme {
    Loocv,
    KFold(usize),
}

impl fmt::Display for CvScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CvScheme::Loocv => f.write_str("loocv"),
            CvScheme::KFold(k) => write!(f, "kfold:{k}"),
        }
    }
}

impl FromStr for CvScheme {
    type Err = Error;

    /// `loocv` or `kfold:K`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "loocv" {
            return Ok(CvScheme::Loocv);
        }
        match s.strip_prefix("kfold:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 2 => Ok(CvScheme::KFold(k)),
            _ => Err(Error::InvalidArgument(format!("cv must be `loocv` or `kfold:K` with K >= 2, got `{s}`"))),
        }
    }
}

/// Held-out index sets. K-fold is stratified: each class is shuffled with
/// `seed` and dealt round-robin across folds.
pub fn cv_folds(y: &[usize], scheme: CvScheme, seed: u64) -> Vec<Vec<usize>> {
    match scheme {
        CvScheme::Loocv => (0..y.len()).map(|i| vec![i]).collect(),
        CvScheme::KFold(k) => {
            let k = k.min(y.len());
            let classes = y.iter().max().map_or(0, |m| m + 1);
            let mut rng = RngStream::new(seed);
            let mut folds = vec![Vec::new(); k];
            let mut slot = 0;
            for c in 0..classes {
                let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
                idx.shuffle(&mut rng);
                for i in idx {
                    folds[slot % k].push(i);
                    slot += 1;
                }
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            folds.retain(|f| !f.is_empty());
            folds
        }
    }
}

/// Out-of-fold predictions for every row.
pub fn cv_predict(x: &[Vec<f64>], y: &[usize], scheme: CvScheme, forest: &ForestConfig) -> Result<Vec<usize>> {
    let mut pred = vec![0; y.len()];
    for test in cv_folds(y, scheme, forest.seed) {
        let train: Vec<usize> = (0..y.len()).filter(|i| test.binary_search(i).is_err()).collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let model = rf_train(&tx, &ty, forest)?;
        for i in test {
            pred[i] = model.predict(&x[i]).0;
        }
    }
    Ok(pred)
}

pub fn cv_accuracy(x: &[Vec<f64>], y: &[usize], scheme: CvScheme, forest: &ForestConfig) -> Result<f64> {
    let pred = cv_predict(x, y, scheme, forest)?;
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

fn project(x: &[Vec<f64>], columns: &[usize]) -> Vec<Vec<f64>> {
    x.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    /// Group indices, ascending.
    pub subset: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfsResult {
    pub groups: Vec<String>,
    pub cv: String,
    pub chosen: Vec<usize>,
    pub accuracy: f64,
    /// Every non-empty subset, best first.
    pub table: Vec<SubsetScore>,
}

impl EfsResult {
    pub fn chosen_names(&self) -> Vec<&str> {
        self.chosen.iter().map(|&g| self.groups[g].as_str()).collect()
    }
}

/// Higher accuracy first, then fewer groups, then lexicographic indices.
fn rank(a: &SubsetScore, b: &SubsetScore) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.subset.len().cmp(&b.subset.len()))
        .then(a.subset.cmp(&b.subset))
}

/// Exhaustive feature selection over groups of columns, scored by
/// cross-validated random-forest accuracy with the same forest seed for
/// every subset.
pub fn efs_select(
    x: &[Vec<f64>],
    y: &[usize],
    groups: &[FeatureGroup],
    scheme: CvScheme,
    forest: &ForestConfig,
) -> Result<EfsResult> {
    if groups.is_empty() || groups.len() > MAX_GROUPS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive selection supports 1..={MAX_GROUPS} features, got {}; combine columns into named groups",
            groups.len()
        )));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Data("feature selection needs at least two classes".into()));
    }
    let subsets: Vec<Vec<usize>> = (1u32..1 << groups.len())
        .map(|bits| (0..groups.len()).filter(|g| bits & (1 << g) != 0).collect())
        .collect();
    let mut table = subsets
        .into_par_iter()
        .map(|subset| {
            let cols: Vec<usize> = subset.iter().flat_map(|&g| groups[g].columns.iter().copied()).collect();
            let accuracy = cv_accuracy(&project(x, &cols), y, scheme, forest)?;
            Ok(SubsetScore { subset, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    table.sort_by(rank);
    Ok(EfsResult {
        groups: groups.iter().map(|g| g.name.clone()).collect(),
        cv: scheme.to_string(),
        chosen: table[0].subset.clone(),
        accuracy: table[0].accuracy,
        table,
    })
}

/// Benign/malignant classification scores with malignant as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassificationReport {
    /// A 0/0 precision, recall or F1 is reported as 0.
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let precision = div(tp as f64, (tp + fp) as f64);
        let recall = div(tp as f64, (tp + fn_) as f64);
        Self {
            precision,
            recall,
            accuracy: div((tp + tn) as f64, (tp + fp + fn_ + tn) as f64),
            f1: div(2.0 * precision * recall, precision + recall),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// 1 for malignant, 0 for benign.
pub fn encode_labels(labels: &[Label]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| match l {
            Label::Benign => Ok(0),
            Label::Malignant => Ok(1),
            Label::Unknown => Err(Error::Data("classification needs benign/malignant labels for every sample".into())),
        })
        .collect()
}

/// Leave-one-out evaluation of a random forest on the given columns.
pub fn classify_evaluate(x: &[Vec<f64>], labels: &[Label], columns: &[usize], forest: &ForestConfig) -> Result<ClassificationReport> {
    let y = encode_labels(labels)?;
    if y.len() < 3 {
        return Err(Error::Data(format!("classification needs at least 3 samples, got {}", y.len())));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Data("both benign and malignant samples are required".into()));
    }
    let pred = cv_predict(&project(x, columns), &y, CvScheme::Loocv, forest)?;
    let count = |p: usize, t: usize| pred.iter().zip(&y).filter(|&(&a, &b)| a == p && b == t).count();
    Ok(ClassificationReport::from_confusion(count(1, 1), count(1, 0), count(0, 1), count(0, 0)))
}
