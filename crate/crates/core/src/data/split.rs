use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::raster::{Label, Sample};
use crate::error::{Error, Result};
use crate::tensor::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must lie in [0,1] and sum to 1 (got {}/{}/{})",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Stratified, seeded split. Per label, `round(n*val)` and `round(n*test)`
/// samples go to validation and test; training takes the remainder. Each
/// part is returned sorted by id.
pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let mut by_label: BTreeMap<Label, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_label.entry(s.label).or_default().push(s);
    }
    let root = RngStream::new(spec.seed);
    let mut out = Split::default();
    for (label, mut group) in by_label {
        if group.len() < 3 {
            let msg = format!("label `{label}` has only {} sample(s); stratification is degenerate", group.len());
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = root.substream(label as u64);
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let n_val = (n * spec.val).round() as usize;
        let n_test = ((n * spec.test).round() as usize).min(group.len() - n_val);
        out.val.extend(group[..n_val].iter().map(|s| (*s).clone()));
        out.test.extend(group[n_val..n_val + n_test].iter().map(|s| (*s).clone()));
        out.train.extend(group[n_val + n_test..].iter().map(|s| (*s).clone()));
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Mask, Raster};
    use std::collections::BTreeSet;

    fn corpus(malignant: usize, benign: usize) -> Vec<Sample> {
        (0..malignant + benign)
            .map(|i| {
                let label = if i < malignant { Label::Malignant } else { Label::Benign };
                Sample::new(format!("s{i:03}"), Raster::filled(2, 2, 0.0), Mask::zeros(2, 2), label).unwrap()
            })
            .collect()
    }

    fn ids(v: &[Sample]) -> BTreeSet<String> {
        v.iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn reported_corpus_sizes() {
        let s = split(&corpus(150, 100), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (175, 25, 50));
        let count = |v: &[Sample], l| v.iter().filter(|s| s.label == l).count();
        assert_eq!(count(&s.test, Label::Malignant), 30);
        assert_eq!(count(&s.test, Label::Benign), 20);
    }

    #[test]
    fn disjoint_exhaustive_deterministic() {
        let c = corpus(23, 17);
        let spec = SplitSpec { seed: 9, ..Default::default() };
        let a = split(&c, &spec).unwrap();
        let b = split(&c, &spec).unwrap();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
        let (tr, va, te) = (ids(&a.train), ids(&a.val), ids(&a.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), c.len());
        let other = split(&c, &SplitSpec { seed: 10, ..Default::default() }).unwrap();
        assert_ne!(ids(&other.test), ids(&a.test));
    }

    #[test]
    fn tiny_class_warns() {
        let s = split(&corpus(10, 2), &SplitSpec::default()).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(split(&corpus(5, 4), &SplitSpec::default()).is_err());
    }
}
