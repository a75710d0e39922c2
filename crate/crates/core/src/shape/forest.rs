//! Random forest of Gini decision trees grown to purity on bootstrap
//! resamples, with `⌈√d⌉` candidate features per split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub seed: u64,
    /// Candidate features per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            seed: 0,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { counts: Vec<u32> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn argmax(counts: &[u32]) -> usize {
    // First maximum: ties resolve to the smaller class index.
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(self.leaf_counts(x))
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    mtry: usize,
    rng: RngStream,
    nodes: Vec<Node>,
    feats: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best (score, feature, threshold) where score = Σ_children Σ_k c_k²/n_child;
    /// maximizing it minimizes the weighted Gini impurity of the children.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let d = self.feats.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut visited = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        let total = self.counts(idx);
        for k in 0..d {
            if visited >= self.mtry {
                break;
            }
            // Lazy Fisher-Yates: draw the next candidate feature.
            let j = k + self.rng.below(d - k);
            self.feats.swap(k, j);
            let f = self.feats[k];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = vec![0u32; self.classes];
            let n = pairs.len();
            for s in 0..n - 1 {
                left[pairs[s].1] += 1;
                if pairs[s].0 == pairs[s + 1].0 {
                    continue;
                }
                let (nl, nr) = ((s + 1) as f64, (n - s - 1) as f64);
                let (mut sl, mut sr) = (0.0, 0.0);
                for c in 0..self.classes {
                    let l = left[c] as f64;
                    let r = (total[c] - left[c]) as f64;
                    sl += l * l;
                    sr += r * r;
                }
                let score = sl / nl + sr / nr;
                if best.map_or(true, |b| score > b.0) {
                    let (a, b) = (pairs[s].0, pairs[s + 1].0);
                    let mid = a + (b - a) / 2.0;
                    best = Some((score, f, if mid < b { mid } else { a }));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        if counts.iter().filter(|&&c| c > 0).count() <= 1 || idx.len() < 2 {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub classes: usize,
    pub features: usize,
    pub config: ForestConfig,
}

/// Fit on rows `x` with class indices `y`.
pub fn rf_train(x: &[Vec<f64>], y: &[usize], config: &ForestConfig) -> Result<RandomForest> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "random forest needs at least 2 labelled rows (got {} rows, {} labels)",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("feature rows must be non-empty and of equal length".into()));
    }
    if config.trees == 0 {
        return Err(Error::InvalidArgument("forest needs at least one tree".into()));
    }
    let classes = y.iter().max().unwrap() + 1;
    if y.iter().all(|&c| c == y[0]) {
        log::warn!("random forest trained on a single class; predictions are constant");
    }
    let mtry = config.max_features.unwrap_or((d as f64).sqrt().ceil() as usize).clamp(1, d);
    let root = RngStream::new(config.seed);
    let trees = (0..config.trees)
        .map(|t| {
            let mut rng = root.substream(t as u64);
            let idx: Vec<usize> = if config.bootstrap {
                (0..x.len()).map(|_| rng.below(x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let mut b = Builder {
                x,
                y,
                classes,
                mtry,
                rng,
                nodes: Vec::new(),
                feats: (0..d).collect(),
            };
            b.grow(idx);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RandomForest {
        trees,
        classes,
        features: d,
        config: *config,
    })
}

impl RandomForest {
    /// Majority vote (ties to the smaller class) and vote fractions.
    pub fn predict(&self, x: &[f64]) -> (usize, Vec<f64>) {
        let mut votes = vec![0u32; self.classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        let n = self.trees.len() as f64;
        (argmax(&votes), votes.iter().map(|&v| v as f64 / n).collect())
    }
}

pub fn rf_predict(model: &RandomForest, x: &[f64]) -> (usize, Vec<f64>) {
    model.predict(x)
}
