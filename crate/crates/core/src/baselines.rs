//! Classical comparators on flattened fingerprint sequences.

use thiserror::Error;

use crate::fingerprint::LabeledDataset;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("contract violation: {0}")]
    Contract(String),
}

/// A `d·l` row-major sequence with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatSample {
    pub features: Vec<f64>,
    pub label: usize,
}

pub fn flatten_dataset(ds: &LabeledDataset) -> Vec<FlatSample> {
    ds.sequences()
        .iter()
        .map(|s| FlatSample {
            features: s.data.clone(),
            label: s.tx_index,
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ------------------------------------------------------------------ KNN

/// Majority label of the `k` Euclidean-nearest samples.
///
/// Equal distances keep training order. Vote ties go to the label with the
/// smallest summed distance, then to the lowest label.
pub fn knn_predict(train: &[FlatSample], query: &[f64], k: usize) -> Result<usize, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::Contract("KNN needs training samples".into()));
    }
    if k == 0 || k > train.len() {
        return Err(BaselineError::Contract(format!(
            "k={k} must lie in 1..={}",
            train.len()
        )));
    }
    let mut dists: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, s)| (sq_dist(&s.features, query), i))
        .collect();
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let neighbours = &dists[..k];

    let n_labels = neighbours.iter().map(|&(_, i)| train[i].label).max().unwrap_or(0) + 1;
    let mut votes = vec![0usize; n_labels];
    let mut spread = vec![0.0; n_labels];
    for &(d2, i) in neighbours {
        votes[train[i].label] += 1;
        spread[train[i].label] += d2.sqrt();
    }
    let mut best = 0;
    for label in 1..n_labels {
        let better = votes[label] > votes[best]
            || (votes[label] == votes[best] && votes[label] > 0 && spread[label] < spread[best]);
        if better || votes[best] == 0 && votes[label] > 0 {
            best = label;
        }
    }
    Ok(best)
}

// -------------------------------------------------------- decision tree

#[derive(Clone, Debug, PartialEq)]
pub enum DecisionTree {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<DecisionTree>,
        right: Box<DecisionTree>,
    },
}

impl DecisionTree {
    pub fn depth(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 0,
            DecisionTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// CART with Gini impurity and midpoint thresholds; `x <= threshold` goes left.
pub fn dt_fit(train: &[FlatSample], max_depth: usize) -> Result<DecisionTree, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::Contract("decision tree needs training samples".into()));
    }
    let n_classes = train.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let idx: Vec<usize> = (0..train.len()).collect();
    Ok(grow(train, idx, n_classes, max_depth))
}

fn grow(train: &[FlatSample], idx: Vec<usize>, n_classes: usize, depth_left: usize) -> DecisionTree {
    let mut counts = vec![0; n_classes];
    for &i in &idx {
        counts[train[i].label] += 1;
    }
    let label = majority(&counts);
    if depth_left == 0 || counts[label] == idx.len() {
        return DecisionTree::Leaf { label };
    }
    let Some((feature, threshold)) = best_split(train, &idx, &counts) else {
        return DecisionTree::Leaf { label };
    };
    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| train[i].features[feature] <= threshold);
    DecisionTree::Split {
        feature,
        threshold,
        left: Box::new(grow(train, left, n_classes, depth_left - 1)),
        right: Box::new(grow(train, right, n_classes, depth_left - 1)),
    }
}

fn best_split(train: &[FlatSample], idx: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
    let n = idx.len();
    let parent = gini(counts, n);
    let n_features = train[idx[0]].features.len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for f in 0..n_features {
        order.clear();
        order.extend(idx.iter().map(|&i| (train[i].features[f], train[i].label)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = vec![0usize; counts.len()];
        for pos in 0..n - 1 {
            left[order[pos].1] += 1;
            if order[pos].0 == order[pos + 1].0 {
                continue;
            }
            let nl = pos + 1;
            let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let impurity = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if impurity < parent - 1e-12 && best.is_none_or(|(b, _, _)| impurity < b) {
                best = Some((impurity, f, 0.5 * (order[pos].0 + order[pos + 1].0)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

pub fn dt_predict(tree: &DecisionTree, query: &[f64]) -> usize {
    let mut node = tree;
    loop {
        match node {
            DecisionTree::Leaf { label } => return *label,
            DecisionTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                node = if query[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

// ---------------------------------------------------------- naive Bayes

pub const NB_VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

pub fn nb_fit(train: &[FlatSample]) -> Result<GaussianNb, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::Contract("naive Bayes needs training samples".into()));
    }
    let n_classes = train.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let d = train[0].features.len();
    let mut count = vec![0usize; n_classes];
    let mut mean = vec![vec![0.0; d]; n_classes];
    for s in train {
        count[s.label] += 1;
        for (m, v) in mean[s.label].iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    for (c, &n) in count.iter().enumerate() {
        if n < 2 {
            return Err(BaselineError::Contract(format!(
                "class {c} has {n} samples, naive Bayes needs at least 2"
            )));
        }
        mean[c].iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut var = vec![vec![0.0; d]; n_classes];
    for s in train {
        for ((v, m), x) in var[s.label].iter_mut().zip(&mean[s.label]).zip(&s.features) {
            *v += (x - m).powi(2);
        }
    }
    for (c, &n) in count.iter().enumerate() {
        var[c]
            .iter_mut()
            .for_each(|v| *v = (*v / n as f64).max(NB_VARIANCE_FLOOR));
    }
    let total = train.len() as f64;
    Ok(GaussianNb {
        log_prior: count.iter().map(|&n| (n as f64 / total).ln()).collect(),
        mean,
        var,
    })
}

impl GaussianNb {
    pub fn log_posterior(&self, query: &[f64]) -> Vec<f64> {
        (0..self.log_prior.len())
            .map(|c| {
                self.log_prior[c]
                    + query
                        .iter()
                        .zip(&self.mean[c])
                        .zip(&self.var[c])
                        .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Highest log posterior; ties go to the lowest label.
pub fn nb_predict(model: &GaussianNb, query: &[f64]) -> usize {
    let post = model.log_posterior(query);
    let mut best = 0;
    for (c, &p) in post.iter().enumerate() {
        if p > post[best] {
            best = c;
        }
    }
    best
}
