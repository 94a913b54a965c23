//! Fairness properties, the feature-wise similarity predicate, categorical
//! partitions of the input space and counterexample validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::nn::{class_of, Network};

/// Slack on the numerical similarity radius.
pub const SIMILARITY_SLACK: f64 = 1e-9;

pub const DEFAULT_PARTITION_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropertyClass {
    /// Similar individuals differ only in the sensitive attribute.
    P1,
    /// Numerical features may additionally differ by up to `delta`.
    P2,
}

/// Domain box over the scaled numerical features plus per-feature
/// similarity radii. Both arrays follow the schema's numerical order;
/// categorical features range over all of their levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessProperty {
    pub class: PropertyClass,
    pub sensitive_feature: String,
    pub domain: Vec<(f64, f64)>,
    pub delta: Vec<f64>,
}

impl FairnessProperty {
    /// Whole-range domain `[0,1]^n` with a common radius.
    pub fn uniform(schema: &Schema, class: PropertyClass, delta: f64) -> Self {
        let n = schema.numeric_count();
        FairnessProperty {
            class,
            sensitive_feature: schema.sensitive_feature.clone(),
            domain: vec![(0.0, 1.0); n],
            delta: vec![if class == PropertyClass::P1 { 0.0 } else { delta }; n],
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.sensitive_feature != schema.sensitive_feature {
            return Err(Error::config(format!(
                "property sensitive feature {:?} does not match schema sensitive feature {:?}",
                self.sensitive_feature, schema.sensitive_feature
            )));
        }
        let n = schema.numeric_count();
        if self.domain.len() != n || self.delta.len() != n {
            return Err(Error::config(format!(
                "property lists {} domain intervals and {} radii but the schema has {} numerical features",
                self.domain.len(),
                self.delta.len(),
                n
            )));
        }
        for (i, col) in schema.layout().numeric.iter().enumerate() {
            let name = schema.feature_name(col.feature);
            let (l, u) = self.domain[i];
            if !(0.0..=1.0).contains(&l) || !(0.0..=1.0).contains(&u) || l > u {
                return Err(Error::config(format!(
                    "feature {name:?}: domain [{l}, {u}] must satisfy 0 <= l <= u <= 1"
                )));
            }
            let d = self.delta[i];
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config(format!(
                    "feature {name:?}: delta must be finite and >= 0"
                )));
            }
            if self.class == PropertyClass::P1 && d != 0.0 {
                return Err(Error::config(format!(
                    "feature {name:?}: P1 properties require delta = 0"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let prop: FairnessProperty = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        prop.validate(schema)?;
        Ok(prop)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("property serialization cannot fail")
    }

    /// Membership in the domain: numericals inside their interval and every
    /// categorical block a valid one-hot vector.
    pub fn contains(&self, x: &[f64], schema: &Schema) -> bool {
        let layout = schema.layout();
        if x.len() != layout.width {
            return false;
        }
        let numeric_ok = layout
            .numeric
            .iter()
            .zip(&self.domain)
            .all(|(c, &(l, u))| x[c.col] >= l && x[c.col] <= u);
        numeric_ok && layout.categorical.iter().all(|b| one_hot_level(&x[b.cols()]).is_some())
    }
}

/// Level index of an exact one-hot block.
pub fn one_hot_level(block: &[f64]) -> Option<usize> {
    let mut level = None;
    for (i, &v) in block.iter().enumerate() {
        if v == 1.0 {
            if level.is_some() {
                return None;
            }
            level = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    level
}

/// Similarity predicate: numerical features within `delta` (plus slack),
/// non-sensitive categorical blocks identical, sensitive block free.
pub fn is_similar(x: &[f64], x_prime: &[f64], prop: &FairnessProperty, schema: &Schema) -> Result<bool> {
    let layout = schema.layout();
    if x.len() != layout.width || x_prime.len() != layout.width {
        return Err(Error::input(format!(
            "similarity check expects vectors of width {}",
            layout.width
        )));
    }
    let numeric = layout
        .numeric
        .iter()
        .zip(&prop.delta)
        .all(|(c, d)| (x[c.col] - x_prime[c.col]).abs() <= d + SIMILARITY_SLACK);
    let categorical = layout.nonsensitive_blocks().all(|b| x[b.cols()] == x_prime[b.cols()]);
    Ok(numeric && categorical)
}

/// One cell of the certification grid: a fixed assignment of the
/// non-sensitive categoricals and an unordered pair of sensitive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `(index into layout.categorical, level)` for each non-sensitive block.
    pub assignment: Vec<(usize, usize)>,
    /// Distinct sensitive levels, `a < b`.
    pub sensitive_pair: (usize, usize),
    pub numerical_box: Vec<(f64, f64)>,
}

impl Partition {
    /// Full feature vector for the given numericals and sensitive level.
    pub fn embed(&self, schema: &Schema, numeric: &[f64], sensitive_level: usize) -> Vec<f64> {
        let layout = schema.layout();
        let mut x = vec![0.0; layout.width];
        for (c, &v) in layout.numeric.iter().zip(numeric) {
            x[c.col] = v;
        }
        for &(b, level) in &self.assignment {
            x[layout.categorical[b].start + level] = 1.0;
        }
        x[layout.sensitive_block().start + sensitive_level] = 1.0;
        x
    }

    /// Human-readable assignment: feature name to level name.
    pub fn describe(&self, schema: &Schema) -> (Vec<(String, String)>, (String, String)) {
        let layout = schema.layout();
        let assignment = self
            .assignment
            .iter()
            .map(|&(b, level)| {
                let block = &layout.categorical[b];
                (
                    schema.feature_name(block.feature).to_string(),
                    schema.levels(block)[level].clone(),
                )
            })
            .collect();
        let levels = schema.levels(layout.sensitive_block());
        let (a, b) = self.sensitive_pair;
        (assignment, (levels[a].clone(), levels[b].clone()))
    }
}

/// Cartesian product of non-sensitive categorical assignments times all
/// unordered pairs of distinct sensitive levels, in schema and level order.
pub fn enumerate_partitions(prop: &FairnessProperty, schema: &Schema, cap: usize) -> Result<Vec<Partition>> {
    prop.validate(schema)?;
    let layout = schema.layout();
    let k = layout.sensitive_block().levels;
    let pairs = k * (k - 1) / 2;
    let blocks: Vec<(usize, usize)> = layout
        .categorical
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != layout.sensitive)
        .map(|(i, b)| (i, b.levels))
        .collect();
    let count = blocks.iter().try_fold(pairs, |acc, &(_, n)| acc.checked_mul(n));
    match count {
        Some(c) if c <= cap => {}
        Some(c) => return Err(Error::Resource(format!("{c} partitions exceed the cap of {cap}"))),
        None => return Err(Error::Resource(format!("partition count overflows (cap {cap})"))),
    }

    let mut out = Vec::new();
    let mut levels = vec![0usize; blocks.len()];
    loop {
        for a in 0..k {
            for b in a + 1..k {
                out.push(Partition {
                    assignment: blocks.iter().zip(&levels).map(|(&(i, _), &l)| (i, l)).collect(),
                    sensitive_pair: (a, b),
                    numerical_box: prop.domain.clone(),
                });
            }
        }
        // odometer, last block fastest
        let mut pos = blocks.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            levels[pos] += 1;
            if levels[pos] < blocks[pos].1 {
                break;
            }
            levels[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexamplePair {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub logit_x: f64,
    pub logit_x_prime: f64,
    pub classes: (u8, u8),
}

impl CounterexamplePair {
    pub fn from_points(net: &Network, x: Vec<f64>, x_prime: Vec<f64>) -> Self {
        let logit_x = net.logit(&x);
        let logit_x_prime = net.logit(&x_prime);
        CounterexamplePair {
            classes: (class_of(logit_x), class_of(logit_x_prime)),
            x,
            x_prime,
            logit_x,
            logit_x_prime,
        }
    }
}

/// Exact re-check of a claimed violation: both points in the domain,
/// similar, and classified differently by a fresh forward pass that agrees
/// with the recorded classes.
pub fn validate_counterexample(
    net: &Network,
    pair: &CounterexamplePair,
    prop: &FairnessProperty,
    schema: &Schema,
) -> bool {
    if pair.x.len() != net.input_dim() || pair.x_prime.len() != net.input_dim() {
        return false;
    }
    if !prop.contains(&pair.x, schema) || !prop.contains(&pair.x_prime, schema) {
        return false;
    }
    if !matches!(is_similar(&pair.x, &pair.x_prime, prop, schema), Ok(true)) {
        return false;
    }
    let (Ok(hx), Ok(hxp)) = (net.predict(&pair.x), net.predict(&pair.x_prime)) else {
        return false;
    };
    hx != hxp && (hx, hxp) == pair.classes
}
