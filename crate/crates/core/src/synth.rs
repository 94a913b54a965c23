//! Seeded synthetic datasets with two numerical features in `[0, 1]` and a
//! binary sensitive attribute.
//!
//! * `biased`: the label is Bernoulli with a logistic rate in `x1` shifted by
//!   group. Group `a` is mostly positive; group `b` sits slightly below 0.5
//!   for `x1 < 0.5`, so an accurate classifier treats the groups differently
//!   while a fair one pays a few points of accuracy.
//! * `separated`: an unbiased label `x1 + x2 > 1` with no samples close to
//!   the boundary, so every sample sits far from any decision flip while the
//!   boundary itself still crosses the domain.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature, FeatureKind, LabelSpec, Schema};
use crate::error::{Error, Result};
use crate::property::{FairnessProperty, PropertyClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Biased,
    Separated,
}

pub const GROUPS: [&str; 2] = ["a", "b"];

/// Logit of the biased label: `SLOPE * (x1 - 0.5) + GROUP_SHIFT[g] + OFFSET`.
pub const BIASED_SLOPE: f64 = 0.8;
pub const BIASED_GROUP_SHIFT: [f64; 2] = [0.75, -0.75];
pub const BIASED_OFFSET: f64 = 0.75;
/// Similarity radius of the biased property.
pub const BIASED_DELTA: f64 = 0.05;
/// Samples of the separated dataset keep `|x1 + x2 - 1| >= SEPARATION_GAP`.
pub const SEPARATION_GAP: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub x1: f64,
    pub x2: f64,
    pub group: usize,
    pub label: u8,
}

pub fn schema() -> Schema {
    let num = |name: &str| Feature {
        name: name.into(),
        kind: FeatureKind::Numerical {
            raw_min: 0.0,
            raw_max: 1.0,
        },
    };
    Schema::new(
        vec![
            num("x1"),
            num("x2"),
            Feature {
                name: "group".into(),
                kind: FeatureKind::Categorical {
                    levels: GROUPS.iter().map(|s| s.to_string()).collect(),
                },
            },
        ],
        "group".into(),
        LabelSpec {
            name: "y".into(),
            positive: "1".into(),
        },
    )
    .expect("synthetic schema is valid")
}

/// The property each dataset is meant to be certified against.
pub fn property(kind: SyntheticKind) -> FairnessProperty {
    let s = schema();
    match kind {
        SyntheticKind::Biased => FairnessProperty::uniform(&s, PropertyClass::P2, BIASED_DELTA),
        SyntheticKind::Separated => FairnessProperty::uniform(&s, PropertyClass::P2, 0.02),
    }
}

pub fn biased_rate(x1: f64, group: usize) -> f64 {
    let z = BIASED_SLOPE * (x1 - 0.5) + BIASED_GROUP_SHIFT[group] + BIASED_OFFSET;
    1.0 / (1.0 + (-z).exp())
}

pub fn generate(kind: SyntheticKind, rows: usize, seed: u64) -> Vec<RawRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows);
    while out.len() < rows {
        let x1: f64 = rng.gen();
        let x2: f64 = rng.gen();
        let group = if rng.gen_bool(0.5) { 0 } else { 1 };
        match kind {
            SyntheticKind::Biased => {
                let label = u8::from(rng.gen_bool(biased_rate(x1, group)));
                out.push(RawRow { x1, x2, group, label });
            }
            SyntheticKind::Separated => {
                let margin = x1 + x2 - 1.0;
                if margin.abs() >= SEPARATION_GAP {
                    out.push(RawRow {
                        x1,
                        x2,
                        group,
                        label: u8::from(margin > 0.0),
                    });
                }
            }
        }
    }
    out
}

/// Encoded dataset, identical to writing the CSV and loading it back.
pub fn dataset(rows: &[RawRow]) -> Dataset {
    let s = schema();
    let encoded = rows
        .iter()
        .map(|r| {
            let mut x = vec![r.x1, r.x2, 0.0, 0.0];
            x[2 + r.group] = 1.0;
            x
        })
        .collect();
    Dataset::new(encoded, rows.iter().map(|r| r.label).collect(), &s).expect("synthetic rows match schema")
}

pub fn write_csv(path: &Path, rows: &[RawRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x1", "x2", "group", "y"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.x1.to_string(),
            r.x2.to_string(),
            GROUPS[r.group].to_string(),
            r.label.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_and_preprocess;

    #[test]
    fn generation_is_seeded() {
        let a = generate(SyntheticKind::Biased, 50, 3);
        assert_eq!(a, generate(SyntheticKind::Biased, 50, 3));
        assert_ne!(a, generate(SyntheticKind::Biased, 50, 4));
    }

    #[test]
    fn separated_rows_keep_the_gap() {
        for r in generate(SyntheticKind::Separated, 500, 1) {
            assert!((r.x1 + r.x2 - 1.0).abs() >= SEPARATION_GAP);
        }
    }

    #[test]
    fn biased_rates_depend_on_group() {
        let rows = generate(SyntheticKind::Biased, 20000, 2);
        for (g, expect) in [(0, 0.5 * (biased_rate(0.0, 0) + biased_rate(1.0, 0))), (1, 0.5)] {
            let members: Vec<_> = rows.iter().filter(|r| r.group == g).collect();
            let rate = members.iter().filter(|r| r.label == 1).count() as f64 / members.len() as f64;
            assert!((rate - expect).abs() < 0.03, "group {g}: {rate}");
        }
        assert!(biased_rate(0.49, 1) < 0.5 && biased_rate(0.0, 0) > 0.5);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rows = generate(SyntheticKind::Biased, 30, 0);
        write_csv(&path, &rows).unwrap();
        let loaded = load_and_preprocess(&path, &schema()).unwrap();
        assert_eq!(loaded, dataset(&rows));
        for kind in [SyntheticKind::Biased, SyntheticKind::Separated] {
            property(kind).validate(&schema()).unwrap();
        }
    }
}
