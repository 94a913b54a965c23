#![allow(dead_code)]

use certifair::data::{Feature, FeatureKind, LabelSpec, Schema};
use certifair::nn::{Layer, Network};
use rand::Rng;

pub fn num(name: &str) -> Feature {
    Feature {
        name: name.into(),
        kind: FeatureKind::Numerical {
            raw_min: 0.0,
            raw_max: 1.0,
        },
    }
}

pub fn cat(name: &str, levels: &[&str]) -> Feature {
    Feature {
        name: name.into(),
        kind: FeatureKind::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
        },
    }
}

/// `n_num` numerical features followed by a binary sensitive attribute.
pub fn schema_with(n_num: usize) -> Schema {
    let mut features: Vec<Feature> = (0..n_num).map(|i| num(&format!("x{i}"))).collect();
    features.push(cat("s", &["p", "q"]));
    Schema::new(
        features,
        "s".into(),
        LabelSpec {
            name: "y".into(),
            positive: "1".into(),
        },
    )
    .unwrap()
}

/// Uniform weights in `[-1, 1]` and biases in `[-0.5, 0.5]`.
pub fn random_net(rng: &mut impl Rng, dims: &[usize]) -> Network {
    let layers = dims
        .windows(2)
        .map(|w| {
            let rows = (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Layer::from_rows(rows, bias).unwrap()
        })
        .collect();
    Network::new(dims[0], layers).unwrap()
}

/// Pre-activations of every layer, the last entry being the logit.
pub fn pre_activations(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut h = x.to_vec();
    let mut out = Vec::new();
    let last = net.layers().len() - 1;
    for (i, l) in net.layers().iter().enumerate() {
        let z: Vec<f64> = (0..l.rows)
            .map(|r| l.bias[r] + l.row(r).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        h = if i == last {
            z.clone()
        } else {
            z.iter().map(|v| v.max(0.0)).collect()
        };
        out.push(z);
    }
    out
}
