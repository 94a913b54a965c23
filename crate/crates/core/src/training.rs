//! Fairness-regularized training.
//!
//! The natural loss is batch-mean BCE. The local regularizer mixes each
//! sample's natural loss with the bound on its worst-case loss over the
//! similar points, `(1 - lambda) * bce + lambda * bound`, averaged over the
//! batch. The global regularizer adds `lambda` times one bound on the
//! probability gap over the whole domain per batch, with the natural loss
//! weighted by `1 - lambda`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::bounds::{global_fairness_generic, local_fairness_generic, BoundMode, GapScope};
use crate::data::{accuracy, Dataset, Schema, DEFAULT_TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::nn::{bce_generic, bce_gradients, logit_generic, AdamState, Gradients, Network};
use crate::property::FairnessProperty;
use crate::verifier::{certify, SearchLimits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    Local,
    Global,
}

fn default_learning_rate() -> f64 {
    AdamState::DEFAULT_LEARNING_RATE
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    256
}
fn default_architecture() -> Vec<usize> {
    vec![16, 16]
}
fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub lambda_f: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bound_mode: BoundMode,
    /// Hidden layer widths; input and output widths come from the schema.
    #[serde(default = "default_architecture")]
    pub architecture: Vec<usize>,
    /// Share of the data used for training when the CLI splits one file.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub certify_each_epoch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_f) {
            return Err(Error::config(format!("lambda_f = {} is outside [0, 1]", self.lambda_f)));
        }
        if self.lambda_f > 0.0 && self.regularizer == Regularizer::None {
            return Err(Error::config("lambda_f > 0 needs a regularizer (local or global)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if self.architecture.contains(&0) {
            return Err(Error::config("hidden layers need at least one neuron"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: TrainingConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub natural_loss: f64,
    pub fairness_loss: f64,
    pub test_acc: Option<f64>,
    pub certified_fairness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,natural_loss,fairness_loss,test_acc,certified_fairness\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.natural_loss,
                r.fairness_loss,
                opt(r.test_acc),
                opt(r.certified_fairness)
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Loss components for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLoss {
    pub natural: f64,
    pub fairness: f64,
    pub total: f64,
}

/// Local term for one sample on any scalar type. Samples outside the
/// property domain have no neighbourhood to bound and fall back to their
/// natural loss.
fn local_sample<S: crate::autodiff::Scalar>(
    layers: &[crate::nn::Layer<S>],
    x: &[f64],
    y: u8,
    prop: &FairnessProperty,
    schema: &Schema,
    mode: BoundMode,
) -> Result<S> {
    if prop.contains(x, schema) {
        local_fairness_generic(layers, x, y, prop, schema, mode)
    } else {
        Ok(bce_generic(logit_generic(layers, x).sigmoid(), y))
    }
}

fn check_batch(net: &Network, batch: &[(&[f64], u8)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if batch.iter().any(|(x, _)| x.len() != net.input_dim()) {
        return Err(Error::input("batch row width does not match the model"));
    }
    Ok(())
}

/// The differentiable surrogate added to the loss: the mean local bound
/// over the batch, or the whole-domain gap bound.
pub fn fairness_loss_term(
    net: &Network,
    batch: &[(&[f64], u8)],
    prop: &FairnessProperty,
    schema: &Schema,
    cfg: &TrainingConfig,
) -> Result<f64> {
    check_batch(net, batch)?;
    match cfg.regularizer {
        Regularizer::None => Err(Error::config("no regularizer configured")),
        Regularizer::Local => {
            let terms = batch
                .par_iter()
                .map(|&(x, y)| local_sample(net.layers(), x, y, prop, schema, cfg.bound_mode))
                .collect::<Result<Vec<f64>>>()?;
            Ok(terms.iter().sum::<f64>() / batch.len() as f64)
        }
        Regularizer::Global => {
            global_fairness_generic(net.layers(), prop, schema, GapScope::WholeDomain, cfg.bound_mode)
        }
    }
}

/// Value of the composite batch loss.
pub fn composite_loss(
    net: &Network,
    batch: &[(&[f64], u8)],
    prop: &FairnessProperty,
    schema: &Schema,
    cfg: &TrainingConfig,
) -> Result<CompositeLoss> {
    check_batch(net, batch)?;
    let natural = batch
        .iter()
        .map(|&(x, y)| crate::nn::bce_loss(net.forward(x).map(|o| o.prob).unwrap_or(f64::NAN), y))
        .sum::<f64>()
        / batch.len() as f64;
    if cfg.regularizer == Regularizer::None {
        return Ok(CompositeLoss {
            natural,
            fairness: 0.0,
            total: natural,
        });
    }
    let fairness = fairness_loss_term(net, batch, prop, schema, cfg)?;
    let l = cfg.lambda_f;
    Ok(CompositeLoss {
        natural,
        fairness,
        total: (1.0 - l) * natural + l * fairness,
    })
}

fn tape_gradient<F>(net: &Network, f: F) -> Result<(f64, Gradients)>
where
    F: for<'t> FnOnce(&[crate::nn::Layer<crate::autodiff::Var<'t>>]) -> Result<crate::autodiff::Var<'t>>,
{
    use crate::autodiff::Scalar;
    let tape = Tape::new();
    let lifted = net.lift(&tape);
    let out = f(&lifted)?;
    let adj = tape.gradient(out);
    Ok((out.value(), Network::collect_gradient(&lifted, &adj)))
}

/// Composite batch loss and its gradient with respect to every parameter.
pub fn composite_gradients(
    net: &Network,
    batch: &[(&[f64], u8)],
    prop: &FairnessProperty,
    schema: &Schema,
    cfg: &TrainingConfig,
) -> Result<(CompositeLoss, Gradients)> {
    check_batch(net, batch)?;
    let (natural, mut grads) = bce_gradients(net, batch)?;
    if cfg.regularizer == Regularizer::None {
        return Ok((
            CompositeLoss {
                natural,
                fairness: 0.0,
                total: natural,
            },
            grads,
        ));
    }
    let l = cfg.lambda_f;
    if l == 0.0 {
        let fairness = fairness_loss_term(net, batch, prop, schema, cfg)?;
        return Ok((
            CompositeLoss {
                natural,
                fairness,
                total: natural,
            },
            grads,
        ));
    }
    let (fairness, fair_grads) = match cfg.regularizer {
        Regularizer::Local => {
            let parts = batch
                .par_iter()
                .map(|&(x, y)| tape_gradient(net, |layers| local_sample(layers, x, y, prop, schema, cfg.bound_mode)))
                .collect::<Result<Vec<_>>>()?;
            let mut g = Gradients::zeros_like(net);
            let mut v = 0.0;
            for (value, part) in &parts {
                v += value;
                g.add_scaled(part, 1.0);
            }
            let n = batch.len() as f64;
            g.scale(1.0 / n);
            (v / n, g)
        }
        Regularizer::Global => tape_gradient(net, |layers| {
            global_fairness_generic(layers, prop, schema, GapScope::WholeDomain, cfg.bound_mode)
        })?,
        Regularizer::None => unreachable!(),
    };
    grads.scale(1.0 - l);
    grads.add_scaled(&fair_grads, l);
    Ok((
        CompositeLoss {
            natural,
            fairness,
            total: (1.0 - l) * natural + l * fairness,
        },
        grads,
    ))
}

/// Trains a fresh network. Deterministic for a fixed configuration.
pub fn train(
    train_ds: &Dataset,
    test_ds: &Dataset,
    prop: &FairnessProperty,
    schema: &Schema,
    cfg: &TrainingConfig,
) -> Result<(Network, TrainingHistory)> {
    cfg.validate()?;
    prop.validate(schema)?;
    if train_ds.is_empty() {
        return Err(Error::input("empty training set"));
    }
    let mut dims = vec![schema.width()];
    dims.extend(&cfg.architecture);
    dims.push(1);
    let mut net = Network::init(&dims, cfg.seed)?;
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = TrainingHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut natural, mut fairness) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], u8)> = chunk
                .iter()
                .map(|&i| (train_ds.rows[i].as_slice(), train_ds.labels[i]))
                .collect();
            let (loss, grads) = composite_gradients(&net, &batch, prop, schema, cfg)?;
            adam.update(&mut net, &grads)?;
            natural += loss.natural * batch.len() as f64;
            fairness += loss.fairness * batch.len() as f64;
        }
        let n = train_ds.len() as f64;
        let test_acc = if test_ds.is_empty() {
            None
        } else {
            Some(accuracy(&net, test_ds)?)
        };
        let certified_fairness = if cfg.certify_each_epoch {
            Some(certify(&net, prop, schema, SearchLimits::default(), 1, None)?.certified_global_fairness_pct)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            natural_loss: natural / n,
            fairness_loss: fairness / n,
            test_acc,
            certified_fairness,
        });
    }
    Ok((net, history))
}
