//! Branch-and-bound decision procedure for fairness counterexamples.
//!
//! A query asks for a point `z` of a region such that each network copy's
//! logit reaches its target: `>= 0` for one class, `<= -COUNTEREXAMPLE_MARGIN`
//! for the other. Each node bounds every copy symbolically under its ReLU
//! phase decisions, prunes on the logit bounds, then solves the triangle
//! relaxation LP. Feasible LP points are turned into concrete pairs and
//! re-checked exactly; otherwise the widest unstable neuron is split.
//! Once every neuron is decided the LP is exact.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{copy_bounds, empty_splits, BoundMode, InputBox, InputMap, LinearBand, Phase, Region, Splits};
use crate::data::{accuracy, positivity_rate, Dataset, Schema};
use crate::error::{Error, Result};
use crate::lp::{solve, LinearProgram, LpOutcome, Relation, Sense};
use crate::nn::{class_of, Network};
use crate::property::{
    enumerate_partitions, validate_counterexample, CounterexamplePair, FairnessProperty, Partition,
    DEFAULT_PARTITION_CAP,
};

/// Logit margin demanded from the negative side of a counterexample.
pub const COUNTEREXAMPLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchLimits {
    pub max_nodes: usize,
    pub timeout_secs: Option<f64>,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_nodes: 100_000,
            timeout_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Fair,
    Unfair { pair: CounterexamplePair },
    ResourceLimit { nodes_explored: usize },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Fair => "fair",
            Verdict::Unfair { .. } => "unfair",
            Verdict::ResourceLimit { .. } => "resource_limit",
        }
    }

    pub fn is_fair(&self) -> bool {
        matches!(self, Verdict::Fair)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Nodes whose bounds were computed.
    pub nodes: usize,
    /// Nodes split into two children.
    pub expanded: usize,
    pub lp_solves: usize,
}

impl SearchStats {
    fn absorb(&mut self, other: SearchStats) {
        self.nodes += other.nodes;
        self.expanded += other.expanded;
        self.lp_solves += other.lp_solves;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: Verdict,
    pub stats: SearchStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Positive,
    Negative,
}

impl Target {
    fn for_class(class: u8) -> Self {
        if class == 1 {
            Target::Positive
        } else {
            Target::Negative
        }
    }
}

struct Query<'a> {
    net: &'a Network,
    zbox: InputBox,
    copies: Vec<(InputMap, Target)>,
    constraints: Vec<LinearBand>,
    candidate: Box<dyn Fn(&[f64]) -> Option<CounterexamplePair> + 'a>,
}

/// Affine expression over LP variables.
#[derive(Debug, Clone, Default)]
struct Lin {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Lin {
    fn var(j: usize) -> Self {
        Lin {
            terms: vec![(j, 1.0)],
            constant: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &Lin, c: f64) {
        self.constant += c * other.constant;
        self.terms.extend(other.terms.iter().map(|&(j, v)| (j, c * v)));
    }
}

enum NodeResult {
    Pruned,
    Found(CounterexamplePair),
    /// LP feasible at a leaf but no exact pair recovered.
    Inconclusive,
    Branch(usize, usize, usize),
}

struct Search<'q, 'a> {
    query: &'q Query<'a>,
    limits: SearchLimits,
    started: Instant,
    stats: SearchStats,
}

impl Search<'_, '_> {
    fn out_of_budget(&self) -> bool {
        self.stats.nodes >= self.limits.max_nodes
            || self
                .limits
                .timeout_secs
                .is_some_and(|t| self.started.elapsed() > Duration::from_secs_f64(t))
    }

    fn run(&mut self) -> Verdict {
        let root: Vec<Splits> = vec![empty_splits(self.query.net); self.query.copies.len()];
        let mut stack = vec![root];
        let mut inconclusive = false;
        while let Some(splits) = stack.pop() {
            if self.out_of_budget() {
                return Verdict::ResourceLimit {
                    nodes_explored: self.stats.nodes,
                };
            }
            self.stats.nodes += 1;
            match self.evaluate(&splits) {
                Ok(NodeResult::Pruned) => {}
                Ok(NodeResult::Found(pair)) => return Verdict::Unfair { pair },
                Ok(NodeResult::Inconclusive) => inconclusive = true,
                Ok(NodeResult::Branch(c, k, j)) => {
                    self.stats.expanded += 1;
                    for phase in [Phase::Inactive, Phase::Active] {
                        let mut child = splits.clone();
                        child[c][k][j] = Some(phase);
                        stack.push(child);
                    }
                }
                Err(_) => {
                    return Verdict::ResourceLimit {
                        nodes_explored: self.stats.nodes,
                    }
                }
            }
        }
        if inconclusive {
            Verdict::ResourceLimit {
                nodes_explored: self.stats.nodes,
            }
        } else {
            Verdict::Fair
        }
    }

    fn evaluate(&mut self, splits: &[Splits]) -> Result<NodeResult> {
        let q = self.query;
        let layers = q.net.layers();
        let mut all = Vec::with_capacity(q.copies.len());
        for ((map, target), s) in q.copies.iter().zip(splits) {
            let b = copy_bounds(layers, map, &q.zbox, Some(s), BoundMode::Symbolic, false)?;
            if b.infeasible {
                return Ok(NodeResult::Pruned);
            }
            let (lo, hi) = b.logit();
            let cannot = match target {
                Target::Positive => hi < 0.0,
                Target::Negative => lo > -COUNTEREXAMPLE_MARGIN,
            };
            if cannot {
                return Ok(NodeResult::Pruned);
            }
            all.push(b);
        }

        // triangle relaxation LP over z and every hidden neuron of every copy
        let mut lp = LinearProgram::new(q.zbox.dim());
        lp.bounds = q.zbox.lo.iter().copied().zip(q.zbox.hi.iter().copied()).collect();
        for (terms, lo, hi) in &q.constraints {
            lp.add_sparse(terms, Relation::Ge, *lo);
            lp.add_sparse(terms, Relation::Le, *hi);
        }
        // worst signed logit margin over the copies; maximized so candidates sit off the boundary
        let margin = lp.add_var(0.0, f64::INFINITY);
        let mut unstable: Option<(f64, usize, usize, usize)> = None;
        let hidden = layers.len() - 1;
        for (c, (((map, target), b), s)) in q.copies.iter().zip(&all).zip(splits).enumerate() {
            let mut post: Vec<Lin> = map
                .rows
                .iter()
                .map(|r| Lin {
                    terms: r.terms.clone(),
                    constant: r.constant,
                })
                .collect();
            for (k, layer) in layers.iter().enumerate() {
                let mut pre_exprs = Vec::with_capacity(layer.rows);
                for r in 0..layer.rows {
                    let mut e = Lin {
                        terms: vec![],
                        constant: layer.bias[r],
                    };
                    for (col, p) in post.iter().enumerate() {
                        let w = layer.w(r, col);
                        if w != 0.0 {
                            e.add_scaled(p, w);
                        }
                    }
                    pre_exprs.push(e);
                }
                if k == hidden {
                    let e = &pre_exprs[0];
                    let (rel, rhs, sign) = match target {
                        Target::Positive => (Relation::Ge, 0.0, 1.0),
                        Target::Negative => (Relation::Le, -COUNTEREXAMPLE_MARGIN, -1.0),
                    };
                    lp.add_sparse(&e.terms, rel, rhs - e.constant);
                    let mut signed: Vec<(usize, f64)> = e.terms.iter().map(|&(j, v)| (j, sign * v)).collect();
                    signed.push((margin, -1.0));
                    lp.add_sparse(&signed, Relation::Ge, -sign * e.constant);
                    break;
                }
                let mut next = Vec::with_capacity(layer.rows);
                for (r, e) in pre_exprs.iter().enumerate() {
                    let (l, u) = b.interval(k, r);
                    if u <= 0.0 {
                        // a split only tightened the bound; the LP must enforce it
                        if s[k][r] == Some(Phase::Inactive) {
                            lp.add_sparse(&e.terms, Relation::Le, -e.constant);
                        }
                        next.push(Lin::default());
                        continue;
                    }
                    let p = lp.add_var(l, u);
                    let mut eq = e.terms.clone();
                    eq.push((p, -1.0));
                    lp.add_sparse(&eq, Relation::Eq, -e.constant);
                    if l >= 0.0 {
                        next.push(Lin::var(p));
                        continue;
                    }
                    let y = lp.add_var(0.0, u);
                    let s = u / (u - l);
                    lp.add_sparse(&[(y, 1.0), (p, -1.0)], Relation::Ge, 0.0);
                    lp.add_sparse(&[(y, 1.0), (p, -s)], Relation::Le, -s * l);
                    next.push(Lin::var(y));
                    let width = u - l;
                    let better = match unstable {
                        None => true,
                        Some((w, uk, uj, uc)) => width > w || (width == w && (k, r, c) < (uk, uj, uc)),
                    };
                    if better {
                        unstable = Some((width, k, r, c));
                    }
                }
                post = next;
            }
        }
        let mut obj = vec![0.0; lp.num_vars];
        obj[margin] = 1.0;
        lp.set_objective(obj, Sense::Maximize);
        self.stats.lp_solves += 1;
        match solve(&lp)? {
            LpOutcome::Infeasible => return Ok(NodeResult::Pruned),
            LpOutcome::Unbounded => return Err(Error::Solver("bounded relaxation reported unbounded".into())),
            LpOutcome::Feasible { point, .. } => {
                if let Some(pair) = (q.candidate)(&point[..q.zbox.dim()]) {
                    return Ok(NodeResult::Found(pair));
                }
            }
        }
        Ok(match unstable {
            Some((_, k, j, c)) => NodeResult::Branch(c, k, j),
            None => NodeResult::Inconclusive,
        })
    }
}

fn run_query(query: &Query<'_>, limits: SearchLimits, stats: &mut SearchStats) -> Verdict {
    let mut search = Search {
        query,
        limits: SearchLimits {
            max_nodes: limits.max_nodes.saturating_sub(stats.nodes),
            ..limits
        },
        started: Instant::now(),
        stats: SearchStats::default(),
    };
    let verdict = search.run();
    stats.absorb(search.stats);
    if let Verdict::ResourceLimit { .. } = verdict {
        return Verdict::ResourceLimit {
            nodes_explored: stats.nodes,
        };
    }
    verdict
}

fn accept(
    net: &Network,
    pair: CounterexamplePair,
    prop: &FairnessProperty,
    schema: &Schema,
) -> Option<CounterexamplePair> {
    validate_counterexample(net, &pair, prop, schema).then_some(pair)
}

/// Decides whether a partition contains a pair of similar inputs with
/// different classes. Both class orientations of the sensitive pair are
/// searched.
pub fn verify_partition(
    net: &Network,
    partition: &Partition,
    prop: &FairnessProperty,
    schema: &Schema,
    limits: SearchLimits,
) -> Result<Outcome> {
    prop.validate(schema)?;
    if net.input_dim() != schema.width() {
        return Err(Error::input(format!(
            "model expects {} inputs, schema encodes {}",
            net.input_dim(),
            schema.width()
        )));
    }
    let (a, b) = partition.sensitive_pair;
    let m = schema.numeric_count();
    let region = Region::partition(partition, prop, schema, (a, b));
    let candidate = move |z: &[f64]| -> Option<CounterexamplePair> {
        let mut xa = Vec::with_capacity(m);
        let mut xb = Vec::with_capacity(m);
        for i in 0..m {
            let (l, u) = partition.numerical_box[i];
            let x = z[i].clamp(l, u);
            let e = if prop.delta[i] > 0.0 {
                z[m + i].clamp(-prop.delta[i], prop.delta[i])
            } else {
                0.0
            };
            xa.push(x);
            xb.push((x + e).clamp(l, u));
        }
        let pair =
            CounterexamplePair::from_points(net, partition.embed(schema, &xa, a), partition.embed(schema, &xb, b));
        accept(net, pair, prop, schema)
    };
    let mut stats = SearchStats::default();
    for targets in [
        (Target::Positive, Target::Negative),
        (Target::Negative, Target::Positive),
    ] {
        let query = Query {
            net,
            zbox: region.zbox.clone(),
            copies: vec![
                (region.copies[0].clone(), targets.0),
                (region.copies[1].clone(), targets.1),
            ],
            constraints: region.constraints.clone(),
            candidate: Box::new(candidate),
        };
        let verdict = run_query(&query, limits, &mut stats);
        if !verdict.is_fair() {
            return Ok(Outcome { verdict, stats });
        }
    }
    Ok(Outcome {
        verdict: Verdict::Fair,
        stats,
    })
}

/// Decides whether some point similar to `x` is classified differently
/// from `x`.
pub fn verify_local(
    net: &Network,
    x: &[f64],
    prop: &FairnessProperty,
    schema: &Schema,
    limits: SearchLimits,
) -> Result<Outcome> {
    prop.validate(schema)?;
    if x.len() != net.input_dim() {
        return Err(Error::input(format!(
            "point has {} entries, model expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let class = class_of(net.logit(x));
    let target = Target::for_class(1 - class);
    let levels = schema.layout().sensitive_block().levels;
    let mut stats = SearchStats::default();
    let mut worst = Verdict::Fair;
    for level in 0..levels {
        let region = Region::neighborhood(x, prop, schema, Some(level))?;
        let zbox = region.zbox.clone();
        let candidate = move |z: &[f64]| -> Option<CounterexamplePair> {
            let xp: Vec<f64> = z
                .iter()
                .zip(zbox.lo.iter().zip(&zbox.hi))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect();
            accept(net, CounterexamplePair::from_points(net, x.to_vec(), xp), prop, schema)
        };
        let query = Query {
            net,
            zbox: region.zbox.clone(),
            copies: vec![(region.copies[0].clone(), target)],
            constraints: vec![],
            candidate: Box::new(candidate),
        };
        match run_query(&query, limits, &mut stats) {
            Verdict::Fair => {}
            v @ Verdict::Unfair { .. } => return Ok(Outcome { verdict: v, stats }),
            v @ Verdict::ResourceLimit { .. } => worst = v,
        }
    }
    if let Verdict::ResourceLimit { .. } = worst {
        worst = Verdict::ResourceLimit {
            nodes_explored: stats.nodes,
        };
    }
    Ok(Outcome { verdict: worst, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub assignment: BTreeMap<String, String>,
    pub sensitive_pair: (String, String),
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexamplePair>,
    pub nodes: usize,
    pub expanded: usize,
    pub lp_solves: usize,
    pub millis: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub certified_global_fairness_pct: f64,
    pub accuracy_pct: Option<f64>,
    pub positivity_rate_pct: Option<f64>,
    pub total_partitions: usize,
    pub fair: usize,
    pub unfair: usize,
    pub resource_limit: usize,
    pub partitions: Vec<PartitionReport>,
    pub property: FairnessProperty,
    pub limits: SearchLimits,
    pub wall_millis: u64,
}

impl CertificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn counterexamples(&self) -> impl Iterator<Item = &CounterexamplePair> {
        self.partitions.iter().filter_map(|p| p.counterexample.as_ref())
    }

    pub fn expanded_nodes(&self) -> usize {
        self.partitions.iter().map(|p| p.expanded).sum()
    }
}

/// Verifies every partition of the property. `jobs` bounds the number of
/// partitions checked concurrently; verdicts do not depend on it.
pub fn certify(
    net: &Network,
    prop: &FairnessProperty,
    schema: &Schema,
    limits: SearchLimits,
    jobs: usize,
    data: Option<&Dataset>,
) -> Result<CertificationReport> {
    let started = Instant::now();
    let partitions = enumerate_partitions(prop, schema, DEFAULT_PARTITION_CAP)?;
    let check = |p: &Partition| -> Result<PartitionReport> {
        let t = Instant::now();
        let outcome = verify_partition(net, p, prop, schema, limits)?;
        let (assignment, sensitive_pair) = p.describe(schema);
        let counterexample = match outcome.verdict {
            Verdict::Unfair { ref pair } => Some(pair.clone()),
            _ => None,
        };
        Ok(PartitionReport {
            assignment: assignment.into_iter().collect(),
            sensitive_pair,
            verdict: outcome.verdict.label().to_string(),
            counterexample,
            nodes: outcome.stats.nodes,
            expanded: outcome.stats.expanded,
            lp_solves: outcome.stats.lp_solves,
            millis: t.elapsed().as_millis() as u64,
        })
    };
    let reports: Vec<PartitionReport> = if jobs <= 1 {
        partitions.iter().map(check).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?;
        pool.install(|| partitions.par_iter().map(check).collect::<Result<_>>())?
    };
    let count = |label: &str| reports.iter().filter(|r| r.verdict == label).count();
    let (fair, unfair, resource_limit) = (count("fair"), count("unfair"), count("resource_limit"));
    let (accuracy_pct, positivity_rate_pct) = match data {
        Some(ds) => (Some(accuracy(net, ds)?), Some(positivity_rate(net, ds)?)),
        None => (None, None),
    };
    Ok(CertificationReport {
        certified_global_fairness_pct: 100.0 * fair as f64 / reports.len() as f64,
        accuracy_pct,
        positivity_rate_pct,
        total_partitions: reports.len(),
        fair,
        unfair,
        resource_limit,
        partitions: reports,
        property: prop.clone(),
        limits,
        wall_millis: started.elapsed().as_millis() as u64,
    })
}
