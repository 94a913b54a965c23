//! Interval and symbolic (back-substitution) bound propagation.
//!
//! Every computation runs over a box of free coordinates `z`. Each copy of
//! the network reads its input through an affine [`InputMap`] of `z`, which
//! lets one box describe a single network over a box, a pair `(x, x + e)`
//! sharing `x`, or two independent copies over `D x D`. Copies never share
//! neurons, so the product network stays a logical view; only objectives
//! that mix the copies' logits couple them, and they meet again at `z`.
//!
//! Unstable ReLUs use the triangle relaxation: upper line
//! `u/(u-l) * (y - l)`, lower line `y` when `u >= -l` and `0` otherwise.
//! Symbolic bounds are intersected with interval bounds at every layer, so
//! they are never looser.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::data::Schema;
use crate::error::{Error, Result};
use crate::nn::{bce_generic, Layer, Network};
use crate::product::ProductNetwork;
use crate::property::{FairnessProperty, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    #[default]
    Interval,
    Symbolic,
}

/// Axis-aligned box over the free coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::input("box bounds differ in length"));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite()) || l > h)
        {
            return Err(Error::input("box needs finite bounds with lo <= hi"));
        }
        Ok(InputBox { lo, hi })
    }

    pub fn point(x: &[f64]) -> Self {
        InputBox {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| v >= l && v <= h)
    }
}

/// One base-network input coordinate as an affine function of `z`, with an
/// optional known range used to tighten interval bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
    pub clip: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    pub rows: Vec<AffineRow>,
}

impl InputMap {
    pub fn identity(n: usize) -> Self {
        Self::slice(n, 0)
    }

    /// `x_j = z_{offset + j}`.
    pub fn slice(n: usize, offset: usize) -> Self {
        InputMap {
            rows: (0..n)
                .map(|j| AffineRow {
                    constant: 0.0,
                    terms: vec![(offset + j, 1.0)],
                    clip: None,
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.terms.iter().fold(r.constant, |a, &(k, c)| a + c * z[k]))
            .collect()
    }

    fn intervals(&self, zbox: &InputBox) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .map(|r| {
                let (mut lo, mut hi) = (r.constant, r.constant);
                for &(k, c) in &r.terms {
                    if c >= 0.0 {
                        lo += c * zbox.lo[k];
                        hi += c * zbox.hi[k];
                    } else {
                        lo += c * zbox.hi[k];
                        hi += c * zbox.lo[k];
                    }
                }
                match r.clip {
                    Some((a, b)) => (lo.max(a), hi.min(b)),
                    None => (lo, hi),
                }
            })
            .collect()
    }
}

/// Branching decision for one hidden neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Active,
    Inactive,
}

/// Optional forced phase per hidden layer and neuron.
pub type Splits = Vec<Vec<Option<Phase>>>;

pub fn empty_splits(net: &Network) -> Splits {
    net.layers()[..net.layers().len() - 1]
        .iter()
        .map(|l| vec![None; l.rows])
        .collect()
}

/// Linear relaxation of one ReLU: `lower_slope * y <= relu(y) <=
/// upper_slope * y + upper_offset` on `[l, u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation<S> {
    pub upper_slope: S,
    pub upper_offset: S,
    pub lower_slope: S,
}

pub fn relu_relaxation<S: Scalar>(l: S, u: S) -> Relaxation<S> {
    let (lv, uv) = (l.value(), u.value());
    if uv <= 0.0 {
        Relaxation {
            upper_slope: S::zero(),
            upper_offset: S::zero(),
            lower_slope: S::zero(),
        }
    } else if lv >= 0.0 {
        Relaxation {
            upper_slope: S::constant(1.0),
            upper_offset: S::zero(),
            lower_slope: S::constant(1.0),
        }
    } else {
        let slope = u / (u - l);
        Relaxation {
            upper_slope: slope,
            upper_offset: -(slope * l),
            lower_slope: S::constant(if uv >= -lv { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm<S> {
    pub coef: Vec<S>,
    pub constant: S,
}

impl<S: Scalar> AffineForm<S> {
    pub fn eval(&self, z: &[f64]) -> S {
        self.coef
            .iter()
            .zip(z)
            .fold(self.constant, |a, (&c, &v)| a + c.scale(v))
    }

    pub fn lower_over(&self, zbox: &InputBox) -> S {
        concretize(&self.coef, self.constant, zbox, false)
    }

    pub fn upper_over(&self, zbox: &InputBox) -> S {
        concretize(&self.coef, self.constant, zbox, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronForms<S> {
    pub lower: AffineForm<S>,
    pub upper: AffineForm<S>,
}

/// Bounds of one network copy: pre-activation intervals for every layer
/// (the last layer is the logit), the relaxations used, and, for symbolic
/// propagation with `keep_forms`, the affine bounding functions over `z`.
#[derive(Debug, Clone)]
pub struct LinearBounds<S> {
    pub lower: Vec<Vec<S>>,
    pub upper: Vec<Vec<S>>,
    pub relax: Vec<Vec<Relaxation<S>>>,
    pub forms: Option<Vec<Vec<NeuronForms<S>>>>,
    /// A forced phase contradicts the bounds: the region is empty.
    pub infeasible: bool,
}

impl<S: Scalar> LinearBounds<S> {
    pub fn logit(&self) -> (S, S) {
        let last = self.lower.len() - 1;
        (self.lower[last][0], self.upper[last][0])
    }

    pub fn interval(&self, layer: usize, neuron: usize) -> (f64, f64) {
        (self.lower[layer][neuron].value(), self.upper[layer][neuron].value())
    }
}

fn concretize<S: Scalar>(coef: &[S], constant: S, zbox: &InputBox, upper: bool) -> S {
    coef.iter().enumerate().fold(constant, |acc, (k, &c)| {
        if c.is_const_zero() {
            return acc;
        }
        let pick_hi = (c.value() >= 0.0) == upper;
        acc + c.scale(if pick_hi { zbox.hi[k] } else { zbox.lo[k] })
    })
}

/// Applies a forced phase to `[l, u]`; `None` when the phase is impossible.
fn apply_phase<S: Scalar>(l: S, u: S, phase: Option<Phase>) -> Option<(S, S)> {
    match phase {
        None => Some((l, u)),
        Some(Phase::Active) => {
            if u.value() < 0.0 {
                None
            } else {
                Some((l.max(S::zero()), u))
            }
        }
        Some(Phase::Inactive) => {
            if l.value() > 0.0 {
                None
            } else {
                Some((l, u.min(S::zero())))
            }
        }
    }
}

/// Interval propagation of one affine layer from post-activation ranges.
fn affine_interval<S: Scalar>(layer: &Layer<S>, lo: &[S], hi: &[S]) -> (Vec<S>, Vec<S>) {
    let mut out_lo = Vec::with_capacity(layer.rows);
    let mut out_hi = Vec::with_capacity(layer.rows);
    for r in 0..layer.rows {
        let (mut a, mut b) = (layer.bias[r], layer.bias[r]);
        for c in 0..layer.cols {
            let w = layer.w(r, c);
            if w.value() >= 0.0 {
                a = a + w * lo[c];
                b = b + w * hi[c];
            } else {
                a = a + w * hi[c];
                b = b + w * lo[c];
            }
        }
        out_lo.push(a);
        out_hi.push(b);
    }
    (out_lo, out_hi)
}

/// Back-substitutes rows `lam` over the post-activations of layer `from`
/// (or over the network input when `from` is `None`) down to `z`.
#[allow(clippy::too_many_arguments)]
fn back_substitute<S: Scalar>(
    layers: &[Layer<S>],
    relax: &[Vec<Relaxation<S>>],
    map: &InputMap,
    dim_z: usize,
    mut lam: Vec<Vec<S>>,
    mut cst: Vec<S>,
    from: Option<usize>,
    upper: bool,
) -> Vec<AffineForm<S>> {
    let mut level = from;
    while let Some(i) = level {
        let rx = &relax[i];
        let layer = &layers[i];
        for (row, c) in lam.iter_mut().zip(cst.iter_mut()) {
            for (j, l) in row.iter_mut().enumerate() {
                if l.is_const_zero() {
                    continue;
                }
                if (l.value() >= 0.0) == upper {
                    *c = *c + *l * rx[j].upper_offset;
                    *l = *l * rx[j].upper_slope;
                } else {
                    *l = *l * rx[j].lower_slope;
                }
            }
        }
        let mut next = Vec::with_capacity(lam.len());
        for (row, c) in lam.iter().zip(cst.iter_mut()) {
            let mut out = vec![S::zero(); layer.cols];
            for (j, &l) in row.iter().enumerate() {
                if l.is_const_zero() {
                    continue;
                }
                *c = *c + l * layer.bias[j];
                for (o, &w) in out.iter_mut().zip(layer.row(j)) {
                    *o = *o + l * w;
                }
            }
            next.push(out);
        }
        lam = next;
        level = i.checked_sub(1);
    }
    lam.into_iter()
        .zip(cst)
        .map(|(row, mut c)| {
            let mut coef = vec![S::zero(); dim_z];
            for (j, &l) in row.iter().enumerate() {
                if l.is_const_zero() {
                    continue;
                }
                let r = &map.rows[j];
                c = c + l.scale(r.constant);
                for &(k, a) in &r.terms {
                    coef[k] = coef[k] + l.scale(a);
                }
            }
            AffineForm { coef, constant: c }
        })
        .collect()
}

fn check_dims<S>(layers: &[Layer<S>], map: &InputMap, zbox: &InputBox) -> Result<()> {
    if map.dim() != layers[0].cols {
        return Err(Error::input(format!(
            "input map produces {} coordinates, network expects {}",
            map.dim(),
            layers[0].cols
        )));
    }
    let max_ref = map.rows.iter().flat_map(|r| r.terms.iter().map(|t| t.0)).max();
    if max_ref.is_some_and(|k| k >= zbox.dim()) {
        return Err(Error::input("input map refers past the box dimension"));
    }
    Ok(())
}

/// Bounds for one copy of the network over `zbox` seen through `map`.
pub fn copy_bounds<S: Scalar>(
    layers: &[Layer<S>],
    map: &InputMap,
    zbox: &InputBox,
    splits: Option<&Splits>,
    mode: BoundMode,
    keep_forms: bool,
) -> Result<LinearBounds<S>> {
    check_dims(layers, map, zbox)?;
    let n = layers.len();
    let mut out = LinearBounds {
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
        relax: Vec::with_capacity(n - 1),
        forms: (mode == BoundMode::Symbolic && keep_forms).then(Vec::new),
        infeasible: false,
    };
    let (mut post_lo, mut post_hi): (Vec<S>, Vec<S>) = map
        .intervals(zbox)
        .into_iter()
        .map(|(a, b)| (S::constant(a), S::constant(b)))
        .unzip();

    for k in 0..n {
        let layer = &layers[k];
        let (mut lo, mut hi) = affine_interval(layer, &post_lo, &post_hi);
        if mode == BoundMode::Symbolic {
            let lam: Vec<Vec<S>> = (0..layer.rows).map(|r| layer.row(r).to_vec()).collect();
            let cst = layer.bias.clone();
            let prev = k.checked_sub(1);
            let up = back_substitute(
                &layers[..k],
                &out.relax,
                map,
                zbox.dim(),
                lam.clone(),
                cst.clone(),
                prev,
                true,
            );
            let dn = back_substitute(&layers[..k], &out.relax, map, zbox.dim(), lam, cst, prev, false);
            for r in 0..layer.rows {
                lo[r] = lo[r].max(dn[r].lower_over(zbox));
                hi[r] = hi[r].min(up[r].upper_over(zbox));
            }
            if let Some(forms) = out.forms.as_mut() {
                forms.push(
                    dn.into_iter()
                        .zip(up)
                        .map(|(lower, upper)| NeuronForms { lower, upper })
                        .collect(),
                );
            }
        }
        if k + 1 < n {
            let phases = splits.map(|s| &s[k]);
            let mut rx = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                match apply_phase(lo[r], hi[r], phases.and_then(|p| p[r])) {
                    Some((a, b)) => {
                        lo[r] = a;
                        hi[r] = b;
                    }
                    None => {
                        out.infeasible = true;
                        lo[r] = hi[r];
                    }
                }
                rx.push(relu_relaxation(lo[r], hi[r]));
            }
            post_lo = lo.iter().map(|v| v.relu()).collect();
            post_hi = hi.iter().map(|v| v.relu()).collect();
            out.relax.push(rx);
        }
        out.lower.push(lo);
        out.upper.push(hi);
        if out.infeasible {
            // the remaining layers are irrelevant for an empty region
            for later in &layers[k + 1..] {
                out.lower.push(vec![S::zero(); later.rows]);
                out.upper.push(vec![S::zero(); later.rows]);
            }
            break;
        }
    }
    Ok(out)
}

/// Bounds on `sum_c weights[c] * logit_c` for copies that share `zbox`.
pub fn combined_logit_bounds<S: Scalar>(
    layers: &[Layer<S>],
    copies: &[(&InputMap, &LinearBounds<S>, f64)],
    zbox: &InputBox,
    mode: BoundMode,
) -> (S, S) {
    // interval part
    let (mut lo, mut hi) = copies.iter().fold((S::zero(), S::zero()), |(a, b), &(_, bnd, w)| {
        let (l, u) = bnd.logit();
        if w >= 0.0 {
            (a + l.scale(w), b + u.scale(w))
        } else {
            (a + u.scale(w), b + l.scale(w))
        }
    });
    if mode == BoundMode::Symbolic {
        let last = layers.len() - 1;
        let out_layer = &layers[last];
        let dim = zbox.dim();
        let mut up = AffineForm {
            coef: vec![S::zero(); dim],
            constant: S::zero(),
        };
        let mut dn = up.clone();
        for &(map, bnd, w) in copies {
            let lam = vec![out_layer.row(0).iter().map(|v| v.scale(w)).collect::<Vec<_>>()];
            let cst = vec![out_layer.bias[0].scale(w)];
            let prev = last.checked_sub(1);
            let u = back_substitute(
                &layers[..last],
                &bnd.relax,
                map,
                dim,
                lam.clone(),
                cst.clone(),
                prev,
                true,
            );
            let d = back_substitute(&layers[..last], &bnd.relax, map, dim, lam, cst, prev, false);
            for (acc, f) in [(&mut up, &u[0]), (&mut dn, &d[0])] {
                acc.constant = acc.constant + f.constant;
                for (a, &c) in acc.coef.iter_mut().zip(&f.coef) {
                    *a = *a + c;
                }
            }
        }
        lo = lo.max(dn.lower_over(zbox));
        hi = hi.min(up.upper_over(zbox));
    }
    (lo, hi)
}

/// Interval bounds of a network over a box of its inputs.
pub fn interval_bounds(net: &Network, input: &InputBox) -> Result<LinearBounds<f64>> {
    copy_bounds(
        net.layers(),
        &InputMap::identity(net.input_dim()),
        input,
        None,
        BoundMode::Interval,
        false,
    )
}

/// Symbolic bounds of a network over a box of its inputs, with the affine
/// bounding functions of every neuron.
pub fn symbolic_bounds(net: &Network, input: &InputBox) -> Result<LinearBounds<f64>> {
    copy_bounds(
        net.layers(),
        &InputMap::identity(net.input_dim()),
        input,
        None,
        BoundMode::Symbolic,
        true,
    )
}

/// Twin bounds of the product network over a box of `(x, x')`.
pub fn product_bounds(
    pnet: &ProductNetwork<'_>,
    input: &InputBox,
    mode: BoundMode,
) -> Result<(LinearBounds<f64>, LinearBounds<f64>)> {
    if input.dim() != pnet.input_dim() {
        return Err(Error::input(format!(
            "product box has {} coordinates, expected {}",
            input.dim(),
            pnet.input_dim()
        )));
    }
    let n = pnet.base().input_dim();
    let layers = pnet.base().layers();
    Ok((
        copy_bounds(layers, &InputMap::slice(n, 0), input, None, mode, false)?,
        copy_bounds(layers, &InputMap::slice(n, n), input, None, mode, false)?,
    ))
}

/// Sparse row `terms . z` constrained to `[lo, hi]`.
pub type LinearBand = (Vec<(usize, f64)>, f64, f64);

/// A region of (possibly paired) inputs: a box over free coordinates, the
/// input map of each copy, and linear side constraints `lo <= a.z <= hi`
/// that the box alone cannot express.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub zbox: InputBox,
    pub copies: Vec<InputMap>,
    pub constraints: Vec<LinearBand>,
}

impl Region {
    /// Pairs `(x, x + e)` inside one partition: `z = (x_num, e)`, copy 0
    /// carries sensitive level `levels.0`, copy 1 carries `levels.1`, and
    /// `x + e` is constrained to the domain.
    pub fn partition(
        partition: &Partition,
        prop: &FairnessProperty,
        schema: &Schema,
        levels: (usize, usize),
    ) -> Region {
        let layout = schema.layout();
        let m = layout.numeric.len();
        let base_a = partition.embed(schema, &vec![0.0; m], levels.0);
        let base_b = partition.embed(schema, &vec![0.0; m], levels.1);
        let mut lo = Vec::with_capacity(2 * m);
        let mut hi = Vec::with_capacity(2 * m);
        for &(l, u) in &partition.numerical_box {
            lo.push(l);
            hi.push(u);
        }
        for (i, &d) in prop.delta.iter().enumerate() {
            let (l, u) = partition.numerical_box[i];
            lo.push((-d).max(l - u));
            hi.push(d.min(u - l));
        }
        let constant_rows = |base: &[f64]| -> Vec<AffineRow> {
            base.iter()
                .map(|&v| AffineRow {
                    constant: v,
                    terms: vec![],
                    clip: None,
                })
                .collect()
        };
        let mut map_a = InputMap {
            rows: constant_rows(&base_a),
        };
        let mut map_b = InputMap {
            rows: constant_rows(&base_b),
        };
        let mut constraints = Vec::with_capacity(m);
        for (i, c) in layout.numeric.iter().enumerate() {
            let (l, u) = partition.numerical_box[i];
            map_a.rows[c.col] = AffineRow {
                constant: 0.0,
                terms: vec![(i, 1.0)],
                clip: Some((l, u)),
            };
            if prop.delta[i] > 0.0 {
                map_b.rows[c.col] = AffineRow {
                    constant: 0.0,
                    terms: vec![(i, 1.0), (m + i, 1.0)],
                    clip: Some((l, u)),
                };
                constraints.push((vec![(i, 1.0), (m + i, 1.0)], l, u));
            } else {
                map_b.rows[c.col] = map_a.rows[c.col].clone();
            }
        }
        Region {
            zbox: InputBox { lo, hi },
            copies: vec![map_a, map_b],
            constraints,
        }
    }

    /// Two independent copies over `D x D`; categorical coordinates are
    /// relaxed to `[0, 1]`.
    pub fn whole_domain(prop: &FairnessProperty, schema: &Schema) -> Region {
        let layout = schema.layout();
        let n = layout.width;
        let mut lo = vec![0.0; 2 * n];
        let mut hi = vec![1.0; 2 * n];
        for (c, &(l, u)) in layout.numeric.iter().zip(&prop.domain) {
            for off in [0, n] {
                lo[off + c.col] = l;
                hi[off + c.col] = u;
            }
        }
        Region {
            zbox: InputBox { lo, hi },
            copies: vec![InputMap::slice(n, 0), InputMap::slice(n, n)],
            constraints: vec![],
        }
    }

    /// `S(x)`: points similar to `x` inside the domain, one copy. Non-sensitive
    /// categoricals are pinned; the sensitive one-hot block is `[0, 1]` per
    /// coordinate when `sensitive_level` is `None`, else fixed to that level.
    pub fn neighborhood(
        x: &[f64],
        prop: &FairnessProperty,
        schema: &Schema,
        sensitive_level: Option<usize>,
    ) -> Result<Region> {
        if !prop.contains(x, schema) {
            return Err(Error::input("point lies outside the property domain"));
        }
        let layout = schema.layout();
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        for (i, c) in layout.numeric.iter().enumerate() {
            let (l, u) = prop.domain[i];
            lo[c.col] = (x[c.col] - prop.delta[i]).max(l);
            hi[c.col] = (x[c.col] + prop.delta[i]).min(u);
        }
        for j in layout.sensitive_block().cols() {
            match sensitive_level {
                None => {
                    lo[j] = 0.0;
                    hi[j] = 1.0;
                }
                Some(level) => {
                    let v = if j - layout.sensitive_block().start == level {
                        1.0
                    } else {
                        0.0
                    };
                    lo[j] = v;
                    hi[j] = v;
                }
            }
        }
        Ok(Region {
            zbox: InputBox { lo, hi },
            copies: vec![InputMap::identity(layout.width)],
            constraints: vec![],
        })
    }
}

/// Sound upper bound on `|sigma(a) - sigma(b)|` given logit ranges of both
/// sides and a range for `a - b`: the smaller of the range gap and the
/// difference bound times the largest sigmoid slope over the logit hull.
pub fn prob_gap_envelope<S: Scalar>(a: (S, S), b: (S, S), diff: (S, S)) -> S {
    let range = (a.1.sigmoid() - b.0.sigmoid())
        .max(b.1.sigmoid() - a.0.sigmoid())
        .max(S::zero());
    // the hull point closest to 0 carries the largest slope
    let lo = a.0.min(b.0);
    let hi = a.1.max(b.1);
    let t = if lo.value() > 0.0 {
        lo
    } else if hi.value() < 0.0 {
        hi
    } else {
        S::zero()
    };
    let s = t.sigmoid();
    let slope = s * (S::constant(1.0) - s);
    let abs_diff = diff.0.max(-diff.0).max(diff.1.max(-diff.1));
    range.min(abs_diff * slope)
}

/// Bound on the probability gap between the two copies of `region`.
pub fn region_prob_gap<S: Scalar>(layers: &[Layer<S>], region: &Region, mode: BoundMode) -> Result<S> {
    let [map_a, map_b] = region.copies.as_slice() else {
        return Err(Error::input("pair region needs two copies"));
    };
    let a = copy_bounds(layers, map_a, &region.zbox, None, mode, false)?;
    let b = copy_bounds(layers, map_b, &region.zbox, None, mode, false)?;
    let diff = combined_logit_bounds(layers, &[(map_a, &a, 1.0), (map_b, &b, -1.0)], &region.zbox, mode);
    Ok(prob_gap_envelope(a.logit(), b.logit(), diff))
}

/// Local term on any scalar type: clamped BCE of the worst
/// probability bound over `S(x)`.
pub fn local_fairness_generic<S: Scalar>(
    layers: &[Layer<S>],
    x: &[f64],
    y: u8,
    prop: &FairnessProperty,
    schema: &Schema,
    mode: BoundMode,
) -> Result<S> {
    let region = Region::neighborhood(x, prop, schema, None)?;
    let b = copy_bounds(layers, &region.copies[0], &region.zbox, None, mode, false)?;
    let (lo, hi) = b.logit();
    Ok(if y == 1 {
        bce_generic(lo.sigmoid(), 1)
    } else {
        bce_generic(hi.sigmoid(), 0)
    })
}

/// Upper bound on the worst-case BCE over the points similar to `x`.
pub fn local_fairness_upper(
    net: &Network,
    x: &[f64],
    y: u8,
    prop: &FairnessProperty,
    schema: &Schema,
    mode: BoundMode,
) -> Result<f64> {
    local_fairness_generic(net.layers(), x, y, prop, schema, mode)
}

#[derive(Debug, Clone, Copy)]
pub enum GapScope<'a> {
    /// One partition with the similarity coupling `x' = x + e`.
    Partition(&'a Partition),
    /// Uncoupled `D x D`, as used during training.
    WholeDomain,
}

pub fn global_fairness_generic<S: Scalar>(
    layers: &[Layer<S>],
    prop: &FairnessProperty,
    schema: &Schema,
    scope: GapScope<'_>,
    mode: BoundMode,
) -> Result<S> {
    let region = match scope {
        GapScope::Partition(p) => Region::partition(p, prop, schema, p.sensitive_pair),
        GapScope::WholeDomain => Region::whole_domain(prop, schema),
    };
    region_prob_gap(layers, &region, mode)
}

/// Upper bound on `max |f(x) - f(x')|` (probability space) over the chosen
/// scope.
pub fn global_fairness_upper(
    pnet: &ProductNetwork<'_>,
    prop: &FairnessProperty,
    schema: &Schema,
    scope: GapScope<'_>,
    mode: BoundMode,
) -> Result<f64> {
    global_fairness_generic(pnet.base().layers(), prop, schema, scope, mode)
}
