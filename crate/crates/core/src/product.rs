//! Product network: two copies of a classifier evaluated side by side on a
//! pair `(x, x')`. The block-diagonal parameters are a logical view over the
//! base network's storage; [`ProductNetwork::block_layer`] materializes one
//! layer for inspection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{class_of, Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSpace {
    Logit,
    Prob,
}

#[derive(Debug, Clone, Copy)]
pub struct ProductNetwork<'a> {
    base: &'a Network,
}

impl<'a> ProductNetwork<'a> {
    pub fn new(base: &'a Network) -> Self {
        ProductNetwork { base }
    }

    pub fn base(&self) -> &'a Network {
        self.base
    }

    pub fn input_dim(&self) -> usize {
        2 * self.base.input_dim()
    }

    /// `diag(W_i, W_i)` and `(b_i; b_i)` for layer `i`.
    pub fn block_layer(&self, i: usize) -> Layer {
        let l = &self.base.layers()[i];
        let mut out = Layer::zeros(2 * l.rows, 2 * l.cols);
        for r in 0..l.rows {
            for c in 0..l.cols {
                out.weights[r * out.cols + c] = l.w(r, c);
                out.weights[(r + l.rows) * out.cols + c + l.cols] = l.w(r, c);
            }
            out.bias[r] = l.bias[r];
            out.bias[r + l.rows] = l.bias[r];
        }
        out
    }

    /// Twin logits on the concatenated input `x_p = (x, x')`.
    pub fn forward(&self, x_p: &[f64]) -> Result<(f64, f64)> {
        if x_p.len() != self.input_dim() {
            return Err(Error::input(format!(
                "product input has {} entries, expected {}",
                x_p.len(),
                self.input_dim()
            )));
        }
        let (x, xp) = x_p.split_at(self.base.input_dim());
        self.forward_pair(x, xp)
    }

    pub fn forward_pair(&self, x: &[f64], x_prime: &[f64]) -> Result<(f64, f64)> {
        Ok((self.base.forward(x)?.logit, self.base.forward(x_prime)?.logit))
    }

    /// `h_p = |h(x) - h(x')|`.
    pub fn class_gap(&self, x: &[f64], x_prime: &[f64]) -> Result<u8> {
        let (a, b) = self.forward_pair(x, x_prime)?;
        Ok(class_of(a).abs_diff(class_of(b)))
    }

    /// `|f(x) - f(x')|` in logit or probability space, with the absolute
    /// value taken as `max(a, 0) + max(-a, 0)`.
    pub fn diff(&self, x: &[f64], x_prime: &[f64], space: OutputSpace) -> Result<f64> {
        let a = self.base.forward(x)?;
        let b = self.base.forward(x_prime)?;
        let d = match space {
            OutputSpace::Logit => a.logit - b.logit,
            OutputSpace::Prob => a.prob - b.prob,
        };
        Ok(d.max(0.0) + (-d).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_construction() {
        let net = Network::new(1, vec![Layer::from_rows(vec![vec![2.0]], vec![1.0]).unwrap()]).unwrap();
        let p = ProductNetwork::new(&net);
        let l = p.block_layer(0);
        assert_eq!(l.weights, vec![2.0, 0.0, 0.0, 2.0]);
        assert_eq!(l.bias, vec![1.0, 1.0]);
        assert_eq!(p.input_dim(), 2);
    }

    /// Evaluates the materialized block-diagonal network directly.
    fn materialized_forward(p: &ProductNetwork<'_>, x_p: &[f64]) -> (f64, f64) {
        let n = p.base().layers().len();
        let mut cur = x_p.to_vec();
        for i in 0..n {
            let l = p.block_layer(i);
            cur = (0..l.rows)
                .map(|r| {
                    let v = l.row(r).iter().zip(&cur).fold(l.bias[r], |a, (w, x)| a + w * x);
                    if i + 1 < n {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
        }
        (cur[0], cur[1])
    }

    #[test]
    fn twin_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(&[3, 6, 4, 1], 17).unwrap();
        let p = ProductNetwork::new(&net);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let xp: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let (a, b) = p.forward_pair(&x, &x).unwrap();
            assert_eq!(a, b);
            assert_eq!(p.diff(&x, &x, OutputSpace::Prob).unwrap(), 0.0);

            let joined: Vec<f64> = x.iter().chain(&xp).copied().collect();
            let (a, b) = p.forward(&joined).unwrap();
            assert_eq!((a, b), (net.logit(&x), net.logit(&xp)));
            let (ma, mb) = materialized_forward(&p, &joined);
            assert!((ma - a).abs() < 1e-12 && (mb - b).abs() < 1e-12);

            let want = (net.forward(&x).unwrap().prob - net.forward(&xp).unwrap().prob).abs();
            assert_eq!(p.diff(&x, &xp, OutputSpace::Prob).unwrap(), want);
            assert_eq!(
                p.diff(&x, &xp, OutputSpace::Logit).unwrap(),
                p.diff(&xp, &x, OutputSpace::Logit).unwrap()
            );
            let gap = p.class_gap(&x, &xp).unwrap();
            assert_eq!(gap == 1, (a >= 0.0) != (b >= 0.0));
        }
        assert!(p.forward(&[0.0; 5]).is_err());
    }

    #[test]
    fn prob_diff_arithmetic() {
        // logit = ln(p/(1-p)) gives probabilities 0.9 and 0.2 exactly enough
        let net = Network::new(1, vec![Layer::from_rows(vec![vec![1.0]], vec![0.0]).unwrap()]).unwrap();
        let p = ProductNetwork::new(&net);
        let d = p
            .diff(&[(0.9f64 / 0.1).ln()], &[(0.2f64 / 0.8).ln()], OutputSpace::Prob)
            .unwrap();
        assert!((d - 0.7).abs() < 1e-12);
    }
}
