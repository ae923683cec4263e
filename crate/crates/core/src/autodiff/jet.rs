//! Forward-mode jets recorded on the reverse tape.
//!
//! A jet carries a primal node plus first-order tangents along a set of
//! input seeds and, optionally, mixed second-order tangents for selected
//! seed pairs. Because every tangent is an ordinary tape node, derivatives
//! of Jacobian or Hessian entries with respect to the parameters come out of
//! the usual backward pass.

use std::collections::BTreeMap;

use super::mlp::ParamNodes;
use super::tape::{NodeId, Tape};

pub struct Jet {
    pub value: NodeId,
    /// `∂out/∂seedᵢ`, one per seed.
    pub first: Vec<NodeId>,
    /// `∂²out/∂seedᵢ∂seedⱼ` for each requested pair, keyed with `i ≤ j`.
    /// `None` when the entry is identically zero.
    pub second: BTreeMap<(usize, usize), Option<NodeId>>,
}

impl Jet {
    pub fn second_order(&self, i: usize, j: usize) -> Option<NodeId> {
        let key = (i.min(j), i.max(j));
        *self
            .second
            .get(&key)
            .unwrap_or_else(|| panic!("second-order pair {key:?} was not requested"))
    }
}

/// Runs the MLP on `input` while propagating tangents along `seeds` (each a
/// node of the same shape as `input`) and mixed second-order tangents for
/// `pairs`.
pub fn mlp_jet(
    tape: &mut Tape,
    params: &ParamNodes,
    input: NodeId,
    seeds: &[NodeId],
    pairs: &[(usize, usize)],
) -> Jet {
    let depth = params.weights.len();
    let mut value = input;
    let mut first: Vec<NodeId> = seeds.to_vec();
    let mut second: BTreeMap<(usize, usize), Option<NodeId>> = pairs
        .iter()
        .map(|&(i, j)| ((i.min(j), i.max(j)), None))
        .collect();
    for l in 0..depth {
        let w = params.weights[l];
        let z = tape.matmul(value, w);
        let z = tape.add_row(z, params.biases[l]);
        for f in first.iter_mut() {
            *f = tape.matmul(*f, w);
        }
        for s in second.values_mut() {
            *s = s.map(|n| tape.matmul(n, w));
        }
        if l + 1 == depth {
            value = z;
            break;
        }
        let slope = tape.silu_derivative(z, 1);
        if !second.is_empty() {
            let curvature = tape.silu_derivative(z, 2);
            for (&(i, j), s) in second.iter_mut() {
                let outer = tape.mul(first[i], first[j]);
                let curved = tape.mul(curvature, outer);
                *s = Some(match *s {
                    Some(prev) => {
                        let linear = tape.mul(slope, prev);
                        tape.add(curved, linear)
                    }
                    None => curved,
                });
            }
        }
        for f in first.iter_mut() {
            *f = tape.mul(slope, *f);
        }
        value = tape.silu(z);
    }
    Jet {
        value,
        first,
        second,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::mlp_init;
    use ndarray::{array, Array2};

    fn scalar_net(x: &Array2<f64>, seeds: &[Array2<f64>], pairs: &[(usize, usize)]) -> (Tape, Jet) {
        let mut tape = Tape::new();
        let p = mlp_init(4, 2, 12, 3, 1).unwrap();
        let nodes = p.load(&mut tape, false);
        let input = tape.constant(x.clone());
        let seeds: Vec<NodeId> = seeds.iter().map(|s| tape.constant(s.clone())).collect();
        let jet = mlp_jet(&mut tape, &nodes, input, &seeds, pairs);
        (tape, jet)
    }

    #[test]
    fn first_and_second_order_tangents_match_finite_differences() {
        let x = array![[0.3, -0.8, 0.4]];
        let e = |k: usize| {
            let mut a = Array2::zeros((1, 3));
            a[[0, k]] = 1.0;
            a
        };
        let seeds = [e(0), e(1), e(2)];
        let pairs = [(0, 0), (0, 1), (1, 2)];
        let (tape, jet) = scalar_net(&x, &seeds, &pairs);
        let h = 1e-4;
        let eval = |dx: &[f64; 3]| {
            let mut xx = x.clone();
            for k in 0..3 {
                xx[[0, k]] += dx[k];
            }
            let (t, j) = scalar_net(&xx, &[], &[]);
            t.scalar(j.value)
        };
        for k in 0..3 {
            let mut p = [0.0; 3];
            let mut m = [0.0; 3];
            p[k] = h;
            m[k] = -h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((tape.scalar(jet.first[k]) - fd).abs() < 1e-7);
        }
        for &(i, j) in &pairs {
            let mut pp = [0.0; 3];
            let mut pm = [0.0; 3];
            let mut mp = [0.0; 3];
            let mut mm = [0.0; 3];
            pp[i] += h;
            pp[j] += h;
            pm[i] += h;
            pm[j] -= h;
            mp[i] -= h;
            mp[j] += h;
            mm[i] -= h;
            mm[j] -= h;
            let fd = (eval(&pp) - eval(&pm) - eval(&mp) + eval(&mm)) / (4.0 * h * h);
            let analytic = tape.scalar(jet.second_order(i, j).unwrap());
            assert!(
                (analytic - fd).abs() < 1e-5,
                "pair ({i},{j}): {analytic} vs {fd}"
            );
        }
    }
}
