//! Multilayer perceptron parameters and tape-free batched evaluation.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{silu_nth, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    /// Number of affine layers; all but the last are followed by SiLU.
    pub depth: usize,
    pub output_dim: usize,
}

impl Architecture {
    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim } else { self.hidden };
                let fan_out = if l + 1 == self.depth {
                    self.output_dim
                } else {
                    self.hidden
                };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Weights are stored `fan_in × fan_out` so a batch `X` (rows are samples)
/// maps to `XW + b`. The flat layout is, per layer, `W` row-major then `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub arch: Architecture,
    pub seed: u64,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
}

/// Tape handles of one parameter set.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

/// Draws weights from `Uniform(±√(6/fan_in))` with zero biases.
///
/// `input_dim` is `d + 1`: the state and the time coordinate.
pub fn mlp_init(
    seed: u64,
    d: usize,
    hidden: usize,
    depth: usize,
    out_dim: usize,
) -> Result<MlpParams> {
    if depth < 2 {
        return Err(Error::InvalidArgument(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    if hidden == 0 || d == 0 || out_dim == 0 {
        return Err(Error::InvalidArgument(
            "layer widths must be positive".into(),
        ));
    }
    let arch = Architecture {
        input_dim: d + 1,
        hidden,
        depth,
        output_dim: out_dim,
    };
    let mut rng = stream_rng(seed, "init", 0);
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for (fan_in, fan_out) in arch.layer_shapes() {
        let bound = (6.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array2::zeros((1, fan_out)));
    }
    Ok(MlpParams {
        arch,
        seed,
        weights,
        biases,
    })
}

impl MlpParams {
    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        flat
    }

    pub fn from_flat(arch: Architecture, seed: u64, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(Error::Dimension {
                expected: arch.param_count(),
                got: flat.len(),
            });
        }
        let mut weights = Vec::with_capacity(arch.depth);
        let mut biases = Vec::with_capacity(arch.depth);
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_shapes() {
            let n = fan_in * fan_out;
            weights.push(
                Array2::from_shape_vec((fan_in, fan_out), flat[offset..offset + n].to_vec())
                    .unwrap(),
            );
            offset += n;
            biases.push(
                Array2::from_shape_vec((1, fan_out), flat[offset..offset + fan_out].to_vec())
                    .unwrap(),
            );
            offset += fan_out;
        }
        Ok(Self {
            arch,
            seed,
            weights,
            biases,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Records every parameter as a leaf; `trainable` controls whether the
    /// leaves receive gradients.
    pub fn load(&self, tape: &mut Tape, trainable: bool) -> ParamNodes {
        let mut leaf = |a: &Array2<f64>| {
            if trainable {
                tape.param(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        ParamNodes { weights, biases }
    }

    /// Flattens gradients of the leaves in `nodes` into the flat layout.
    pub fn flat_gradient(&self, grads: &super::tape::Gradients, nodes: &ParamNodes) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..self.arch.depth {
            for (id, shape) in [
                (nodes.weights[l], self.weights[l].dim()),
                (nodes.biases[l], self.biases[l].dim()),
            ] {
                match grads.get(id) {
                    Some(g) => flat.extend(g.iter()),
                    None => flat.extend(std::iter::repeat_n(0.0, shape.0 * shape.1)),
                }
            }
        }
        flat
    }

    /// Batched forward pass with first-order tangents, no tape.
    ///
    /// `input` is `B × input_dim`; each seed is a `B × input_dim` input
    /// direction. Returns the output and one output tangent per seed.
    pub fn forward_tangents(
        &self,
        input: &Array2<f64>,
        seeds: &[Array2<f64>],
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut h = input.clone();
        let mut tangents: Vec<Array2<f64>> = seeds.to_vec();
        for l in 0..self.arch.depth {
            let w = &self.weights[l];
            let mut z = h.dot(w);
            z += &self.biases[l];
            for t in tangents.iter_mut() {
                *t = t.dot(w);
            }
            if l + 1 == self.arch.depth {
                h = z;
            } else {
                let slope = z.mapv(|v| silu_nth(1, v));
                for t in tangents.iter_mut() {
                    *t *= &slope;
                }
                z.mapv_inplace(|v| silu_nth(0, v));
                h = z;
            }
        }
        (h, tangents)
    }

    pub fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        self.forward_tangents(input, &[]).0
    }
}

/// Stacks points `x` (each length `d`) with a common time into a
/// `B × (d + 1)` network input.
pub fn stack_input(t: f64, xs: &[Vec<f64>], d: usize) -> Result<Array2<f64>> {
    let mut input = Array2::zeros((xs.len(), d + 1));
    for (mut row, x) in input.axis_iter_mut(Axis(0)).zip(xs) {
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        Zip::from(row.slice_mut(ndarray::s![..d]))
            .and(&x[..])
            .for_each(|r, &v| *r = v);
        row[d] = t;
    }
    Ok(input)
}

/// Evaluates the network at one point, with input `concat(x, t)`.
pub fn mlp_eval(params: &MlpParams, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = params.arch.input_dim - 1;
    let input = stack_input(t, &[x.to_vec()], d)?;
    Ok(params.forward(&input).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// Scalar loops over the flat layout, sharing nothing with `forward`.
    fn naive_eval(params: &MlpParams, t: f64, x: &[f64]) -> Vec<f64> {
        let flat = params.to_flat();
        let mut h: Vec<f64> = x.iter().copied().chain([t]).collect();
        let mut offset = 0;
        let shapes = params.arch.layer_shapes();
        for (l, (fan_in, fan_out)) in shapes.iter().enumerate() {
            let mut z = vec![0.0; *fan_out];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, hi) in h.iter().enumerate() {
                    acc += hi * flat[offset + i * fan_out + j];
                }
                *zj = acc + flat[offset + fan_in * fan_out + j];
            }
            offset += fan_in * fan_out + fan_out;
            h = if l + 1 == shapes.len() {
                z
            } else {
                z.iter().map(|v| v / (1.0 + (-v).exp())).collect()
            };
        }
        h
    }

    #[test]
    fn init_is_deterministic() {
        let a = mlp_init(7, 2, 16, 3, 2).unwrap();
        let b = mlp_init(7, 2, 16, 3, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mlp_init(8, 2, 16, 3, 2).unwrap());
    }

    #[test]
    fn default_architecture_param_count() {
        let p = mlp_init(0, 2, 256, 5, 2).unwrap();
        let expected = (3 * 256 + 256) + 3 * (256 * 256 + 256) + (256 * 2 + 2);
        assert_eq!(p.param_count(), expected);
        assert_eq!(p.to_flat().len(), expected);
    }

    #[test]
    fn rejects_single_layer() {
        assert!(mlp_init(0, 2, 8, 1, 2).is_err());
    }

    #[test]
    fn init_respects_bounds_and_zero_biases() {
        let p = mlp_init(3, 2, 64, 4, 2).unwrap();
        for (w, (fan_in, _)) in p.weights.iter().zip(p.arch.layer_shapes()) {
            let bound = (6.0 / fan_in as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = mlp_init(0, 2, 8, 3, 2).unwrap();
        for w in p.weights.iter_mut() {
            w.fill(0.0);
        }
        assert_eq!(mlp_eval(&p, 0.5, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matches_independent_implementation() {
        let p = mlp_init(11, 2, 256, 5, 2).unwrap();
        let mut rng = stream_rng(0, "mlp-oracle", 0);
        for _ in 0..10 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let t = rng.random_range(0.0..1.0);
            let fast = mlp_eval(&p, t, &x).unwrap();
            let slow = naive_eval(&p, t, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn output_is_finite_on_bounded_inputs() {
        let p = mlp_init(2, 2, 256, 5, 2).unwrap();
        for &(t, x) in &[(0.0, [10.0, 0.0]), (1.0, [-7.0, 7.0]), (0.5, [0.0, -10.0])] {
            assert!(mlp_eval(&p, t, &x).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = mlp_init(5, 3, 8, 3, 1).unwrap();
        let q = MlpParams::from_flat(p.arch, p.seed, &p.to_flat()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = mlp_init(0, 2, 8, 3, 2).unwrap();
        assert!(matches!(
            mlp_eval(&p, 0.0, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }
}
