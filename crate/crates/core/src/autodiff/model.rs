//! Neural velocity fields: a direct MLP `v_θ(t, x)` or the gradient of a
//! scalar potential `v_θ = ∇ₓφ_θ`.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jet::mlp_jet;
use super::mlp::{mlp_init, stack_input, MlpParams, ParamNodes};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::fields::{LocalState, VelocityField};
use crate::linalg::Mat;

/// Rows per chunk when a model is evaluated as a [`VelocityField`].
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Potential,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Potential => "potential",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "potential" => Ok(ModelKind::Potential),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Direction of a Jacobian-vector product.
#[derive(Clone, Copy, Debug)]
pub enum Tangent {
    /// Unit vector along input coordinate `i`; `i = d` is the time axis.
    Axis(usize),
    /// Per-row spatial direction, a `B × d` node.
    Probe(NodeId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    kind: ModelKind,
    params: MlpParams,
}

impl FlowModel {
    pub fn new(kind: ModelKind, d: usize, hidden: usize, depth: usize, seed: u64) -> Result<Self> {
        let out = match kind {
            ModelKind::Mlp => d,
            ModelKind::Potential => 1,
        };
        Self::from_params(kind, mlp_init(seed, d, hidden, depth, out)?)
    }

    pub fn from_params(kind: ModelKind, params: MlpParams) -> Result<Self> {
        let d = params.arch.input_dim - 1;
        let expected = match kind {
            ModelKind::Mlp => d,
            ModelKind::Potential => 1,
        };
        if params.arch.output_dim != expected {
            return Err(Error::Dimension {
                expected,
                got: params.arch.output_dim,
            });
        }
        Ok(Self { kind, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    /// Spatial dimension `d`.
    pub fn state_dim(&self) -> usize {
        self.params.arch.input_dim - 1
    }

    fn seed_node(&self, tape: &mut Tape, rows: usize, tangent: Tangent) -> NodeId {
        let d = self.state_dim();
        match tangent {
            Tangent::Axis(i) => {
                assert!(i <= d, "axis {i} out of range");
                let mut e = Array2::zeros((rows, d + 1));
                e.column_mut(i).fill(1.0);
                tape.constant(e)
            }
            Tangent::Probe(z) => {
                assert_eq!(tape.value(z).dim(), (rows, d), "probe shape");
                let zero_time = tape.constant(Array2::zeros((rows, 1)));
                tape.concat(&[z, zero_time])
            }
        }
    }

    /// Velocity at every row of `input` (`B × (d + 1)`), as a `B × d` node.
    pub fn velocity(&self, tape: &mut Tape, params: &ParamNodes, input: NodeId) -> NodeId {
        match self.kind {
            ModelKind::Mlp => mlp_jet(tape, params, input, &[], &[]).value,
            ModelKind::Potential => {
                let rows = tape.value(input).nrows();
                let seeds: Vec<NodeId> = (0..self.state_dim())
                    .map(|k| self.seed_node(tape, rows, Tangent::Axis(k)))
                    .collect();
                let jet = mlp_jet(tape, params, input, &seeds, &[]);
                tape.concat(&jet.first)
            }
        }
    }

    /// Velocity and the products `(∇v)·dir` for each direction; spatial
    /// axes give Jacobian columns and the time axis gives `∂ₜv`.
    pub fn velocity_jvp(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        input: NodeId,
        dirs: &[Tangent],
    ) -> (NodeId, Vec<NodeId>) {
        let rows = tape.value(input).nrows();
        match self.kind {
            ModelKind::Mlp => {
                let seeds: Vec<NodeId> = dirs
                    .iter()
                    .map(|&t| self.seed_node(tape, rows, t))
                    .collect();
                let jet = mlp_jet(tape, params, input, &seeds, &[]);
                (jet.value, jet.first)
            }
            ModelKind::Potential => {
                let d = self.state_dim();
                let mut seeds: Vec<NodeId> = (0..d)
                    .map(|k| self.seed_node(tape, rows, Tangent::Axis(k)))
                    .collect();
                // Seed index used for each direction; spatial axes reuse the
                // gradient seeds so mixed partials share one node.
                let dir_seed: Vec<usize> = dirs
                    .iter()
                    .map(|&t| match t {
                        Tangent::Axis(i) if i < d => i,
                        other => {
                            seeds.push(self.seed_node(tape, rows, other));
                            seeds.len() - 1
                        }
                    })
                    .collect();
                let pairs: Vec<(usize, usize)> = dir_seed
                    .iter()
                    .flat_map(|&s| (0..d).map(move |k| (k, s)))
                    .collect();
                let jet = mlp_jet(tape, params, input, &seeds, &pairs);
                let velocity = tape.concat(&jet.first[..d]);
                let products = dir_seed
                    .iter()
                    .map(|&s| {
                        let cols: Vec<NodeId> = (0..d)
                            .map(|k| match jet.second_order(k, s) {
                                Some(n) => n,
                                None => tape.constant(Array2::zeros((rows, 1))),
                            })
                            .collect();
                        tape.concat(&cols)
                    })
                    .collect();
                (velocity, products)
            }
        }
    }

    /// Tape-free velocity of a `B × (d + 1)` input.
    pub fn velocity_batch(&self, input: &Array2<f64>) -> Array2<f64> {
        match self.kind {
            ModelKind::Mlp => self.params.forward(input),
            ModelKind::Potential => {
                let d = self.state_dim();
                let seeds: Vec<Array2<f64>> =
                    (0..d).map(|k| axis_seed(input.nrows(), d, k)).collect();
                let (_, grads) = self.params.forward_tangents(input, &seeds);
                let mut v = Array2::zeros((input.nrows(), d));
                for (k, g) in grads.iter().enumerate() {
                    v.column_mut(k).assign(&g.column(0));
                }
                v
            }
        }
    }

    /// Velocity plus `∂v/∂inputᵢ` for every input coordinate (the last one is
    /// time), each `B × d`.
    pub fn local_arrays(&self, input: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let d = self.state_dim();
        let rows = input.nrows();
        match self.kind {
            ModelKind::Mlp => {
                let seeds: Vec<Array2<f64>> = (0..=d).map(|i| axis_seed(rows, d, i)).collect();
                self.params.forward_tangents(input, &seeds)
            }
            ModelKind::Potential => {
                let mut tape = Tape::new();
                let nodes = self.params.load(&mut tape, false);
                let x = tape.constant(input.clone());
                let dirs: Vec<Tangent> = (0..=d).map(Tangent::Axis).collect();
                let (v, cols) = self.velocity_jvp(&mut tape, &nodes, x, &dirs);
                (
                    tape.value(v).clone(),
                    cols.iter().map(|c| tape.value(*c).clone()).collect(),
                )
            }
        }
    }

    fn chunked<T: Send>(
        &self,
        t: f64,
        xs: &[Vec<f64>],
        f: impl Fn(&Array2<f64>) -> Vec<T> + Sync,
    ) -> Result<Vec<T>> {
        let d = self.state_dim();
        let parts: Result<Vec<Vec<T>>> = xs
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| Ok(f(&stack_input(t, chunk, d)?)))
            .collect();
        Ok(parts?.into_iter().flatten().collect())
    }
}

fn axis_seed(rows: usize, d: usize, axis: usize) -> Array2<f64> {
    let mut e = Array2::zeros((rows, d + 1));
    e.column_mut(axis).fill(1.0);
    e
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn local_states(v: &Array2<f64>, cols: &[Array2<f64>]) -> Vec<LocalState> {
    let d = v.ncols();
    (0..v.nrows())
        .map(|r| {
            let mut jac = Mat::zeros(d, d);
            for (i, col) in cols[..d].iter().enumerate() {
                for k in 0..d {
                    jac[(k, i)] = col[[r, k]];
                }
            }
            LocalState {
                velocity: v.row(r).to_vec(),
                jacobian: jac,
                time_partial: cols[d].slice(s![r, ..]).to_vec(),
            }
        })
        .collect()
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_batch(t, &[x.to_vec()])?.remove(0))
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<Mat> {
        Ok(self.local_batch(t, &[x.to_vec()])?.remove(0).jacobian)
    }

    fn time_partial(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.local_batch(t, &[x.to_vec()])?.remove(0).time_partial)
    }

    fn eval_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.chunked(t, xs, |input| rows_of(&self.velocity_batch(input)))
    }

    fn local_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<LocalState>> {
        self.chunked(t, xs, |input| {
            let (v, cols) = self.local_arrays(input);
            local_states(&v, &cols)
        })
    }
}

/// Exact spatial Jacobian of the network velocity at one point.
pub fn mlp_jacobian(params: &MlpParams, t: f64, x: &[f64]) -> Result<Mat> {
    FlowModel::from_params(ModelKind::Mlp, params.clone())?.jacobian(t, x)
}

/// `∇ₓφ` for a scalar-output network `φ`.
pub fn potential_velocity(params: &MlpParams, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    FlowModel::from_params(ModelKind::Potential, params.clone())?.eval(t, x)
}
