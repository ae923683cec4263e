//! Flow-matching loss and the strain/vorticity penalty, recorded on the tape
//! so that everything is differentiable with respect to the parameters.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Batch;
use crate::autodiff::{FlowModel, NodeId, ParamNodes, Tangent, Tape};
use crate::error::{Error, Result};

/// Rows per tape. Chunks are independent and their gradients are summed in
/// chunk order, so results do not depend on scheduling.
pub const TRAIN_CHUNK: usize = 128;

/// Probes per tape in the stand-alone Hutchinson estimator.
const ESTIMATOR_PROBE_GROUP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    Exact,
    Hutchinson,
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegMode::Exact => "exact",
            RegMode::Hutchinson => "hutchinson",
        })
    }
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RegMode::Exact),
            "hutchinson" => Ok(RegMode::Hutchinson),
            other => Err(Error::InvalidArgument(format!(
                "unknown regularizer mode `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossSettings {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_min: f64,
    pub reg_mode: RegMode,
    /// Base step of the finite-difference JVP in Hutchinson mode; the
    /// perturbation is `fd_step·‖z‖` along `Jz`.
    pub fd_step: f64,
    /// Scales the SiLU partials on every tape; `1.0` is fault-free. A
    /// negative control for gradient checking.
    #[doc(hidden)]
    #[serde(skip)]
    pub activation_fault: f64,
}

/// Batch means of the loss terms. Penalty terms are `None` when they were
/// not evaluated separately.
#[derive(Clone, Debug, Default)]
pub struct LossEval {
    pub total: f64,
    pub fm: f64,
    pub strain: Option<f64>,
    pub vort: Option<f64>,
    pub grad: Option<Vec<f64>>,
}

/// Independent ±1 entries, one `rows × d` matrix per probe.
pub fn rademacher_probes(
    rng: &mut impl Rng,
    probes: usize,
    rows: usize,
    d: usize,
) -> Vec<Array2<f64>> {
    (0..probes)
        .map(|_| {
            Array2::from_shape_simple_fn(
                (rows, d),
                || if rng.random::<bool>() { 1.0 } else { -1.0 },
            )
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Penalty {
    None,
    Exact,
    /// `split` requests both `‖J‖²` and `tr(J²)`; without it only `‖J‖²`.
    Hutchinson {
        split: bool,
    },
}

struct ChunkNodes {
    fm: NodeId,
    strain: Option<NodeId>,
    vort: Option<NodeId>,
    frob: Option<NodeId>,
}

struct ChunkInput<'a> {
    xt: ArrayView2<'a, f64>,
    t: ArrayView1<'a, f64>,
    ut: ArrayView2<'a, f64>,
    probes: Vec<ArrayView2<'a, f64>>,
}

fn time_column(tape: &mut Tape, t: ArrayView1<f64>) -> NodeId {
    tape.constant(t.to_owned().insert_axis(Axis(1)))
}

/// Builds the per-chunk sums (not means) of the loss terms.
fn chunk_graph(
    model: &FlowModel,
    tape: &mut Tape,
    params: &ParamNodes,
    chunk: &ChunkInput,
    penalty: Penalty,
    fd_step: f64,
) -> ChunkNodes {
    let d = model.state_dim();
    let x = tape.constant(chunk.xt.to_owned());
    let tcol = time_column(tape, chunk.t);
    let input = tape.concat(&[x, tcol]);
    let target = tape.constant(chunk.ut.to_owned());
    let mut nodes = ChunkNodes {
        fm: input,
        strain: None,
        vort: None,
        frob: None,
    };
    let velocity = match penalty {
        Penalty::None => model.velocity(tape, params, input),
        Penalty::Exact => {
            let dirs: Vec<Tangent> = (0..d).map(Tangent::Axis).collect();
            let (v, cols) = model.velocity_jvp(tape, params, input, &dirs);
            let (strain, vort) = exact_sums(tape, &cols);
            nodes.strain = Some(strain);
            nodes.vort = Some(vort);
            v
        }
        Penalty::Hutchinson { split } => {
            let zs: Vec<NodeId> = chunk
                .probes
                .iter()
                .map(|z| tape.constant(z.to_owned()))
                .collect();
            let dirs: Vec<Tangent> = zs.iter().map(|&z| Tangent::Probe(z)).collect();
            let (v, jzs) = model.velocity_jvp(tape, params, input, &dirs);
            let inv_p = 1.0 / zs.len() as f64;
            let frob_terms: Vec<NodeId> = jzs.iter().map(|&jz| tape.sum_squares(jz)).collect();
            let frob = sum_all(tape, &frob_terms);
            let frob = tape.scale(frob, inv_p);
            if split {
                let h = fd_step * (d as f64).sqrt();
                let tr_terms: Vec<NodeId> = zs
                    .iter()
                    .zip(&jzs)
                    .map(|(&z, &jz)| {
                        let step = tape.scale(jz, h);
                        let xp = tape.add(x, step);
                        let xm = tape.sub(x, step);
                        let ip = tape.concat(&[xp, tcol]);
                        let im = tape.concat(&[xm, tcol]);
                        let vp = model.velocity(tape, params, ip);
                        let vm = model.velocity(tape, params, im);
                        let diff = tape.sub(vp, vm);
                        let jjz = tape.scale(diff, 0.5 / h);
                        let prod = tape.mul(z, jjz);
                        tape.sum(prod)
                    })
                    .collect();
                let tr = sum_all(tape, &tr_terms);
                let tr = tape.scale(tr, inv_p);
                let plus = tape.add(frob, tr);
                let minus = tape.sub(frob, tr);
                nodes.strain = Some(tape.scale(plus, 0.5));
                nodes.vort = Some(tape.scale(minus, 0.5));
            }
            nodes.frob = Some(frob);
            v
        }
    };
    let resid = tape.sub(velocity, target);
    nodes.fm = tape.sum_squares(resid);
    nodes
}

fn sum_all(tape: &mut Tape, terms: &[NodeId]) -> NodeId {
    terms[1..].iter().fold(terms[0], |acc, &n| tape.add(acc, n))
}

/// Sums over rows of `‖S‖²_F` and `‖Ω‖²_F` from Jacobian columns
/// (`cols[i]` holds `∂v/∂xᵢ`, so entry `J_ki` is column `k` of `cols[i]`).
fn exact_sums(tape: &mut Tape, cols: &[NodeId]) -> (NodeId, NodeId) {
    let d = cols.len();
    let entry = |tape: &mut Tape, k: usize, i: usize| tape.column(cols[i], k);
    let mut strain_terms = Vec::new();
    let mut vort_terms = Vec::new();
    for k in 0..d {
        let diag = entry(tape, k, k);
        strain_terms.push(tape.sum_squares(diag));
        for i in k + 1..d {
            let a = entry(tape, k, i);
            let b = entry(tape, i, k);
            // Off-diagonal pairs appear twice in each Frobenius sum.
            let sym = tape.add(a, b);
            let sym_sq = tape.sum_squares(sym);
            strain_terms.push(tape.scale(sym_sq, 0.5));
            let anti = tape.sub(a, b);
            let anti_sq = tape.sum_squares(anti);
            vort_terms.push(tape.scale(anti_sq, 0.5));
        }
    }
    let strain = sum_all(tape, &strain_terms);
    let vort = if vort_terms.is_empty() {
        let zero = tape.constant(Array2::zeros((1, 1)));
        tape.scale(zero, 1.0)
    } else {
        sum_all(tape, &vort_terms)
    };
    (strain, vort)
}

struct ChunkResult {
    fm: f64,
    strain: Option<f64>,
    vort: Option<f64>,
    frob: Option<f64>,
    grad: Option<Vec<f64>>,
}

fn run_chunks(
    model: &FlowModel,
    batch: &Batch,
    probes: &[Array2<f64>],
    settings: &LossSettings,
    penalty: Penalty,
    with_grad: bool,
) -> Result<Vec<ChunkResult>> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.dim() != model.state_dim() {
        return Err(Error::Dimension {
            expected: model.state_dim(),
            got: batch.dim(),
        });
    }
    let (xt, ut) = batch.targets(settings.sigma_min);
    let inv_n = 1.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(TRAIN_CHUNK).collect();
    let results: Vec<ChunkResult> = starts
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + TRAIN_CHUNK).min(n);
            let chunk = ChunkInput {
                xt: xt.slice(s![r0..r1, ..]),
                t: batch.t.slice(s![r0..r1]),
                ut: ut.slice(s![r0..r1, ..]),
                probes: probes.iter().map(|z| z.slice(s![r0..r1, ..])).collect(),
            };
            let mut tape = Tape::new();
            if settings.activation_fault != 1.0 {
                tape.inject_activation_fault(settings.activation_fault);
            }
            let params = model.params().load(&mut tape, with_grad);
            let nodes = chunk_graph(model, &mut tape, &params, &chunk, penalty, settings.fd_step);
            let grad = if with_grad {
                let mut terms = vec![nodes.fm];
                match (nodes.strain, nodes.vort, nodes.frob) {
                    (Some(s), Some(v), _) => {
                        if settings.alpha != 0.0 {
                            terms.push(tape.scale(s, settings.alpha));
                        }
                        if settings.beta != 0.0 {
                            terms.push(tape.scale(v, settings.beta));
                        }
                    }
                    (_, _, Some(f)) => terms.push(tape.scale(f, settings.alpha)),
                    _ => {}
                }
                let total = sum_all(&mut tape, &terms);
                let total = tape.scale(total, inv_n);
                let grads = tape.backward(total).expect("chunk loss is scalar");
                Some(model.params().flat_gradient(&grads, &params))
            } else {
                None
            };
            ChunkResult {
                fm: tape.scalar(nodes.fm),
                strain: nodes.strain.map(|s| tape.scalar(s)),
                vort: nodes.vort.map(|s| tape.scalar(s)),
                frob: nodes.frob.map(|s| tape.scalar(s)),
                grad,
            }
        })
        .collect();
    Ok(results)
}

fn sum_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.sum()
}

/// `fm + α·strain + β·vort` averaged over the batch, with its parameter
/// gradient when `with_grad` is set.
///
/// In exact mode the penalty uses the full Jacobian. In Hutchinson mode
/// `‖J‖²_F ≈ ‖Jz‖²` and `tr(J²) ≈ ⟨z, J(Jz)⟩` with the outer product
/// `J(Jz)` taken by central differences; when `α = β` only `‖J‖²_F` is
/// needed.
pub fn objective(
    model: &FlowModel,
    batch: &Batch,
    probes: &[Array2<f64>],
    settings: &LossSettings,
    with_grad: bool,
) -> Result<LossEval> {
    let penalty = if settings.alpha == 0.0 && settings.beta == 0.0 {
        Penalty::None
    } else {
        match settings.reg_mode {
            RegMode::Exact => Penalty::Exact,
            RegMode::Hutchinson => {
                if probes.is_empty() {
                    return Err(Error::InvalidArgument(
                        "hutchinson mode needs at least one probe".into(),
                    ));
                }
                Penalty::Hutchinson {
                    split: settings.alpha != settings.beta,
                }
            }
        }
    };
    let chunks = run_chunks(model, batch, probes, settings, penalty, with_grad)?;
    let inv_n = 1.0 / batch.len() as f64;
    let fm = chunks.iter().map(|c| c.fm).sum::<f64>() * inv_n;
    let strain = sum_opt(chunks.iter().map(|c| c.strain)).map(|v| v * inv_n);
    let vort = sum_opt(chunks.iter().map(|c| c.vort)).map(|v| v * inv_n);
    let frob = sum_opt(chunks.iter().map(|c| c.frob)).map(|v| v * inv_n);
    let reg = match (strain, vort, frob) {
        (Some(s), Some(v), _) => settings.alpha * s + settings.beta * v,
        (_, _, Some(f)) => settings.alpha * f,
        _ => 0.0,
    };
    let grad = if with_grad {
        let mut acc = vec![0.0; model.params().param_count()];
        for c in &chunks {
            for (a, g) in acc.iter_mut().zip(c.grad.as_ref().unwrap()) {
                *a += g;
            }
        }
        Some(acc)
    } else {
        None
    };
    Ok(LossEval {
        total: fm + reg,
        fm,
        strain,
        vort,
        grad,
    })
}

/// Mean of `‖v(t, x_t) − u_t‖²` over the batch.
pub fn fm_loss(model: &FlowModel, batch: &Batch, sigma_min: f64) -> Result<f64> {
    let settings = LossSettings {
        alpha: 0.0,
        beta: 0.0,
        sigma_min,
        reg_mode: RegMode::Exact,
        fd_step: 0.0,
        activation_fault: 1.0,
    };
    Ok(objective(model, batch, &[], &settings, false)?.fm)
}

/// Batch means of `‖S‖²_F` and `‖Ω‖²_F` at the interpolated states, from
/// exact Jacobians.
pub fn penalty_exact(model: &FlowModel, batch: &Batch, sigma_min: f64) -> Result<(f64, f64)> {
    let (xt, _) = batch.targets(sigma_min);
    penalty_exact_at(model, &xt, batch.t.view())
}

/// Exact penalty means at explicit states and times, without a tape for
/// direct networks.
pub fn penalty_exact_at(
    model: &FlowModel,
    xs: &Array2<f64>,
    ts: ArrayView1<f64>,
) -> Result<(f64, f64)> {
    let d = model.state_dim();
    let n = xs.nrows();
    let mut input = Array2::zeros((n, d + 1));
    input.slice_mut(s![.., ..d]).assign(xs);
    input.column_mut(d).assign(&ts);
    let starts: Vec<usize> = (0..n).step_by(TRAIN_CHUNK).collect();
    let sums: Vec<(f64, f64)> = starts
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + TRAIN_CHUNK).min(n);
            let (_, cols) = model.local_arrays(&input.slice(s![r0..r1, ..]).to_owned());
            let mut strain = 0.0;
            let mut vort = 0.0;
            for r in 0..r1 - r0 {
                for k in 0..d {
                    strain += cols[k][[r, k]].powi(2);
                    for i in k + 1..d {
                        let (a, b) = (cols[i][[r, k]], cols[k][[r, i]]);
                        strain += 0.5 * (a + b).powi(2);
                        vort += 0.5 * (a - b).powi(2);
                    }
                }
            }
            (strain, vort)
        })
        .collect();
    let (s, v) = sums
        .iter()
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    if !(s.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("Jacobian penalty".into()));
    }
    Ok((s / n as f64, v / n as f64))
}

/// Hutchinson estimates of the batch means of `‖S‖²_F` and `‖Ω‖²_F`.
pub fn penalty_hutchinson(
    model: &FlowModel,
    batch: &Batch,
    probes: &[Array2<f64>],
    sigma_min: f64,
    fd_step: f64,
) -> Result<(f64, f64)> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one probe is required".into(),
        ));
    }
    let settings = LossSettings {
        alpha: 1.0,
        beta: 0.0,
        sigma_min,
        reg_mode: RegMode::Hutchinson,
        fd_step,
        activation_fault: 1.0,
    };
    let mut strain = 0.0;
    let mut vort = 0.0;
    for group in probes.chunks(ESTIMATOR_PROBE_GROUP) {
        let chunks = run_chunks(
            model,
            batch,
            group,
            &settings,
            Penalty::Hutchinson { split: true },
            false,
        )?;
        let w = group.len() as f64;
        strain += w * chunks.iter().map(|c| c.strain.unwrap()).sum::<f64>();
        vort += w * chunks.iter().map(|c| c.vort.unwrap()).sum::<f64>();
    }
    let scale = 1.0 / (probes.len() * batch.len()) as f64;
    Ok((strain * scale, vort * scale))
}
