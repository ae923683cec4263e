//! Sample-quality and trajectory-geometry metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VelocityField;
use crate::integrate::{
    euler_endpoints, euler_trajectories, euler_with_visitor, Trajectory, REFERENCE_STEPS,
};
use crate::linalg::{distance, frobenius_sq, split_jacobian};
use crate::rng::{normal_points, stream_rng};

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const DEFAULT_SAMPLE_SIZE: usize = 4096;
pub const MIN_PROFILE_GRID: usize = 8;

/// Mean Euclidean distance between paired endpoints.
pub fn mean_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| distance(x, y)).sum::<f64>() / a.len() as f64)
}

/// Euler endpoints at NFE 500, the ground truth of [`l2_at_k`].
pub fn reference_samples(field: &dyn VelocityField, x0s: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    euler_endpoints(field, x0s, REFERENCE_STEPS)
}

/// Mean distance between Euler at `k` steps and precomputed reference
/// endpoints of the same starting points.
pub fn l2_against(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    reference: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    mean_distance(&euler_endpoints(field, x0s, k)?, reference)
}

pub fn l2_at_k(field: &dyn VelocityField, x0s: &[Vec<f64>], k: usize) -> Result<f64> {
    l2_against(field, x0s, &reference_samples(field, x0s)?, k)
}

/// Sliced 2-Wasserstein distance: the mean over `n_proj` random unit
/// directions of the 1D W2 between sorted projections.
pub fn sliced_wasserstein(x: &[Vec<f64>], y: &[Vec<f64>], n_proj: usize, seed: u64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "sliced Wasserstein needs equal sample counts, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() || n_proj == 0 {
        return Err(Error::InvalidArgument(
            "need at least one sample and one projection".into(),
        ));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().chain(y).find(|p| p.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    let mut rng = stream_rng(seed, "projections", 0);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let mut dir = normal_points(&mut rng, 1, d).pop().unwrap();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= len);
        let project = |pts: &[Vec<f64>]| {
            let mut p: Vec<f64> = pts
                .iter()
                .map(|q| q.iter().zip(&dir).map(|(a, b)| a * b).sum())
                .collect();
            p.sort_by(f64::total_cmp);
            p
        };
        let (px, py) = (project(x), project(y));
        let msq = px
            .iter()
            .zip(&py)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / px.len() as f64;
        total += msq.sqrt();
    }
    Ok(total / n_proj as f64)
}

/// Chord length over path length; a path that never moves counts as 1.
pub fn path_straightness(traj: &Trajectory) -> f64 {
    let path: f64 = traj.states.windows(2).map(|w| distance(&w[0], &w[1])).sum();
    if path == 0.0 {
        return 1.0;
    }
    (distance(traj.start(), traj.endpoint()) / path).min(1.0)
}

/// Mean [`path_straightness`] over trajectories.
pub fn straightness(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 1.0;
    }
    trajectories.iter().map(path_straightness).sum::<f64>() / trajectories.len() as f64
}

/// One row of the NFE comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub nfe: usize,
    pub l2: f64,
    pub sw: f64,
    pub straightness: f64,
}

pub const METRIC_HEADER: &str = "nfe,l2,sw,straightness";

pub fn write_metric_rows(rows: &[MetricRow], out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "{METRIC_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e}", r.nfe, r.l2, r.sw, r.straightness)?;
    }
    Ok(())
}

/// Metrics of Euler sampling at `nfe` steps. `reference` holds the NFE-500
/// endpoints of `x0s`; `target` is a sample of the data distribution of the
/// same size.
pub fn metric_row(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    reference: &[Vec<f64>],
    target: &[Vec<f64>],
    nfe: usize,
    n_proj: usize,
    seed: u64,
) -> Result<MetricRow> {
    let trajs = euler_trajectories(field, x0s, nfe)?;
    let ends: Vec<Vec<f64>> = trajs.iter().map(|t| t.endpoint().to_vec()).collect();
    Ok(MetricRow {
        nfe,
        l2: mean_distance(&ends, reference)?,
        sw: sliced_wasserstein(&ends, target, n_proj, seed)?,
        straightness: straightness(&trajs),
    })
}

/// Batch-mean `‖S‖_F` and `‖Ω‖_F` at each time of an Euler grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrainProfile {
    pub t_grid: Vec<f64>,
    pub mean_strain_frob: Vec<f64>,
    pub mean_vort_frob: Vec<f64>,
}

pub fn strain_profile(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    grid_n: usize,
) -> Result<StrainProfile> {
    if grid_n < MIN_PROFILE_GRID {
        return Err(Error::InvalidArgument(format!(
            "profile grid must have at least {MIN_PROFILE_GRID} steps, got {grid_n}"
        )));
    }
    if x0s.is_empty() {
        return Err(Error::InvalidArgument("no starting points".into()));
    }
    let mut profile = StrainProfile {
        t_grid: Vec::with_capacity(grid_n + 1),
        mean_strain_frob: Vec::with_capacity(grid_n + 1),
        mean_vort_frob: Vec::with_capacity(grid_n + 1),
    };
    let count = x0s.len() as f64;
    euler_with_visitor(field, x0s, grid_n, |t, states| {
        let mut s_sum = 0.0;
        let mut w_sum = 0.0;
        for local in field.local_batch(t, states)? {
            let split = split_jacobian(&local.jacobian)?;
            s_sum += frobenius_sq(&split.strain).sqrt();
            w_sum += frobenius_sq(&split.vorticity).sqrt();
        }
        profile.t_grid.push(t);
        profile.mean_strain_frob.push(s_sum / count);
        profile.mean_vort_frob.push(w_sum / count);
        Ok(())
    })?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gaussian_ot_field, gaussian_strain_norm_sq, GaussianOtSpec, LinearField};
    use crate::integrate::initial_points;
    use crate::linalg::Mat;

    fn gaussian(diag: [f64; 2]) -> crate::fields::GaussianOtField {
        gaussian_ot_field(&GaussianOtSpec {
            mean: vec![1.0, -0.5],
            covariance: Mat::from_diag(&diag),
        })
        .unwrap()
    }

    fn traj(points: &[[f64; 2]]) -> Trajectory {
        let n = points.len() - 1;
        Trajectory {
            times: (0..=n).map(|k| k as f64 / n as f64).collect(),
            states: points.iter().map(|p| p.to_vec()).collect(),
        }
    }

    #[test]
    fn l2_vanishes_at_the_reference_resolution() {
        let f = LinearField::new(
            Mat::from_rows(&[[0.2, -1.0], [1.0, 0.1]]).unwrap(),
            vec![0.0, 0.3],
        )
        .unwrap();
        let x0s = initial_points(0, 16, 2);
        assert_eq!(l2_at_k(&f, &x0s, 500).unwrap(), 0.0);
        assert!(l2_at_k(&f, &x0s, 5).unwrap() > l2_at_k(&f, &x0s, 10).unwrap());
    }

    #[test]
    fn gaussian_ot_l2_is_at_machine_precision() {
        let f = gaussian([2.0, 0.5]);
        assert!(l2_at_k(&f, &initial_points(1, 64, 2), 2).unwrap() <= 1e-11);
    }

    #[test]
    fn sliced_wasserstein_basics() {
        let x = initial_points(0, 200, 2);
        let y = initial_points(1, 200, 2);
        assert_eq!(sliced_wasserstein(&x, &x, 16, 0).unwrap(), 0.0);
        let xy = sliced_wasserstein(&x, &y, 16, 3).unwrap();
        let yx = sliced_wasserstein(&y, &x, 16, 3).unwrap();
        assert!((xy - yx).abs() < 1e-15);
        assert!(sliced_wasserstein(&x, &y[..10], 16, 0).is_err());
    }

    #[test]
    fn point_masses_in_one_dimension() {
        let x = vec![vec![0.0]; 5];
        let y = vec![vec![-2.5]; 5];
        assert!((sliced_wasserstein(&x, &y, 7, 0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn translated_gaussians_match_closed_form() {
        // Projecting onto u = (cos θ, sin θ) leaves N(0, 1) vs N(2cos θ, 1),
        // whose W2 is |2cos θ|; its mean over the circle is 4/π.
        let x = initial_points(10, 10_000, 2);
        let y: Vec<Vec<f64>> = initial_points(11, 10_000, 2)
            .into_iter()
            .map(|p| vec![p[0] + 2.0, p[1]])
            .collect();
        let sw = sliced_wasserstein(&x, &y, 128, 0).unwrap();
        let expected = 4.0 / std::f64::consts::PI;
        assert!((sw / expected - 1.0).abs() < 0.1, "{sw} vs {expected}");
    }

    #[test]
    fn straightness_examples() {
        assert!(
            (path_straightness(&traj(&[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]])) - 1.0).abs() < 1e-15
        );
        let corner = path_straightness(&traj(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]));
        assert!((corner - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(path_straightness(&traj(&[[1.0, 1.0], [1.0, 1.0]])), 1.0);
        let back = path_straightness(&traj(&[[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]));
        assert!((back - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ot_trajectories_are_straight() {
        let f = gaussian([3.0, 0.4]);
        let trajs = euler_trajectories(&f, &initial_points(2, 64, 2), 20).unwrap();
        assert!(straightness(&trajs) >= 0.999);
    }

    #[test]
    fn metric_row_on_an_exact_field() {
        let f = gaussian([2.0, 0.5]);
        let x0s = initial_points(5, 128, 2);
        let reference = reference_samples(&f, &x0s).unwrap();
        let row = metric_row(&f, &x0s, &reference, &reference, 4, 32, 0).unwrap();
        assert!(row.l2 < 1e-11 && row.sw < 1e-11);
        let mut buf = Vec::new();
        write_metric_rows(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("nfe,l2,sw,straightness\n4,"));
    }

    #[test]
    fn zero_field_profile_is_zero() {
        let f = LinearField::new(Mat::zeros(2, 2), vec![0.0, 0.0]).unwrap();
        let p = strain_profile(&f, &initial_points(0, 4, 2), 8).unwrap();
        assert_eq!(p.t_grid.len(), 9);
        assert!(p
            .mean_strain_frob
            .iter()
            .chain(&p.mean_vort_frob)
            .all(|&v| v == 0.0));
        assert!(strain_profile(&f, &initial_points(0, 4, 2), 7).is_err());
    }

    #[test]
    fn gaussian_profile_follows_closed_form() {
        // Σ = diag(4, 9): per-axis rates (σ − 1)/((1 − t) + tσ) decay from
        // t = 0, so strain peaks at the start of the path.
        let sigmas = [2.0, 3.0];
        let f = gaussian([4.0, 9.0]);
        let p = strain_profile(&f, &initial_points(3, 16, 2), 16).unwrap();
        for (t, s) in p.t_grid.iter().zip(&p.mean_strain_frob) {
            assert!((s - gaussian_strain_norm_sq(&sigmas, *t).sqrt()).abs() < 1e-12);
        }
        assert!(p.mean_vort_frob.iter().all(|&w| w < 1e-14));
        let mid = p.mean_strain_frob[8];
        assert!(p.mean_strain_frob[0] > mid);
        let peak = p
            .mean_strain_frob
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(peak, p.mean_strain_frob[0]);
    }
}
