//! RANSAC PnP: P3P hypotheses disambiguated by a fourth point, inlier
//! consensus on reprojection error, then Levenberg–Marquardt refinement of
//! the squared reprojection error over the inliers.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::p3p::p3p;
use super::{Corr3D2D, PoseError};
use crate::geometry::{axis_angle, CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpConfig {
    pub iterations: usize,
    /// Inlier threshold in pixels; `None` means 1% of the image diagonal.
    pub reproj_thresh_px: Option<f64>,
    pub seed: u64,
    /// Stop sampling once this confidence of an all-inlier sample is reached.
    pub confidence: f64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self { iterations: 1000, reproj_thresh_px: None, seed: 0, confidence: 0.9999 }
    }
}

impl PnpConfig {
    pub fn threshold(&self, k: &CameraIntrinsics) -> f64 {
        self.reproj_thresh_px.unwrap_or(0.01 * k.diagonal())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    /// Mesh frame → camera frame, up to the object scale.
    pub pose: Pose,
    pub inlier_indices: Vec<usize>,
    pub mean_reprojection_error: f64,
}

/// Pixel distance between the projection of `point` under `pose` and
/// `pixel`; infinite for points at or behind the camera.
pub fn reprojection_error(pose: &Pose, k: &CameraIntrinsics, point: &Vector3<f64>, pixel: &Vector2<f64>) -> f64 {
    let p = pose.transform(point);
    if !(p.z > 0.0) {
        return f64::INFINITY;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    (u - pixel.x).hypot(v - pixel.y)
}

fn bearing(k: &CameraIntrinsics, px: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0).normalize()
}

fn inliers(pose: &Pose, k: &CameraIntrinsics, corrs: &[Corr3D2D], thresh: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut err_sum = 0.0;
    for (i, c) in corrs.iter().enumerate() {
        let e = reprojection_error(pose, k, &c.point, &c.pixel);
        if e <= thresh {
            idx.push(i);
            err_sum += e;
        }
    }
    (idx, err_sum)
}

/// Robust pose from 3D–2D correspondences.
pub fn solve_pnp_ransac(corrs: &[Corr3D2D], k: &CameraIntrinsics, cfg: &PnpConfig) -> Result<PnpResult, PoseError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PoseError::TooFewCorrespondences(n));
    }
    check_not_collinear(corrs)?;
    let thresh = cfg.threshold(k);
    let bearings: Vec<Vector3<f64>> = corrs.iter().map(|c| bearing(k, &c.pixel)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Pose)> = None;
    let mut budget = cfg.iterations.max(1);
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let s = index::sample(&mut rng, n, 4).into_vec();
        let world = [corrs[s[0]].point, corrs[s[1]].point, corrs[s[2]].point];
        if (world[1] - world[0]).cross(&(world[2] - world[0])).norm() < 1e-12 {
            continue;
        }
        let rays = [bearings[s[0]], bearings[s[1]], bearings[s[2]]];
        let check = &corrs[s[3]];
        let Some(candidate) = p3p(&world, &rays)
            .into_iter()
            .map(|p| (reprojection_error(&p, k, &check.point, &check.pixel), p))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
        else {
            continue;
        };
        let (idx, err) = inliers(&candidate, k, corrs, thresh);
        let better = match &best {
            None => true,
            Some((bn, be, _)) => idx.len() > *bn || (idx.len() == *bn && err < *be),
        };
        if better {
            best = Some((idx.len(), err, candidate));
            // Adaptive budget: enough draws to hit an all-inlier sample with `confidence`.
            let w = idx.len() as f64 / n as f64;
            let p_good = w.powi(4);
            if p_good >= 1.0 {
                budget = iter;
            } else if p_good > 0.0 {
                let needed = ((1.0 - cfg.confidence).ln() / (1.0 - p_good).ln()).ceil();
                if needed.is_finite() && needed >= 0.0 {
                    budget = budget.min((needed as usize).max(iter));
                }
            }
        }
    }

    let (count, _, mut pose) = best.ok_or_else(|| PoseError::DegenerateConfiguration("no valid P3P hypothesis".into()))?;
    if count < 4 {
        return Err(PoseError::DegenerateConfiguration(format!("best hypothesis has only {count} inliers")));
    }

    let (mut idx, _) = inliers(&pose, k, corrs, thresh);
    for _ in 0..5 {
        if idx.len() < 4 {
            break;
        }
        pose = refine_pose(&pose, k, corrs, &idx, 50);
        let (next, _) = inliers(&pose, k, corrs, thresh);
        let done = next == idx;
        idx = next;
        if done {
            break;
        }
    }
    if idx.len() < 4 {
        return Err(PoseError::DegenerateConfiguration(format!("refined pose keeps only {} inliers", idx.len())));
    }
    pose = trimmed_refine(pose, k, corrs, &idx);
    let (idx, _) = inliers(&pose, k, corrs, thresh);
    let mean = idx.iter().map(|&i| reprojection_error(&pose, k, &corrs[i].point, &corrs[i].pixel)).sum::<f64>() / idx.len() as f64;
    Ok(PnpResult { pose, inlier_indices: idx, mean_reprojection_error: mean })
}

/// Smallest residual cut-off used when trimming, in pixels.
const MIN_TRIM_PX: f64 = 0.01;

/// Re-refines on the consensus points whose residual is within 3 robust
/// standard deviations (MAD). Contaminants that happen to fall inside the
/// RANSAC threshold otherwise bias the least-squares pose.
fn trimmed_refine(mut pose: Pose, k: &CameraIntrinsics, corrs: &[Corr3D2D], consensus: &[usize]) -> Pose {
    let mut kept = consensus.to_vec();
    for _ in 0..3 {
        let mut res: Vec<f64> = consensus.iter().map(|&i| reprojection_error(&pose, k, &corrs[i].point, &corrs[i].pixel)).collect();
        let residual_of: Vec<(usize, f64)> = consensus.iter().copied().zip(res.iter().copied()).collect();
        res.sort_by(f64::total_cmp);
        let sigma = 1.4826 * res[res.len() / 2];
        let cut = (3.0 * sigma).max(MIN_TRIM_PX);
        let next: Vec<usize> = residual_of.iter().filter(|(_, r)| *r <= cut).map(|(i, _)| *i).collect();
        if next.len() < 4.max(consensus.len() / 2) || next == kept {
            break;
        }
        kept = next;
        pose = refine_pose(&pose, k, corrs, &kept, 50);
    }
    pose
}

fn check_not_collinear(corrs: &[Corr3D2D]) -> Result<(), PoseError> {
    let n = corrs.len() as f64;
    let c = corrs.iter().map(|c| c.point).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in corrs {
        let d = p.point - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen().eigenvalues;
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(PoseError::DegenerateConfiguration("3D points are collinear".into()));
    }
    Ok(())
}

fn sum_sq(pose: &Pose, k: &CameraIntrinsics, corrs: &[Corr3D2D], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| reprojection_error(pose, k, &corrs[i].point, &corrs[i].pixel).powi(2)).sum()
}

/// Levenberg–Marquardt on `Σ‖π(R X + T) − x‖²` with a left-multiplied
/// rotation increment.
pub(crate) fn refine_pose(initial: &Pose, k: &CameraIntrinsics, corrs: &[Corr3D2D], idx: &[usize], max_iter: usize) -> Pose {
    let mut pose = *initial;
    let mut cost = sum_sq(&pose, k, corrs, idx);
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for &i in idx {
            let c = &corrs[i];
            let rx = pose.rotation * c.point;
            let p = rx + pose.translation;
            if !(p.z > 0.0) {
                continue;
            }
            let iz = 1.0 / p.z;
            let r = Vector2::new(k.fx * p.x * iz + k.cx - c.pixel.x, k.fy * p.y * iz + k.cy - c.pixel.y);
            // d(pixel)/d(camera point)
            let jp = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            // d(camera point)/d(omega) = -[R X]x, d/dT = I
            let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
            let jw = jp * (-skew);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jw);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(delta[0], delta[1], delta[2]);
            let dr = if omega.norm() > 0.0 { axis_angle(&omega, omega.norm()) } else { Matrix3::identity() };
            let candidate = Pose { rotation: dr * pose.rotation, translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]) };
            let new_cost = sum_sq(&candidate, k, corrs, idx);
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(1e-300);
                pose = candidate;
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    // Re-orthonormalise to counter drift from repeated increments.
    let svd = pose.rotation.svd(true, true);
    if let (Some(u), Some(vt)) = (svd.u, svd.v_t) {
        pose.rotation = u * vt;
    }
    pose
}
