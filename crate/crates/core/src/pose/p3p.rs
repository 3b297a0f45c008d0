//! Minimal three-point pose solver (Grunert's quartic formulation) and the
//! closed-form absolute orientation used to recover `(R, T)` from it.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::geometry::Pose;

/// Real roots of `c[0]·x⁴ + c[1]·x³ + c[2]·x² + c[3]·x + c[4]`, from the
/// companion matrix eigenvalues, polished with Newton steps.
pub(crate) fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    // Strip vanishing leading coefficients.
    let lead = c.iter().position(|v| v.abs() > 1e-14 * scale).unwrap_or(4);
    let coeffs = &c[lead..];
    let degree = coeffs.len() - 1;
    let mut roots = match degree {
        0 => return Vec::new(),
        1 => vec![-coeffs[1] / coeffs[0]],
        _ => {
            let mut m = Matrix4::<f64>::zeros();
            for i in 0..degree {
                m[(0, i)] = -coeffs[i + 1] / coeffs[0];
                if i + 1 < degree {
                    m[(i + 1, i)] = 1.0;
                }
            }
            let eig = m.fixed_view::<4, 4>(0, 0).into_owned();
            let eig = if degree == 4 {
                eig.complex_eigenvalues().iter().copied().collect::<Vec<_>>()
            } else {
                let sub = eig.view((0, 0), (degree, degree)).into_owned();
                sub.complex_eigenvalues().iter().copied().collect::<Vec<_>>()
            };
            eig.into_iter().filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs())).map(|z| z.re).collect()
        }
    };
    let eval = |x: f64| -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &a in coeffs {
            dp = dp * x + p;
            p = p * x + a;
        }
        (p, dp)
    };
    for r in roots.iter_mut() {
        for _ in 0..8 {
            let (p, dp) = eval(*r);
            if dp.abs() < 1e-300 {
                break;
            }
            let step = p / dp;
            *r -= step;
            if step.abs() <= 1e-15 * (1.0 + r.abs()) {
                break;
            }
        }
    }
    roots
}

/// Rigid transform minimising `Σ‖R·src + T − dst‖²` (Kabsch).
pub(crate) fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Some(Pose { rotation, translation: cd - rotation * cs })
}

/// All poses (world → camera) consistent with three world points and their
/// unit bearing vectors. Returns up to four solutions.
pub fn p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let cos_a = bearings[1].dot(&bearings[2]);
    let cos_b = bearings[0].dot(&bearings[2]);
    let cos_g = bearings[0].dot(&bearings[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * cos_a * cos_a,
        4.0 * (amc * (1.0 - amc) * cos_b - (1.0 - apc) * cos_a * cos_g + 2.0 * c2 / b2 * cos_a * cos_a * cos_b),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cos_b * cos_b + 2.0 * bmc * cos_a * cos_a - 4.0 * apc * cos_a * cos_b * cos_g + 2.0 * bma * cos_g * cos_g),
        4.0 * (-amc * (1.0 + amc) * cos_b + 2.0 * a2 / b2 * cos_g * cos_g * cos_b - (1.0 - apc) * cos_a * cos_g),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cos_g * cos_g,
    ];

    let mut poses = Vec::new();
    for v in quartic_real_roots(coeffs) {
        if !(v > 0.0) {
            continue;
        }
        let denom = 2.0 * (cos_g - v * cos_a);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cos_b * v + 1.0 + amc) / denom;
        if !(u > 0.0) {
            continue;
        }
        let s1_sq = c2 / (1.0 + u * u - 2.0 * u * cos_g);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let cam = [bearings[0] * s1, bearings[1] * (u * s1), bearings[2] * (v * s1)];
        if let Some(pose) = absolute_orientation(world, &cam) {
            if pose.rotation.iter().all(|x| x.is_finite()) && pose.translation.iter().all(|x| x.is_finite()) {
                poses.push(pose);
            }
        }
    }
    poses
}
