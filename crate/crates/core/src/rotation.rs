//! SO(3) helpers: Rodrigues exp/log, the continuous 6D representation with
//! Gram-Schmidt decoding (plus its reverse pass), and manifold gradients.

use nalgebra::{Matrix3, Vector3};

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Axis-angle to rotation matrix (Rodrigues).
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix to axis-angle with angle in [0, pi].
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return v * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return v * (theta / (2.0 * theta.sin()));
    }
    // Near pi: axis from the symmetric part, sign fixed by the skew part.
    let s = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let diag = Vector3::new(s[(0, 0)], s[(1, 1)], s[(2, 2)]);
    let i = diag.imax();
    let mut axis = s.column(i).into_owned();
    axis /= axis.norm().max(1e-300);
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Wraps an axis-angle vector so its angle lies in [0, pi].
pub fn canonicalize_axis_angle(w: &Vector3<f64>) -> Vector3<f64> {
    log_so3(&exp_so3(w))
}

/// Angle of R1^T R2.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos loses precision near 0; use the skew magnitude there.
    let sin = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos)
}

/// First two columns, column-major: (r00, r10, r20, r01, r11, r21).
pub fn sixd_from_matrix(r: &Matrix3<f64>) -> [f64; 6] {
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

/// Gram-Schmidt decode of a 6D vector into a proper rotation.
pub fn matrix_from_sixd(a: &[f64]) -> Matrix3<f64> {
    let (b1, b2, b3) = sixd_columns(a);
    Matrix3::from_columns(&[b1, b2, b3])
}

fn sixd_columns(a: &[f64]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let a1 = Vector3::new(a[0], a[1], a[2]);
    let a2 = Vector3::new(a[3], a[4], a[5]);
    // Degenerate inputs (zero or parallel columns) fall back to fixed axes so
    // the decode is always a proper rotation.
    let n1 = a1.norm();
    let b1 = if n1 > 1e-12 { a1 / n1 } else { Vector3::x() };
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    let b2 = if n2 > 1e-12 {
        u / n2
    } else {
        let helper = if b1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let p = helper - b1 * b1.dot(&helper);
        p / p.norm()
    };
    let b3 = b1.cross(&b2);
    (b1, b2, b3)
}

/// Reverse pass of [`matrix_from_sixd`]: maps dL/dR to dL/da.
pub fn sixd_backward(a: &[f64], grad_r: &Matrix3<f64>) -> [f64; 6] {
    let a1 = Vector3::new(a[0], a[1], a[2]);
    let a2 = Vector3::new(a[3], a[4], a[5]);
    let n1 = a1.norm().max(1e-12);
    let b1 = a1 / n1;
    let s = b1.dot(&a2);
    let u = a2 - b1 * s;
    let n2 = u.norm().max(1e-12);
    let b2 = u / n2;

    let g3: Vector3<f64> = grad_r.column(2).into_owned();
    let mut gb1: Vector3<f64> = grad_r.column(0).into_owned() + b2.cross(&g3);
    let gb2: Vector3<f64> = grad_r.column(1).into_owned() + g3.cross(&b1);

    let gu = (gb2 - b2 * b2.dot(&gb2)) / n2;
    let ga2 = gu - b1 * b1.dot(&gu);
    gb1 += -a2 * b1.dot(&gu) - gu * s;
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
    [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
}

/// Gradient w.r.t. a right increment `R exp(d)` at d = 0, given dL/dR.
pub fn right_increment_grad(r: &Matrix3<f64>, grad_r: &Matrix3<f64>) -> Vector3<f64> {
    let m = r.transpose() * grad_r;
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Gradient w.r.t. a left increment `exp(d) R` at d = 0, given dL/dR.
pub fn left_increment_grad(r: &Matrix3<f64>, grad_r: &Matrix3<f64>) -> Vector3<f64> {
    let m = grad_r * r.transpose();
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Projects an arbitrary 3x3 matrix onto the closest proper rotation.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = random_vec(&mut rng, 1.7);
            let r = exp_so3(&w);
            assert_relative_eq!((r.transpose() * r), Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
            let back = log_so3(&r);
            assert_relative_eq!(exp_so3(&back), r, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_near_pi() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for eps in [0.0, 1e-7, 1e-5, 1e-3] {
            let w = axis * (std::f64::consts::PI - eps);
            let r = exp_so3(&w);
            let back = log_so3(&r);
            assert_relative_eq!(exp_so3(&back), r, epsilon = 1e-8);
            assert!(back.norm() <= std::f64::consts::PI + 1e-12);
        }
    }

    #[test]
    fn sixd_roundtrip_and_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let r = exp_so3(&random_vec(&mut rng, 3.0));
            let back = matrix_from_sixd(&sixd_from_matrix(&r));
            assert_relative_eq!(back, r, epsilon = 1e-12);
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = matrix_from_sixd(&a);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-10);
            assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn sixd_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let analytic = sixd_backward(&a, &g);
            for k in 0..6 {
                let h = 1e-6;
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[k] += h;
                am[k] -= h;
                let fp = matrix_from_sixd(&ap).component_mul(&g).sum();
                let fm = matrix_from_sixd(&am).component_mul(&g).sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{fd} vs {}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn increment_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = exp_so3(&random_vec(&mut rng, 2.0));
        let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let right = right_increment_grad(&r, &g);
        let left = left_increment_grad(&r, &g);
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = 1e-6;
            let fr = ((r * exp_so3(&d)).component_mul(&g).sum() - (r * exp_so3(&-d)).component_mul(&g).sum()) / 2e-6;
            let fl = ((exp_so3(&d) * r).component_mul(&g).sum() - (exp_so3(&-d) * r).component_mul(&g).sum()) / 2e-6;
            assert!((fr - right[k]).abs() < 1e-7);
            assert!((fl - left[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn geodesic_small_angles() {
        let w = Vector3::new(1e-9, 0.0, 0.0);
        let a = geodesic_angle(&Matrix3::identity(), &exp_so3(&w));
        assert_relative_eq!(a, 1e-9, max_relative = 1e-6);
    }
}
