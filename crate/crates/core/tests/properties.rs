use hoi_core::flow::Flow;
use hoi_core::geom::{chamfer_distance, procrustes_align, PointCloud, Vec3};
use hoi_core::relation::{build_latent_space, OffsetVector};
use hoi_core::rigid::fit_rigid;
use hoi_core::rotation::{exp_so3, geodesic_angle, log_so3, matrix_from_sixd, sixd_from_matrix};
use nalgebra::{DMatrix, Matrix3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    // Axis-angle strictly inside the ball of radius pi keeps log unambiguous.
    vec3(1.8)
        .prop_filter("angle below pi", |w| w.norm() < 3.1)
        .prop_map(|w| exp_so3(&w))
}

fn points(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(1.0), min..max)
}

fn spread(ps: &[Vec3]) -> f64 {
    let c = ps.iter().sum::<Vec3>() / ps.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in ps {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov.symmetric_eigen().eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offset_layout_is_object_minus_human(human in points(1, 6), object in points(1, 6)) {
        let x = OffsetVector::from_anchor_positions(&human, &object, 7);
        prop_assert_eq!(x.dim(), 3 * human.len() * object.len());
        for (i, h) in human.iter().enumerate() {
            for (j, o) in object.iter().enumerate() {
                prop_assert!((x.offset(i, j) - (o - h)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn offsets_ignore_a_shared_translation(human in points(1, 5), object in points(1, 5), t in vec3(5.0)) {
        let a = OffsetVector::from_anchor_positions(&human, &object, 0);
        let hs: Vec<Vec3> = human.iter().map(|p| p + t).collect();
        let os: Vec<Vec3> = object.iter().map(|p| p + t).collect();
        let b = OffsetVector::from_anchor_positions(&hs, &os, 0);
        for (u, v) in a.data.iter().zip(&b.data) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn latent_basis_is_orthonormal_and_projection_idempotent(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets: Vec<OffsetVector> = (0..12)
            .map(|_| {
                let data: Vec<f64> = (0..3 * 3 * 2).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
                OffsetVector::new(data, 3, 2, 1).unwrap()
            })
            .collect();
        let space = build_latent_space(&offsets, k, 0).unwrap();
        let gram = space.basis.transpose() * &space.basis;
        prop_assert!((gram - DMatrix::<f64>::identity(k, k)).amax() < 1e-10);
        let once = space.reproject(&space.project(&offsets[0]).unwrap()).unwrap();
        let twice = space.reproject(&space.project(&once).unwrap()).unwrap();
        for (a, b) in once.data.iter().zip(&twice.data) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn exp_log_and_sixd_round_trip(r in rotation()) {
        prop_assert!(geodesic_angle(&exp_so3(&log_so3(&r)), &r) < 1e-9);
        prop_assert!(geodesic_angle(&matrix_from_sixd(&sixd_from_matrix(&r)), &r) < 1e-12);
    }

    #[test]
    fn rigid_fit_recovers_exact_pose(ps in points(4, 12), r in rotation(), t in vec3(3.0)) {
        prop_assume!(spread(&ps) > 1e-3);
        let targets: Vec<Vec3> = ps.iter().map(|p| r * p + t).collect();
        let fit = fit_rigid(&ps, &targets, &vec![1.0; ps.len()]).unwrap();
        prop_assert!(!fit.degenerate);
        prop_assert!(geodesic_angle(&fit.pose.rotation, &r) < 1e-8);
        prop_assert!((fit.pose.translation - t).norm() < 1e-8);
    }

    #[test]
    fn rigid_fit_is_equivariant(ps in points(4, 10), noise in points(10, 11), g in rotation(), s in vec3(2.0)) {
        prop_assume!(spread(&ps) > 1e-3);
        let targets: Vec<Vec3> = ps.iter().zip(&noise).map(|(p, e)| p + 0.1 * e).collect();
        let w = vec![1.0; ps.len()];
        let base = fit_rigid(&ps, &targets, &w).unwrap().pose;
        let moved: Vec<Vec3> = targets.iter().map(|q| g * q + s).collect();
        let fit = fit_rigid(&ps, &moved, &w).unwrap().pose;
        prop_assert!(geodesic_angle(&fit.rotation, &(g * base.rotation)) < 1e-7);
        prop_assert!((fit.translation - (g * base.translation + s)).norm() < 1e-7);
    }

    #[test]
    fn procrustes_recovers_similarity(ps in points(4, 12), r in rotation(), t in vec3(3.0), scale in 0.2f64..5.0) {
        prop_assume!(spread(&ps) > 1e-3);
        let dst: Vec<Vec3> = ps.iter().map(|p| r * p * scale + t).collect();
        let sim = procrustes_align(&PointCloud::new(ps.clone()).unwrap(), &PointCloud::new(dst).unwrap()).unwrap();
        prop_assert!((sim.scale - scale).abs() < 1e-8 * scale);
        prop_assert!(geodesic_angle(&sim.rotation, &r) < 1e-8);
        prop_assert!((sim.translation - t).norm() < 1e-7);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(a in points(1, 20), b in points(1, 20)) {
        let (pa, pb) = (PointCloud::new(a).unwrap(), PointCloud::new(b).unwrap());
        prop_assert_eq!(chamfer_distance(&pa, &pa).unwrap(), 0.0);
        let ab = chamfer_distance(&pa, &pb).unwrap();
        let ba = chamfer_distance(&pb, &pa).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn flow_inverse_undoes_forward(seed in any::<u64>(), dim in 2usize..9, cond_dim in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = Flow::new(dim, cond_dim, 16, 3, &mut rng);
        let z = DMatrix::from_fn(dim, 5, |i, j| ((i * 7 + j * 3) as f64).sin() * 2.0);
        let c = DMatrix::from_fn(cond_dim, 5, |i, j| ((i + 2 * j) as f64).cos());
        let (x, ld_fwd, _) = flow.forward(&z, &c).unwrap();
        let (back, ld_inv, _) = flow.inverse(&x, &c).unwrap();
        prop_assert!((back - z).amax() < 1e-9);
        for (f, i) in ld_fwd.iter().zip(&ld_inv) {
            prop_assert!((f + i).abs() < 1e-9);
        }
    }
}
