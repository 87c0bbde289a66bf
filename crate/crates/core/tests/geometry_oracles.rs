//! Independent oracles for the uncertainty geometry: brute-force section
//! clouds, Monte-Carlo coverage against the fitted confidence level, and
//! invariance under rigid motions and uniform scaling.

use kinecast_core::geometry::{
    joint_ellipsoid, mahalanobis_sq, point_in_ellipsoid, point_in_segment_boundary,
    segment_boundary, segment_section,
};
use kinecast_core::rng::RngStream;
use kinecast_core::stats::sample_covariance;
use kinecast_core::Tensor;

fn mat3_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Rodrigues rotation about `axis` (unnormalized) by `angle` radians.
fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn gaussian_cloud(
    s: usize,
    mean: [f64; 3],
    map: &[[f64; 3]; 3],
    rng: &mut RngStream,
) -> Tensor {
    let mut out = Tensor::zeros(&[s, 3]);
    for i in 0..s {
        let n = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
        let p = mat3_vec(map, n);
        for k in 0..3 {
            out.set2(i, k, mean[k] + p[k]);
        }
    }
    out
}

fn row3(m: &Tensor, i: usize) -> [f64; 3] {
    [m.at2(i, 0), m.at2(i, 1), m.at2(i, 2)]
}

fn transform_cloud(points: &Tensor, r: &[[f64; 3]; 3], t: [f64; 3]) -> Tensor {
    let s = points.shape()[0];
    let mut out = Tensor::zeros(&[s, 3]);
    for i in 0..s {
        let p = mat3_vec(r, row3(points, i));
        for k in 0..3 {
            out.set2(i, k, p[k] + t[k]);
        }
    }
    out
}

/// Re-derives a segment cross section by intersecting every sample's endpoint
/// line with the transverse plane, then taking the plain sample covariance of
/// the hit points. Must agree with the closed-form moments exactly (the model
/// is bilinear in slope and intercept, so nothing is approximated).
#[test]
fn section_moments_match_intersection_clouds() {
    for seed in [1u64, 2, 9, 40] {
        let mut rng = RngStream::new(seed, 0);
        let s = 24;
        let base_a = [rng.next_in(-5.0, 5.0), rng.next_in(-5.0, 5.0), rng.next_in(-5.0, 5.0)];
        let dir = [rng.next_in(2.0, 4.0), rng.next_in(-1.0, 1.0), rng.next_in(-1.0, 1.0)];
        let base_b = [base_a[0] + dir[0], base_a[1] + dir[1], base_a[2] + dir[2]];
        let mut starts = Tensor::zeros(&[s, 3]);
        let mut ends = Tensor::zeros(&[s, 3]);
        for i in 0..s {
            for k in 0..3 {
                starts.set2(i, k, base_a[k] + 0.25 * rng.next_normal());
                ends.set2(i, k, base_b[k] + 0.25 * rng.next_normal());
            }
        }
        let b = segment_boundary(&starts, &ends, 0.05).unwrap();

        for frac in [0.0, 0.31, 0.57, 1.0] {
            let z = frac * b.length;
            let section = segment_section(&b, z).unwrap();

            // Local coordinates of each endpoint pair, then the line's hit
            // point on the plane at axial position z.
            let mut hits = Tensor::zeros(&[s, 2]);
            for i in 0..s {
                let mut ls = [0.0; 3];
                let mut le = [0.0; 3];
                for a in 0..3 {
                    for k in 0..3 {
                        ls[a] += b.frame.at2(k, a) * (starts.at2(i, k) - b.start[k]);
                        le[a] += b.frame.at2(k, a) * (ends.at2(i, k) - b.start[k]);
                    }
                }
                let dz = le[2] - ls[2];
                for a in 0..2 {
                    let slope = (le[a] - ls[a]) / dz;
                    hits.set2(i, a, ls[a] + slope * (z - ls[2]));
                }
            }
            let cov = sample_covariance(&hits, true).unwrap();
            for a in 0..2 {
                let diff = (cov.mean[a] - section.local_center[a]).abs();
                assert!(diff < 1e-9, "seed {seed} frac {frac}: mean component {a}");
                for c in 0..2 {
                    let got = section.cov.at2(a, c);
                    let want = cov.matrix.at2(a, c);
                    let denom = want.abs().max(1e-9);
                    assert!(
                        (got - want).abs() / denom < 1e-9,
                        "seed {seed} frac {frac}: cov ({a},{c}) {got} vs {want}"
                    );
                }
            }
        }
    }
}

/// alpha is an upper-tail mass: the fitted surface should enclose about
/// `1 - alpha` of fresh draws from the same distribution.
#[test]
fn ellipsoid_coverage_tracks_confidence_level() {
    let mean = [10.0, -5.0, 3.0];
    let map = [[2.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.1, 0.0, 0.5]];
    let mut rng = RngStream::new(77, 0);
    let fit_cloud = gaussian_cloud(500, mean, &map, &mut rng);

    for (alpha, want) in [(0.05, 0.95), (0.5, 0.5)] {
        let e = joint_ellipsoid(&fit_cloud, alpha).unwrap();
        let fresh = 20_000;
        let mut inside = 0usize;
        for _ in 0..fresh {
            let n = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
            let p = mat3_vec(&map, n);
            let p = [mean[0] + p[0], mean[1] + p[1], mean[2] + p[2]];
            if point_in_ellipsoid(&e, p) {
                inside += 1;
            }
        }
        let frac = inside as f64 / fresh as f64;
        assert!(
            (frac - want).abs() < 0.025,
            "alpha {alpha}: covered {frac}, expected about {want}"
        );
    }
}

#[test]
fn ellipsoid_is_equivariant_under_rigid_motion_and_scale() {
    let mut rng = RngStream::new(5, 0);
    let map = [[1.5, 0.3, 0.0], [0.0, 0.8, 0.2], [0.0, 0.0, 0.4]];
    let cloud = gaussian_cloud(60, [1.0, 2.0, -3.0], &map, &mut rng);
    let e = joint_ellipsoid(&cloud, 0.05).unwrap();

    let r = rotation([1.0, 2.0, 3.0], 0.83);
    let t = [4.0, -7.0, 2.0];
    let moved = transform_cloud(&cloud, &r, t);
    let em = joint_ellipsoid(&moved, 0.05).unwrap();

    let want_center = mat3_vec(&r, e.center);
    for k in 0..3 {
        assert!((em.center[k] - (want_center[k] + t[k])).abs() < 1e-9);
        let denom = e.eigenvalues[k].abs().max(1e-12);
        assert!((em.eigenvalues[k] - e.eigenvalues[k]).abs() / denom < 1e-8);
    }
    for _ in 0..40 {
        let p = [rng.next_in(-4.0, 6.0), rng.next_in(-3.0, 7.0), rng.next_in(-8.0, 2.0)];
        let q = mat3_vec(&r, p);
        let q = [q[0] + t[0], q[1] + t[1], q[2] + t[2]];
        assert_eq!(point_in_ellipsoid(&e, p), point_in_ellipsoid(&em, q));
        let (a, b) = (mahalanobis_sq(&e, p), mahalanobis_sq(&em, q));
        assert!((a - b).abs() / a.max(1.0) < 1e-7, "mahalanobis {a} vs {b}");
    }

    // Uniform scaling multiplies variances by the square of the factor.
    let s = 2.7;
    let mut scaled = cloud.clone();
    for v in scaled.data_mut() {
        *v *= s;
    }
    let es = joint_ellipsoid(&scaled, 0.05).unwrap();
    for k in 0..3 {
        assert!((es.center[k] - s * e.center[k]).abs() < 1e-9);
        let denom = e.eigenvalues[k].abs().max(1e-12);
        assert!((es.eigenvalues[k] - s * s * e.eigenvalues[k]).abs() / denom < 1e-7);
    }
    for _ in 0..40 {
        let p = [rng.next_in(-4.0, 6.0), rng.next_in(-3.0, 7.0), rng.next_in(-8.0, 2.0)];
        let q = [s * p[0], s * p[1], s * p[2]];
        assert_eq!(point_in_ellipsoid(&e, p), point_in_ellipsoid(&es, q));
    }
}

#[test]
fn segment_envelope_is_equivariant_under_rigid_motion() {
    let mut rng = RngStream::new(6, 0);
    let s = 30;
    let mut starts = Tensor::zeros(&[s, 3]);
    let mut ends = Tensor::zeros(&[s, 3]);
    for i in 0..s {
        for k in 0..3 {
            starts.set2(i, k, [0.0, 1.0, 0.5][k] + 0.2 * rng.next_normal());
            ends.set2(i, k, [4.0, 2.0, -1.0][k] + 0.3 * rng.next_normal());
        }
    }
    let b = segment_boundary(&starts, &ends, 0.05).unwrap();

    let r = rotation([-2.0, 1.0, 1.0], 1.31);
    let t = [-3.0, 5.0, 1.0];
    let bm = segment_boundary(
        &transform_cloud(&starts, &r, t),
        &transform_cloud(&ends, &r, t),
        0.05,
    )
    .unwrap();

    assert!((bm.length - b.length).abs() < 1e-9);
    for k in 0..3 {
        let want = mat3_vec(&r, b.start);
        assert!((bm.start[k] - (want[k] + t[k])).abs() < 1e-9);
        let want = mat3_vec(&r, b.end);
        assert!((bm.end[k] - (want[k] + t[k])).abs() < 1e-9);
    }

    // The local transverse frame may differ between the two fits, but the
    // envelope as a point set must map along: classification of matched
    // probes agrees everywhere, including out-of-range ones.
    let axis = [
        (b.end[0] - b.start[0]) / b.length,
        (b.end[1] - b.start[1]) / b.length,
        (b.end[2] - b.start[2]) / b.length,
    ];
    for _ in 0..120 {
        let along = rng.next_in(-0.2, 1.2) * b.length;
        let off = [rng.next_normal() * 0.4, rng.next_normal() * 0.4, rng.next_normal() * 0.4];
        let p = [
            b.start[0] + along * axis[0] + off[0],
            b.start[1] + along * axis[1] + off[1],
            b.start[2] + along * axis[2] + off[2],
        ];
        let q = mat3_vec(&r, p);
        let q = [q[0] + t[0], q[1] + t[1], q[2] + t[2]];
        assert_eq!(
            point_in_segment_boundary(&b, p).unwrap(),
            point_in_segment_boundary(&bm, q).unwrap()
        );
    }
}
