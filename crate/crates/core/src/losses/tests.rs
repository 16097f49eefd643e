use super::*;
use crate::geometry::landmarks::LANDMARK_COUNT;
use crate::model::{build_synthetic_model, ModelSpec};
use crate::seed;
use proptest::prelude::*;
use rand::Rng;

fn model(code_len: usize) -> MorphableModel {
    build_synthetic_model(ModelSpec {
        seed: 11,
        code_len,
        resolution: 12,
    })
    .unwrap()
}

fn random_code(rng: &mut impl Rng, k: usize, scale: f64) -> LatentCode {
    DVector::from_fn(k, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = max_abs(analytic.iter().zip(numeric).map(|(a, b)| a - b));
    diff / max_abs(numeric.iter().copied()).max(1e-12)
}

fn mouth_set(sn: Vec3, pg: Vec3, ul: Vec3, ll: Vec3) -> LandmarkSet {
    let mut points = vec![Vec3::zeros(); LANDMARK_COUNT];
    points[index::SUBNASALE] = sn;
    points[index::POGONION] = pg;
    points[index::UPPER_LIP_MID] = ul;
    points[index::LOWER_LIP_MID] = ll;
    LandmarkSet::new(points).unwrap()
}

#[test]
fn mouth_lips_on_line() {
    let l = mouth_set(
        Vec3::zeros(),
        Vec3::new(0.0, -10.0, 0.0),
        Vec3::new(0.0, -3.0, 0.0),
        Vec3::new(0.0, -7.0, 0.0),
    );
    assert_eq!(mouth_convexity_loss(&l).unwrap().value, 0.0);
}

#[test]
fn mouth_hinge_example() {
    let l = mouth_set(
        Vec3::zeros(),
        Vec3::new(0.0, -10.0, 0.0),
        Vec3::new(0.0, -3.0, 2.9),
        Vec3::new(0.0, -7.0, 5.0),
    );
    let m = mouth_convexity_loss(&l).unwrap();
    assert!((m.upper_distance - 2.9).abs() < 1e-12);
    assert!((m.lower_distance - 5.0).abs() < 1e-12);
    assert!((m.value - 4.0).abs() < 1e-12);
}

#[test]
fn mouth_degenerate_line() {
    let p = Vec3::new(1.0, 2.0, 3.0);
    assert!(mouth_convexity_loss(&mouth_set(p, p, Vec3::zeros(), Vec3::x())).is_err());
}

#[test]
fn mouth_dead_zone_has_zero_gradient() {
    let mut rng = seed::rng(1);
    for _ in 0..50 {
        let sn = Vec3::new(0.0, 0.0, 0.0);
        let pg = Vec3::new(0.0, -40.0, 0.0);
        let ul = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-30.0..-5.0), rng.random_range(-2.0..2.0));
        let ll = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-30.0..-5.0), rng.random_range(-2.0..2.0));
        let m = mouth_convexity_loss(&mouth_set(sn, pg, ul, ll)).unwrap();
        assert_eq!(m.value, 0.0);
        assert!(m.gradient.iter().all(|g| *g == Vec3::zeros()));
    }
}

#[test]
fn mouth_gradient_matches_finite_differences() {
    let mut rng = seed::rng(2);
    let h = 1e-4;
    for _ in 0..10 {
        let mut pts: [Vec3; 4] = std::array::from_fn(|_| {
            Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
        });
        let eval = |p: &[Vec3; 4]| mouth_convexity_loss(&mouth_set(p[0], p[1], p[2], p[3])).unwrap();
        let analytic: Vec<f64> = eval(&pts).gradient.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
        let mut numeric = Vec::new();
        for i in 0..4 {
            for c in 0..3 {
                let x = pts[i][c];
                pts[i][c] = x + h;
                let up = eval(&pts).value;
                pts[i][c] = x - h;
                let down = eval(&pts).value;
                pts[i][c] = x;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }
}

fn pair_mesh(points: Vec<Vec3>) -> Mesh {
    Mesh::new(points, Vec::new()).unwrap()
}

fn single_pair() -> SymmetryPairing {
    SymmetryPairing {
        pairs: vec![(0, 1)],
        midline: Vec::new(),
    }
}

#[test]
fn asymmetry_hand_cases() {
    let plane = Plane::new(Vec3::x(), 0.0).unwrap();
    let mesh = pair_mesh(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]);
    let a = asymmetry_loss(&mesh, &single_pair(), &plane, AsymmetryNormal::Fitted).unwrap();
    assert!(a.value.abs() < 1e-15);

    let mesh = pair_mesh(vec![Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]);
    let a = asymmetry_loss(&mesh, &single_pair(), &plane, AsymmetryNormal::Fitted).unwrap();
    assert!(a.distance.abs() < 1e-15);
    assert!((a.value - (1.0 - 2.0 / 5f64.sqrt())).abs() < 1e-12);
}

#[test]
fn asymmetry_skips_coincident_pair() {
    let plane = Plane::new(Vec3::x(), 0.0).unwrap();
    let p = Vec3::new(0.5, 1.0, 2.0);
    let a = asymmetry_loss(&pair_mesh(vec![p, p]), &single_pair(), &plane, AsymmetryNormal::Fitted).unwrap();
    assert_eq!(a.skipped_pairs, 1);
    assert!(a.value.is_finite());
}

#[test]
fn asymmetry_symmetric_face_is_zero() {
    let m = model(16);
    // Only mirror-even modes keep the decoded face symmetric.
    let template = m.template_mesh();
    let mut code = m.zero_code();
    let mut rng = seed::rng(3);
    for k in 0..m.code_len() {
        let mode = m.shape_dirs().column(k);
        let even = m.mirror().iter().enumerate().all(|(i, &j)| {
            (mode[3 * i] + mode[3 * j]).abs() < 1e-9
                && (mode[3 * i + 1] - mode[3 * j + 1]).abs() < 1e-9
                && (mode[3 * i + 2] - mode[3 * j + 2]).abs() < 1e-9
        });
        if even {
            code[k] = rng.random_range(-1.0..1.0);
        }
    }
    assert!(code.iter().any(|&c| c != 0.0));
    let mesh = m.decode_neutral(&code).unwrap();
    assert!(mesh.same_topology(&template));
    let plane = face_plane(&m.landmarks_of(&mesh).unwrap()).unwrap();
    let pairing = build_symmetry_pairing(m.mirror(), m.region_mask(Region::Chin)).unwrap();
    let a = asymmetry_loss(&mesh, &pairing, &plane, AsymmetryNormal::Fitted).unwrap();
    assert!(a.value <= 1e-9, "{}", a.value);
}

#[test]
fn asymmetry_gradient_with_fixed_plane() {
    let mut rng = seed::rng(4);
    let plane = Plane::new(Vec3::new(1.0, 0.1, -0.05), 0.3).unwrap();
    let mut pts: Vec<Vec3> = (0..8)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            Vec3::new(side * rng.random_range(1.0..5.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
        })
        .collect();
    let pairing = SymmetryPairing {
        pairs: vec![(0, 1), (2, 3), (4, 5), (6, 7)],
        midline: Vec::new(),
    };
    for normal in [AsymmetryNormal::Fitted, AsymmetryNormal::WorldX] {
        let eval = |p: &[Vec3]| asymmetry_loss(&pair_mesh(p.to_vec()), &pairing, &plane, normal).unwrap();
        let analytic: Vec<f64> = eval(&pts).gradient.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
        let h = 1e-5;
        let mut numeric = Vec::new();
        for i in 0..pts.len() {
            for c in 0..3 {
                let x = pts[i][c];
                pts[i][c] = x + h;
                let up = eval(&pts).value;
                pts[i][c] = x - h;
                let down = eval(&pts).value;
                pts[i][c] = x;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }
}

#[test]
fn latent_examples() {
    let gt = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
    assert_eq!(latent_code_loss(&gt, &gt).unwrap().0, 0.0);
    let mut pred = gt.clone();
    pred[0] += 1.0;
    let (v, g) = latent_code_loss(&pred, &gt).unwrap();
    assert_eq!(v, 1.0);
    assert_eq!(g, DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0]));
    assert!(matches!(
        latent_code_loss(&DVector::zeros(3), &gt),
        Err(Error::LengthMismatch { .. })
    ));
}

fn patch(rng: &mut impl Rng) -> Mesh {
    let (rows, cols) = (5, 10);
    let mut vertices = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            vertices.push(Vec3::new(c as f64, r as f64, rng.random_range(-0.3..0.3)));
        }
    }
    let mut triangles = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            triangles.push([a, a + 1, a + cols]);
            triangles.push([a + 1, a + cols + 1, a + cols]);
        }
    }
    Mesh::new(vertices, triangles).unwrap()
}

#[test]
fn geometry_translation() {
    let mut rng = seed::rng(5);
    let gt = patch(&mut rng);
    let face = RegionMask::new((0..gt.vertices.len()).collect());
    assert!(geometry_loss(&gt, &gt, &face, 1.0).unwrap().value < 1e-12);
    let pred = Mesh {
        vertices: gt.vertices.iter().map(|v| v + Vec3::z()).collect(),
        ..gt.clone()
    };
    let g = geometry_loss(&pred, &gt, &face, 1.0).unwrap();
    assert!((g.point_term - 1.0).abs() < 1e-12);
    assert!(g.normal_term.abs() < 1e-12);
    assert!((g.value - 1.0).abs() < 1e-12);
}

#[test]
fn geometry_gradient_matches_finite_differences() {
    let mut rng = seed::rng(6);
    let gt = patch(&mut rng);
    let mut pred = gt.clone();
    for v in &mut pred.vertices {
        *v += Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.5..0.5));
    }
    assert_eq!(pred.vertices.len(), 50);
    let face = RegionMask::new((0..50).collect());
    let eval = |p: &Mesh| geometry_loss(p, &gt, &face, 1.0).unwrap();
    let analytic: Vec<f64> = eval(&pred).gradient.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
    let h = 1e-5;
    let mut numeric = Vec::new();
    for i in 0..pred.vertices.len() {
        for c in 0..3 {
            let x = pred.vertices[i][c];
            pred.vertices[i][c] = x + h;
            let up = eval(&pred).value;
            pred.vertices[i][c] = x - h;
            let down = eval(&pred).value;
            pred.vertices[i][c] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    assert!(relative_error(&analytic, &numeric) < 1e-4);
}

#[test]
fn geometry_topology_mismatch() {
    let mut rng = seed::rng(7);
    let a = patch(&mut rng);
    let mut b = a.clone();
    b.triangles.pop();
    let face = RegionMask::new(vec![0, 1]);
    assert!(geometry_loss(&a, &b, &face, 1.0).is_err());
}

fn total_fd(k: usize, cases: usize, seed_value: u64) {
    let m = model(k);
    let weights = LossWeights::default();
    let mut rng = seed::rng(seed_value);
    let h = 1e-5;
    for _ in 0..cases {
        let gt = random_code(&mut rng, k, 1.0);
        let mut pred = random_code(&mut rng, k, 1.0);
        let b = total_loss(&m, &pred, &gt, &weights).unwrap();
        let mut numeric = Vec::with_capacity(k);
        for i in 0..k {
            let x = pred[i];
            pred[i] = x + h;
            let up = total_loss(&m, &pred, &gt, &weights).unwrap().total;
            pred[i] = x - h;
            let down = total_loss(&m, &pred, &gt, &weights).unwrap().total;
            pred[i] = x;
            numeric.push((up - down) / (2.0 * h));
        }
        let err = relative_error(b.gradient.as_slice(), &numeric);
        assert!(err < 1e-4, "K={k}: relative error {err}");
    }
}

#[test]
fn total_gradient_k8() {
    total_fd(8, 5, 8);
}

#[test]
fn total_gradient_k16() {
    total_fd(16, 10, 16);
}

#[test]
fn total_gradient_k64() {
    total_fd(64, 2, 64);
}

#[test]
fn identical_codes_of_symmetric_face() {
    let m = model(16);
    let code = m.zero_code();
    let b = total_loss(&m, &code, &code, &LossWeights::default()).unwrap();
    assert_eq!(b.latent_code, 0.0);
    assert!(b.geometry < 1e-12);
    assert_eq!(b.mouth_convexity, 0.0);
    assert!(b.asymmetry < 1e-9);
    assert!(b.total < 1e-9);
}

#[test]
fn latent_selector() {
    let m = model(16);
    let mut rng = seed::rng(9);
    let gt = random_code(&mut rng, 16, 1.0);
    let pred = random_code(&mut rng, 16, 1.0);
    let b = total_loss(&m, &pred, &gt, &LossWeights::latent_only()).unwrap();
    let (latent, grad) = latent_code_loss(&pred, &gt).unwrap();
    assert_eq!(b.total, latent);
    assert_eq!(b.gradient, grad);
}

#[test]
fn weighted_sum_in_model_units() {
    let m = model(16);
    let mut rng = seed::rng(10);
    let weights = LossWeights {
        alpha_p: 3.0,
        alpha_a: 7.0,
        alpha_f: 0.5,
        alpha_g: 2.0,
        w_normal: 1.5,
        unit_scale: 1.0,
        ..LossWeights::default()
    };
    for _ in 0..5 {
        let gt = random_code(&mut rng, 16, 1.5);
        let pred = random_code(&mut rng, 16, 1.5);
        let b = total_loss(&m, &pred, &gt, &weights).unwrap();
        let sum = weights.alpha_p * b.mouth_convexity
            + weights.alpha_a * b.asymmetry
            + weights.alpha_f * b.latent_code
            + weights.alpha_g * b.geometry;
        assert!((b.total - sum).abs() <= 1e-9 * b.total.max(1.0));
        for term in [b.mouth_convexity, b.asymmetry, b.latent_code, b.geometry, b.total] {
            assert!(term >= 0.0);
        }
    }
}

#[test]
fn evaluator_matches_total_loss() {
    let m = model(16);
    let mut rng = seed::rng(12);
    for weights in [
        LossWeights::default(),
        LossWeights {
            asymmetry_normal: AsymmetryNormal::WorldX,
            asymmetry_reduction: AsymmetryReduction::Sum,
            ..LossWeights::default()
        },
    ] {
        let eval = LossEvaluator::new(&m, weights).unwrap();
        for _ in 0..3 {
            let gt = random_code(&mut rng, 16, 1.0);
            let pred = random_code(&mut rng, 16, 1.0);
            let full = total_loss(&m, &pred, &gt, &weights).unwrap();
            let fast = eval.evaluate(&pred, &eval.target(&gt).unwrap()).unwrap();
            assert!((full.total - fast.total).abs() <= 1e-9 * full.total.max(1e-12));
            assert!(relative_error(fast.gradient.as_slice(), full.gradient.as_slice()) < 1e-9);
        }
    }
}

#[test]
fn rejects_negative_weight() {
    let m = model(8);
    let w = LossWeights {
        alpha_g: -1.0,
        ..LossWeights::default()
    };
    let z = m.zero_code();
    assert!(total_loss(&m, &z, &z, &w).is_err());
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn mouth_nonnegative(sn in vec3(), pg in vec3(), ul in vec3(), ll in vec3()) {
        prop_assume!((sn - pg).norm() > 1e-3);
        let m = mouth_convexity_loss(&mouth_set(sn, pg, ul, ll)).unwrap();
        prop_assert!(m.value >= 0.0);
    }

    #[test]
    fn asymmetry_swap_invariant(p in vec3(), q in vec3(), nx in 0.5..2.0f64, ny in -1.0..1.0f64, d in -2.0..2.0f64) {
        prop_assume!((p - q).norm() > 1e-6);
        let plane = Plane::new(Vec3::new(nx, ny, 0.3), d).unwrap();
        for normal in [AsymmetryNormal::Fitted, AsymmetryNormal::WorldX] {
            let a = asymmetry_loss(&pair_mesh(vec![p, q]), &single_pair(), &plane, normal).unwrap();
            let b = asymmetry_loss(&pair_mesh(vec![q, p]), &single_pair(), &plane, normal).unwrap();
            prop_assert_eq!(a.value, b.value);
            prop_assert!(a.value >= 0.0);
        }
    }

    #[test]
    fn latent_is_squared_distance(v in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..40)) {
        let pred = DVector::from_iterator(v.len(), v.iter().map(|p| p.0));
        let gt = DVector::from_iterator(v.len(), v.iter().map(|p| p.1));
        let expected: f64 = v.iter().map(|(a, b)| (a - b) * (a - b)).sum();
        let (value, _) = latent_code_loss(&pred, &gt).unwrap();
        prop_assert!((value - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn geometry_term_invariances(s in 0u64..1000, w in 0.0..5.0f64, t in vec3()) {
        let mut rng = seed::rng(s);
        let gt = patch(&mut rng);
        let pred = patch(&mut rng);
        let face = RegionMask::new((0..gt.vertices.len()).collect());
        let base = geometry_loss(&pred, &gt, &face, 1.0).unwrap();
        let weighted = geometry_loss(&pred, &gt, &face, w).unwrap();
        prop_assert_eq!(base.point_term, weighted.point_term);
        let moved = Mesh { vertices: pred.vertices.iter().map(|v| v + t).collect(), ..pred.clone() };
        let shifted = geometry_loss(&moved, &gt, &face, 1.0).unwrap();
        prop_assert!((shifted.normal_term - base.normal_term).abs() < 1e-12);
    }
}
