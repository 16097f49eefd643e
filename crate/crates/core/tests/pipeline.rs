use nalgebra::{DVector, Rotation3};
use rand::Rng;

use orthoface::dataset::{generate_synthetic_cohort, DeformityConfig};
use orthoface::geometry::{
    build_symmetry_pairing, chamfer_distance, hausdorff_distance, ChamferVariant, RigidTransform, Vec3,
};
use orthoface::losses::{asymmetry_loss, face_plane, mouth_convexity_loss, AsymmetryNormal};
use orthoface::model::{build_synthetic_model, FitConfig, ModelSpec, MorphableModel, Region};
use orthoface::pipeline::predict_scan;
use orthoface::predictor::{train, MlpParams, TrainConfig};
use orthoface::preview::{export_sequence, interpolate_codes};
use orthoface::seed;

fn default_model() -> MorphableModel {
    build_synthetic_model(ModelSpec::default()).unwrap()
}

#[test]
fn cohort_is_clinically_plausible() {
    let m = default_model();
    let cohort = generate_synthetic_cohort(&m, 200, &DeformityConfig::default()).unwrap();
    let pairing = build_symmetry_pairing(m.mirror(), m.region_mask(Region::Chin)).unwrap();
    let asym = |mesh| {
        let plane = face_plane(&m.landmarks_of(mesh).unwrap()).unwrap();
        asymmetry_loss(mesh, &pairing, &plane, AsymmetryNormal::Fitted).unwrap().value
    };
    let mut mouth_better = 0;
    let mut asym_better = 0;
    for p in &cohort {
        let pre = mouth_convexity_loss(&p.pre.landmarks).unwrap().value;
        let post = mouth_convexity_loss(&p.post.landmarks).unwrap().value;
        if post < pre {
            mouth_better += 1;
        }
        if asym(&p.post.mesh) < asym(&p.pre.mesh) {
            asym_better += 1;
        }
    }
    assert!(mouth_better >= 190, "mouth improved in {mouth_better} of 200");
    assert!(asym_better >= 190, "asymmetry improved in {asym_better} of 200");
}

#[test]
fn training_halves_the_loss() {
    let m = default_model();
    let cohort = generate_synthetic_cohort(&m, 128, &DeformityConfig::default()).unwrap();
    let pairs: Vec<_> = cohort.iter().map(|p| (p.pre.code.clone(), p.post.code.clone())).collect();
    let config = TrainConfig {
        epochs: 40,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (_, history) = train(&m, &pairs, &config, None).unwrap();
    let first = history.epochs.first().unwrap().total;
    let last = history.epochs.last().unwrap().total;
    assert!(last <= 0.5 * first, "loss went from {first} to {last}");
}

#[test]
fn prediction_follows_a_moved_scan() {
    let m = build_synthetic_model(ModelSpec {
        seed: 9,
        code_len: 16,
        resolution: 14,
    })
    .unwrap();
    let mut rng = seed::rng(12);
    let mut params = MlpParams::zeros(16, 8);
    for b in params.b2.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let code = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
    let pose = RigidTransform {
        rotation: *Rotation3::from_euler_angles(0.05, -0.1, 0.02).matrix(),
        translation: Vec3::new(3.0, -7.0, 12.0),
    };
    let scan = pose.apply_mesh(&m.decode_neutral(&code).unwrap());
    let landmarks = m.landmarks_of(&scan).unwrap();

    let p = predict_scan(&m, &params, &scan, &landmarks, &FitConfig::landmarks_only(1e-8)).unwrap();
    assert!((&p.fit.code - &code).norm() < 1e-6 * code.norm());
    assert!((&p.predicted_code - (&code + &params.b2)).norm() < 1e-6);
    let expected = pose.apply_mesh(&p.post_model);
    for (a, b) in p.deformed_scan.vertices.iter().zip(&expected.vertices) {
        assert!((a - b).norm() < 1e-6);
    }
    assert_eq!(p.deformed_scan.triangles, scan.triangles);

    let wrong = MlpParams::zeros(8, 8);
    assert!(predict_scan(&m, &wrong, &scan, &landmarks, &FitConfig::default()).is_err());
}

#[test]
fn exported_distances_match_recomputation() {
    let m = build_synthetic_model(ModelSpec {
        seed: 4,
        code_len: 16,
        resolution: 12,
    })
    .unwrap();
    let mut rng = seed::rng(3);
    let a = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
    let frames = interpolate_codes(&m, &a, &b, 5).unwrap();
    let reference = m.decode_neutral(&(&b * 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_sequence(&frames, dir.path(), Some(&reference), ChamferVariant::Root).unwrap();

    let csv = std::fs::read_to_string(dir.path().join("distances.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("frame,hd_mm,cd"));
    for (i, line) in lines.enumerate() {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[0], i as f64);
        let hd = hausdorff_distance(&frames[i].vertices, &reference.vertices).unwrap();
        let cd = chamfer_distance(&frames[i].vertices, &reference.vertices, ChamferVariant::Root).unwrap();
        assert!((fields[1] - hd).abs() <= 1e-6 * hd.max(1.0));
        assert!((fields[2] - cd).abs() <= 1e-6 * cd.max(1.0));

        let sidecar = std::fs::read_to_string(dir.path().join(format!("frame_{i:04}.dist"))).unwrap();
        let d: Vec<f64> = sidecar.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(d.len(), frames[i].vertices.len());
        let max = d.iter().cloned().fold(0.0, f64::max);
        assert!(max <= hd + 1e-9);
    }
    assert!(dir.path().join("frame_0004.obj").is_file());
}
