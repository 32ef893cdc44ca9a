use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use refsearch::camera::PoseStream;
use refsearch::render::{passes_roi, roi_fraction};
use refsearch::synth::replay_pose;
use refsearch::{
    batch_classify, generate_primitive, generate_reference_set, render, sample_pose, CameraPose, ClassifierConfig,
    Encoder, EncoderManifest, Execution, MetricsReport, PerturbationSpec, PrimitiveKind, ReferenceIndex, RenderConfig,
};

fn base_pose() -> CameraPose {
    CameraPose::new(Point3::new(1.6, 1.2, 2.4), Point3::origin(), Vector3::y(), 35.0).unwrap()
}

fn spec(seed: u64) -> PerturbationSpec {
    PerturbationSpec { max_yaw: 15.0, max_pitch: 10.0, max_roll: 10.0, distance_jitter: 0.1, seed }
}

fn small_config(per_class: usize) -> RenderConfig {
    RenderConfig { width: 96, height: 96, images_per_class: per_class, ..RenderConfig::default() }
}

fn meshes() -> BTreeMap<String, refsearch::Mesh> {
    [("cube", PrimitiveKind::Cube), ("icosphere", PrimitiveKind::Icosphere), ("cone", PrimitiveKind::Cone)]
        .into_iter()
        .map(|(l, k)| (l.to_owned(), generate_primitive(k, 1)))
        .collect()
}

#[test]
fn generated_sets_are_reproducible_and_inside_the_frame() {
    let meshes = meshes();
    let config = small_config(6);
    let a = generate_reference_set(&meshes, &base_pose(), &spec(21), &config).unwrap();
    let b = generate_reference_set(&meshes, &base_pose(), &spec(21), &config).unwrap();
    assert_eq!(a.len(), 18);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image.raster.pixels(), y.image.raster.pixels());
        assert_eq!(x.file_name(), y.file_name());
    }
    for img in &a {
        let mesh = &meshes[&img.image.label];
        let pose = replay_pose(&base_pose(), &spec(21), &img.image.label, img.index, img.attempt);
        assert_eq!(pose, img.pose);
        assert!(passes_roi(mesh, &pose, &config));
        assert_eq!(roi_fraction(mesh, &pose, config.width, config.height), 1.0);
        let again = render(mesh, &pose, &config, &img.image.label);
        assert_eq!(again.raster.pixels(), img.image.raster.pixels());
    }
    let c = generate_reference_set(&meshes, &base_pose(), &spec(22), &config).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| x.image.raster.pixels() != y.image.raster.pixels()));
}

#[test]
fn rendered_references_classify_held_out_views() {
    let meshes = meshes();
    let config = small_config(12);
    let refs = generate_reference_set(&meshes, &base_pose(), &spec(1), &config).unwrap();
    let tests = generate_reference_set(&meshes, &base_pose(), &spec(2), &RenderConfig { images_per_class: 8, ..config })
        .unwrap();
    let encoder = Encoder::from_manifest(EncoderManifest::toy()).unwrap();
    let ref_images: Vec<_> = refs.iter().map(|g| g.image.raster.clone()).collect();
    let mut index = ReferenceIndex::new();
    for (g, e) in refs.iter().zip(encoder.encode_batch(&ref_images).unwrap()) {
        index.add(e.as_slice(), &g.image.label, None).unwrap();
    }
    let test_images: Vec<_> = tests.iter().map(|g| g.image.raster.clone()).collect();
    let queries = encoder.encode_batch(&test_images).unwrap();
    let predictions = batch_classify(&queries, &index, &ClassifierConfig::default(), Execution::Parallel);
    let truth: Vec<&str> = tests.iter().map(|g| g.image.label.as_str()).collect();
    let predicted: Vec<String> = predictions.into_iter().map(|p| p.unwrap().label).collect();
    let predicted: Vec<&str> = predicted.iter().map(String::as_str).collect();
    let report = MetricsReport::score(&truth, &predicted).unwrap();
    assert!(report.macro_f1 >= 0.9, "macro-F1 {}", report.macro_f1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_poses_stay_within_bounds(seed in any::<u64>(), idx in 0usize..500, label in "[a-z]{1,8}") {
        let s = spec(seed);
        let mut stream = PoseStream::new(&s, &label, idx);
        for _ in 0..4 {
            let d = stream.next_draw();
            prop_assert!(d.yaw.abs() <= s.max_yaw);
            prop_assert!(d.pitch.abs() <= s.max_pitch);
            prop_assert!(d.roll.abs() <= s.max_roll);
            prop_assert!((d.scale - 1.0).abs() <= s.distance_jitter);
        }
        let base = base_pose();
        let pose = sample_pose(&base, &s, &label, idx);
        prop_assert_eq!(pose.target, base.target);
        prop_assert_eq!(pose.vertical_fov, base.vertical_fov);
        let ratio = pose.distance() / base.distance();
        prop_assert!(ratio >= 0.9 - 1e-9 && ratio <= 1.1 + 1e-9);
        prop_assert_eq!(pose, sample_pose(&base, &s, &label, idx));
    }

    #[test]
    fn embeddings_are_deterministic_and_finite(seed in any::<u64>()) {
        let meshes = meshes();
        let pose = sample_pose(&base_pose(), &spec(seed), "cone", 0);
        let img = render(&meshes["cone"], &pose, &small_config(1), "cone");
        let encoder = Encoder::from_manifest(EncoderManifest::toy()).unwrap();
        let a = encoder.encode(&img.raster).unwrap();
        let b = encoder.encode(&img.raster).unwrap();
        prop_assert_eq!(a.dim(), 384);
        prop_assert!(a.as_slice().iter().all(|x| x.is_finite()));
        prop_assert_eq!(a, b);
    }
}
