use std::fs;
use std::path::Path;

use rim_core::error::ErrorKind;
use rim_core::interchange::{load_manifest, ManifestFile, Manifest};
use rim_core::pipeline::{
    build_references, classify_images, evaluate, load_predictions, load_references, read_assignments,
    save_predictions, save_references, with_threads, BuildOptions,
};
use rim_core::synth::{generate_world, read_truth, WorldSpec, MANIFEST_FILE};
use rim_core::tensor::IGNORE_LABEL;
use rim_core::{MatchConfig, Matcher};

fn world(spec: &WorldSpec) -> (tempfile::TempDir, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    generate_world(spec, dir.path()).unwrap();
    let manifest = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    (dir, manifest)
}

fn matchers() -> [Matcher; 3] {
    [
        Matcher::Naive,
        Matcher::RelationAware(MatchConfig::default()),
        Matcher::RelationAware(MatchConfig {
            use_subcategories: false,
            ..MatchConfig::default()
        }),
    ]
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn zero_noise_world_is_segmented_perfectly() {
    let (_dir, manifest) = world(&WorldSpec::orthogonal(0));
    let built = build_references(&manifest, &BuildOptions::default()).unwrap();
    for matcher in matchers() {
        let preds = classify_images(&manifest, &built.refs, &matcher, 0.5).unwrap();
        for (pred, test) in preds.iter().zip(&manifest.tests) {
            for (p, g) in pred.label_map.labels().iter().zip(test.ground_truth.labels()) {
                if *g != IGNORE_LABEL {
                    assert_eq!(p, g, "{matcher:?} {}", test.image_id);
                }
            }
        }
        let maps: Vec<_> = preds.into_iter().map(|p| p.label_map).collect();
        let report = evaluate(&manifest, &maps, serde_json::Value::Null).unwrap();
        assert_eq!(report.miou, 1.0, "{matcher:?}");
    }
}

#[test]
fn loaded_world_matches_generator_metadata() {
    let spec = WorldSpec {
        class_count: 3,
        noise_sigma: 0.1,
        ..WorldSpec::default()
    };
    let (dir, manifest) = world(&spec);
    let truth = read_truth(dir.path()).unwrap();
    assert_eq!(truth.spec, spec);
    assert_eq!(manifest.category_count(), spec.class_count);
    assert_eq!(manifest.dim, Some(spec.feature_dim));
    assert_eq!(manifest.tests.len(), spec.test_image_count);
    for (refs, t) in manifest.references.iter().zip(&truth.references) {
        assert_eq!(refs.len(), t.len());
    }
    for (test, t) in manifest.tests.iter().zip(&truth.tests) {
        assert_eq!(test.image_id, t.image_id);
        assert_eq!(test.proposals.len(), t.regions.len());
        for (mask, region) in test.proposals.iter().zip(&t.regions) {
            let r = &region.rect;
            assert_eq!(mask.weight(r.r0, r.c0), 1.0);
            assert_eq!(test.ground_truth.get(r.r1 - 1, r.c1 - 1), region.label);
        }
    }
}

#[test]
fn reference_bundle_round_trips_and_is_reproducible() {
    let spec = WorldSpec {
        subcluster_count: 2,
        subcluster_spread: 0.3,
        noise_sigma: 0.2,
        pixel_noise_sigma: 0.1,
        ..WorldSpec::default()
    };
    let (_dir, manifest) = world(&spec);
    let opts = BuildOptions {
        subcategory_count: 3,
        seed: 11,
        ..BuildOptions::default()
    };
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a");
    let b = out.path().join("b");
    let built = build_references(&manifest, &opts).unwrap();
    save_references(&built, &a).unwrap();
    save_references(&build_references(&manifest, &opts).unwrap(), &b).unwrap();
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));

    let loaded = load_references(&a).unwrap();
    assert_eq!(loaded, built.refs);
    assert_eq!(loaded.categories()[0].subcategories().len(), 3);
}

#[test]
fn subcategory_count_is_capped_by_the_image_count() {
    let (_dir, manifest) = world(&WorldSpec::default());
    let built = build_references(&manifest, &BuildOptions::default()).unwrap();
    let k = manifest.references[0].len();
    assert!(built.refs.categories().iter().all(|c| c.subcategories().len() == k));
    assert_eq!(built.warnings.len(), manifest.category_count());
}

#[test]
fn manifest_without_references_is_an_input_error() {
    let (dir, _) = world(&WorldSpec::default());
    let path = dir.path().join(MANIFEST_FILE);
    let mut file: ManifestFile = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    file.reference_entries.clear();
    file.write(&path).unwrap();
    let manifest = load_manifest(&path).unwrap();
    let err = build_references(&manifest, &BuildOptions::default()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Input, "{err}");
}

#[test]
fn dimension_mismatch_is_a_numeric_error() {
    let (_a, small) = world(&WorldSpec::default());
    let (_b, large) = world(&WorldSpec {
        feature_dim: 24,
        ..WorldSpec::default()
    });
    let refs = build_references(&large, &BuildOptions::default()).unwrap().refs;
    let err = classify_images(&small, &refs, &Matcher::Naive, 0.5).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numeric, "{err}");
}

#[test]
fn predictions_round_trip_through_disk() {
    let spec = WorldSpec {
        noise_sigma: 0.3,
        ..WorldSpec::default()
    };
    let (_dir, manifest) = world(&spec);
    let refs = build_references(&manifest, &BuildOptions::default()).unwrap().refs;
    let matcher = Matcher::RelationAware(MatchConfig::default());
    let preds = classify_images(&manifest, &refs, &matcher, 0.5).unwrap();
    let out = tempfile::tempdir().unwrap();
    save_predictions(out.path(), &preds, &matcher, 0.5).unwrap();

    let maps = load_predictions(&manifest, out.path()).unwrap();
    for (m, p) in maps.iter().zip(&preds) {
        assert_eq!(*m, p.label_map);
    }
    let assignments = read_assignments(out.path()).unwrap();
    assert_eq!(assignments.matcher, matcher);
    assert_eq!(assignments.images.len(), preds.len());
    for (a, p) in assignments.images.iter().zip(&preds) {
        assert_eq!(a.regions, p.regions);
    }

    fs::remove_file(out.path().join("predictions/test_0003.rimt")).unwrap();
    let err = load_predictions(&manifest, out.path()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Input);
}

#[test]
fn classification_is_thread_count_invariant() {
    let (_dir, manifest) = world(&WorldSpec {
        noise_sigma: 0.4,
        pixel_noise_sigma: 0.2,
        subcluster_count: 2,
        subcluster_spread: 0.4,
        ..WorldSpec::default()
    });
    let refs = build_references(&manifest, &BuildOptions::default()).unwrap().refs;
    let matcher = Matcher::RelationAware(MatchConfig::default());
    let one = with_threads(1, || classify_images(&manifest, &refs, &matcher, 0.5)).unwrap().unwrap();
    let many = with_threads(6, || classify_images(&manifest, &refs, &matcher, 0.5)).unwrap().unwrap();
    assert_eq!(one, many);
}

#[test]
fn whole_image_references_differ_from_foreground_references() {
    let (_dir, manifest) = world(&WorldSpec::orthogonal(2));
    let fg = build_references(&manifest, &BuildOptions::default()).unwrap().refs;
    let whole = build_references(
        &manifest,
        &BuildOptions {
            use_foreground_mask: false,
            ..BuildOptions::default()
        },
    )
    .unwrap()
    .refs;
    assert_eq!(fg.background(), whole.background());
    assert_ne!(fg.categories()[0].holistic(), whole.categories()[0].holistic());
}
