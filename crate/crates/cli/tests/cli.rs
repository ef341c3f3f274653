mod common;

use std::fs;
use std::path::{Path, PathBuf};

use rim_core::eval::read_report;
use rim_core::interchange::ManifestFile;
use rim_core::pipeline::read_assignments;
use rim_core::synth::{WorldSpec, MANIFEST_FILE};
use rim_core::Matcher;

use common::{dir_bytes, rim, rim_ok};

fn synth(dir: &Path, spec: &WorldSpec) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string(spec).unwrap()).unwrap();
    let world = dir.join("world");
    rim_ok(&["synth", "--world-spec", spec_path.to_str().unwrap(), "--out", world.to_str().unwrap()]).unwrap();
    world.join(MANIFEST_FILE)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_on_a_zero_noise_world() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &WorldSpec::orthogonal(3));
    let out = tmp.path().join("out");
    let summary = rim_ok(&["build-refs", "--manifest", s(&manifest), "--out", s(&out)]).unwrap();
    assert!(summary.starts_with("C=4 D=16 K=16 T=4"), "{summary}");
    rim_ok(&["classify", "--manifest", s(&manifest), "--out", s(&out)]).unwrap();
    let text = rim_ok(&["eval", "--manifest", s(&manifest), "--out", s(&out)]).unwrap();
    assert!(text.contains("mIoU"));
    let report = read_report(out.join("report.json")).unwrap();
    assert_eq!(report.miou, 1.0);
    assert!(out.join("report.txt").is_file());
}

#[test]
fn naive_flag_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &WorldSpec::default());
    let out = tmp.path().join("out");
    rim_ok(&["build-refs", "--manifest", s(&manifest), "--out", s(&out)]).unwrap();
    rim_ok(&["classify", "--manifest", s(&manifest), "--out", s(&out), "--naive"]).unwrap();
    let a = read_assignments(&out).unwrap();
    assert_eq!(a.matcher, Matcher::Naive);
    assert!(a.images.iter().flat_map(|i| &i.regions).all(|r| r.agents.is_empty()));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &WorldSpec::default());
    let out = tmp.path().join("out");
    rim_ok(&["build-refs", "--manifest", s(&manifest), "--out", s(&out)]).unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"agents": 3, "epsilon": 0.001}"#).unwrap();
    rim_ok(&["classify", "--manifest", s(&manifest), "--out", s(&out), "--config", s(&cfg), "--agents", "2"]).unwrap();
    match read_assignments(&out).unwrap().matcher {
        Matcher::RelationAware(m) => {
            assert_eq!(m.agent_count, 2);
            assert_eq!(m.epsilon, 0.001);
            assert_eq!(m.subcategory_count, 8);
        }
        other => panic!("{other:?}"),
    }

    fs::write(&cfg, r#"{"agents": 3, "bogus": 1}"#).unwrap();
    let bad = rim(&["classify", "--manifest", s(&manifest), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn build_refs_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(
        tmp.path(),
        &WorldSpec {
            noise_sigma: 0.3,
            subcluster_count: 2,
            subcluster_spread: 0.5,
            ..WorldSpec::default()
        },
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        rim_ok(&["build-refs", "--manifest", s(&manifest), "--out", s(out), "--seed", "5", "--subcats", "3"]).unwrap();
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        rim_ok(&["synth", "--preset", "confusable", "--seed", "2", "--out", s(out)]).unwrap();
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn input_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &WorldSpec::default());
    let out = tmp.path().join("out");

    let unknown = rim(&["classify", "--manifest", s(&manifest), "--out", s(&out), "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = rim(&["build-refs", "--manifest", "/nonexistent/manifest.json", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let agents = rim(&["build-refs", "--manifest", s(&manifest), "--out", s(&out), "--agents", "9"]);
    assert_eq!(agents.status.code(), Some(2));

    // evaluation without predictions
    let eval = rim(&["eval", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(eval.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&eval.stderr).contains("missing prediction"));

    let mut file: ManifestFile = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    file.reference_entries.clear();
    let bare = manifest.with_file_name("bare.json");
    file.write(&bare).unwrap();
    let no_refs = rim(&["build-refs", "--manifest", s(&bare), "--out", s(&out)]);
    assert_eq!(no_refs.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_refs.stderr).contains("no reference entries"));
}

#[test]
fn dimension_mismatch_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let small = synth(&tmp.path().join("small"), &WorldSpec::default());
    let large = synth(
        &tmp.path().join("large"),
        &WorldSpec {
            feature_dim: 24,
            ..WorldSpec::default()
        },
    );
    let out = tmp.path().join("out");
    rim_ok(&["build-refs", "--manifest", s(&large), "--out", s(&out)]).unwrap();
    let res = rim(&["classify", "--manifest", s(&small), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn ablate_writes_reports_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &WorldSpec::orthogonal(1));
    let out = tmp.path().join("out");
    let table = rim_ok(&["ablate", "--manifest", s(&manifest), "--out", s(&out), "--threads", "2"]).unwrap();
    assert_eq!(table.lines().count(), 5);
    for name in ["naive_whole_image", "naive", "relation_aware", "relation_aware_subcategories"] {
        assert_eq!(read_report(out.join(name).join("report.json")).unwrap().miou, 1.0, "{name}");
    }
    assert!(out.join("ablation.json").is_file());
}
