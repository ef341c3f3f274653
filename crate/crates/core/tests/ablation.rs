use rim_core::ablation::{default_configs, emit_ablation, run_ablation};
use rim_core::eval::read_report;
use rim_core::interchange::load_manifest;
use rim_core::pipeline::BuildOptions;
use rim_core::synth::{generate_world, WorldSpec, MANIFEST_FILE};
use rim_core::MatchConfig;

#[test]
fn orthogonal_world_saturates_every_config() {
    let dir = tempfile::tempdir().unwrap();
    generate_world(&WorldSpec::orthogonal(4), dir.path()).unwrap();
    let manifest = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    let configs = default_configs(&MatchConfig::default());
    let result = run_ablation(&manifest, &BuildOptions::default(), &configs, 0.5).unwrap();
    assert_eq!(result.rows.len(), configs.len());
    for row in &result.rows {
        assert_eq!(row.miou, 1.0, "{}", row.name);
        assert_eq!(row.delta, 0.0);
    }

    let out = tempfile::tempdir().unwrap();
    emit_ablation(&result, out.path()).unwrap();
    for (row, report) in result.rows.iter().zip(&result.reports) {
        let read = read_report(out.path().join(&row.name).join("report.json")).unwrap();
        assert_eq!(&read, report);
    }
    let table = std::fs::read_to_string(out.path().join("ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), configs.len() + 1);
}

#[test]
fn deltas_are_relative_to_the_first_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = WorldSpec {
        test_image_count: 10,
        ..WorldSpec::confusable(1)
    };
    generate_world(&spec, dir.path()).unwrap();
    let manifest = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    let result = run_ablation(
        &manifest,
        &BuildOptions::default(),
        &default_configs(&MatchConfig::default()),
        0.5,
    )
    .unwrap();
    let base = result.rows[0].miou;
    for (row, report) in result.rows.iter().zip(&result.reports) {
        assert_eq!(row.miou, report.miou);
        assert_eq!(row.delta, row.miou - base);
    }
}
