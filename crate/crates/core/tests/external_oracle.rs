use std::path::Path;

use msfi::ablate::{shapley_mi, AblationPolicy};
use msfi::oracle::{external_batch_predict, CacheKey, ExternalBatchOracle, PredictionOracle};
use msfi::synthgen::{generate_dataset, SynthConfig};
use msfi::tensorio::{load_samples, DatasetManifest};
use msfi::Error;

fn dataset(dir: &Path, n: usize) -> DatasetManifest {
    let cfg = SynthConfig { n_samples: n, image_size: 24, seed: 9, ..SynthConfig::default() };
    generate_dataset(&cfg, dir).unwrap()
}

fn prepared_csv(dir: &Path, manifest: &DatasetManifest, last_row: Option<&str>) -> String {
    let mut text = String::from("sample_id,p0,p1\n");
    let n = manifest.records.len();
    for (i, r) in manifest.records.iter().enumerate() {
        if i + 1 == n {
            if let Some(row) = last_row {
                text.push_str(row);
                text.push('\n');
                continue;
            }
        }
        text.push_str(&format!("{},{},{}\n", r.sample_id, 0.25, 0.75));
    }
    let path = dir.join("prepared.csv");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn copy_stub_fills_cache() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 5);
    let csv = prepared_csv(dir.path(), &manifest, None);
    let cmd = format!("test -f {{input_dir}}/manifest.json && cp '{csv}' {{output_csv}}");
    let cache = external_batch_predict(&manifest, &cmd).unwrap();
    assert_eq!(cache.len(), manifest.records.len());
    for r in &manifest.records {
        let p = cache.get(&CacheKey::new(&r.sample_id, "full", "none")).unwrap();
        assert_eq!(p.probs(), [0.25, 0.75]);
    }
}

#[test]
fn missing_sample_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 4);
    let csv = prepared_csv(dir.path(), &manifest, Some("someone_else,0.5,0.5"));
    let err = external_batch_predict(&manifest, &format!("test -d {{input_dir}} && cp '{csv}' {{output_csv}}")).unwrap_err();
    assert!(matches!(err, Error::External(_)), "{err}");
    assert!(err.to_string().contains("missing sample_id"), "{err}");
}

#[test]
fn probabilities_must_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 3);
    let last = format!("{},0.3,0.5", manifest.records[2].sample_id);
    let csv = prepared_csv(dir.path(), &manifest, Some(&last));
    let err = external_batch_predict(&manifest, &format!("test -d {{input_dir}} && cp '{csv}' {{output_csv}}")).unwrap_err();
    assert!(matches!(err, Error::External(_)), "{err}");
}

#[test]
fn failing_command_reports_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 2);
    let err = external_batch_predict(&manifest, "echo boom >&2; false {input_dir} {output_csv}").unwrap_err();
    assert!(err.to_string().contains("boom"), "{err}");
}

/// The oracle answers from the volume content the tool wrote, so it sees
/// the ablated inputs: class 1 iff any T1C voxel is non-zero.
const READS_VOLUMES: &str = r#"
import json, os, struct, sys
inp, out = sys.argv[1], sys.argv[2]
m = json.load(open(os.path.join(inp, "manifest.json")))
rows = ["sample_id,p0,p1"]
for r in m["records"]:
    with open(os.path.join(inp, r["volume_path"]), "rb") as f:
        header = json.loads(f.readline())
        payload = f.read()
    n = 1
    for d in header["dims"]:
        n *= d
    t1c = header["modalities"].index("T1C")
    vals = struct.unpack("<%df" % n, payload[4 * n * t1c: 4 * n * (t1c + 1)])
    p1 = 1.0 if any(v != 0.0 for v in vals) else 0.0
    rows.append("%s,%r,%r" % (r["sample_id"], 1.0 - p1, p1))
open(out, "w").write("\n".join(rows) + "\n")
"#;

#[test]
fn modality_importance_through_external_oracle() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("oracle.py");
    std::fs::write(&script, READS_VOLUMES).unwrap();
    let data = dir.path().join("data");
    let cfg = SynthConfig {
        n_samples: 6,
        image_size: 16,
        seed: 1,
        class_balance: [0, 1],
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&cfg, &data).unwrap();
    let samples = load_samples(&manifest).unwrap();
    let oracle = ExternalBatchOracle::new(
        format!("python3 '{}' {{input_dir}} {{output_csv}}", script.display()),
        manifest.class_names.clone(),
    )
    .unwrap()
    .with_scratch_root(dir.path());
    assert_eq!(oracle.n_classes(), 2);
    // every sample is HGG, and the oracle says HGG exactly when T1C is kept
    let mi = shapley_mi(&samples, &oracle, AblationPolicy::ZeroWholeModality, None).unwrap();
    assert_eq!(mi.phi, vec![0.0, 1.0, 0.0, 0.0]);
}
