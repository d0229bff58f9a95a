use std::path::Path;

use sha2::{Digest, Sha256};

use slalom_core::model::{load_model, ActivationKind, LayerSpec, LinearOp, ModelError};
use slalom_core::quantize::{dequantize, QuantScheme, QuantizedModel};

fn le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// fc 2->2 (identity, bias [0.5, -0.25]), relu, fc 2->1 (weights [2, 1], bias [0.125]).
fn write_fixture(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> std::path::PathBuf {
    let mut blob = Vec::new();
    blob.extend(le(&[1.0, 0.0, 0.0, 1.0]));
    blob.extend(le(&[0.5, -0.25]));
    blob.extend(le(&[2.0, 1.0]));
    blob.extend(le(&[0.125]));
    std::fs::write(dir.join("tiny.bin"), &blob).unwrap();
    let mut manifest = serde_json::json!({
        "format_version": 1,
        "name": "tiny",
        "input_shape": [2],
        "blob": "tiny.bin",
        "blob_bytes": blob.len(),
        "blob_sha256": hex::encode(Sha256::digest(&blob)),
        "layers": [
            { "kind": "fc", "h_in": 2, "h_out": 2,
              "weight": { "offset": 0, "shape": [2, 2] },
              "bias": { "offset": 16, "shape": [2] } },
            { "kind": "activation", "activation": "relu" },
            { "kind": "fc", "h_in": 2, "h_out": 1,
              "weight": { "offset": 24, "shape": [2, 1] },
              "bias": { "offset": 32, "shape": [1] } }
        ]
    });
    edit(&mut manifest);
    let path = dir.join("tiny.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

#[test]
fn hand_written_manifest_loads_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = load_model(&write_fixture(tmp.path(), |_| {})).unwrap();
    assert_eq!(graph.name, "tiny");
    assert_eq!(graph.linear_count(), 2);
    let LayerSpec::Linear(first) = &graph.layers[0] else {
        panic!("expected a linear layer")
    };
    assert_eq!(first.op, LinearOp::Fc { h_in: 2, h_out: 2 });
    assert_eq!(first.weight, vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(first.bias, vec![0.5, -0.25]);
    assert_eq!(graph.layers[1], LayerSpec::Activation(ActivationKind::Relu));

    // x = [1, 0.125]: hidden = relu([1.5, -0.125]) = [1.5, 0], out = 3 + 0.125.
    let q = QuantizedModel::quantize(&graph, QuantScheme::default()).unwrap();
    let x = q.quantize_input(&[1.0, 0.125]).unwrap();
    assert_eq!(x, vec![256, 32]);
    let y = q.forward(&x).unwrap();
    assert_eq!(dequantize(&y, q.scheme.frac_bits()), vec![3.125]);
}

#[test]
fn manifest_errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_fixture(tmp.path(), |m| m["format_version"] = 2.into());
    assert!(matches!(
        load_model(&p),
        Err(ModelError::UnsupportedVersion(2))
    ));

    let p = write_fixture(tmp.path(), |m| m["layers"][1]["kind"] = "dropout".into());
    assert!(matches!(load_model(&p), Err(ModelError::UnknownLayerKind(k)) if k == "dropout"));

    let p = write_fixture(tmp.path(), |m| {
        m["layers"][0]["weight"]["shape"] = serde_json::json!([2, 3])
    });
    assert!(matches!(
        load_model(&p),
        Err(ModelError::ShapeMismatch { layer: 0, .. })
    ));

    let p = write_fixture(tmp.path(), |m| m["blob_sha256"] = "00".into());
    assert!(matches!(load_model(&p), Err(ModelError::CorruptBlob(_))));

    let p = write_fixture(tmp.path(), |m| m["layers"][2]["h_in"] = 3.into());
    assert!(load_model(&p).is_err());

    let p = write_fixture(tmp.path(), |m| m["blob"] = "missing.bin".into());
    assert!(matches!(load_model(&p), Err(ModelError::Io { .. })));
}
