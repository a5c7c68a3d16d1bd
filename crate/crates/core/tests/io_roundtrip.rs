mod common;

use common::{f32_exact, random_corpus, same_bits};
use faar::io::faar_file::{epochs_to_bytes, from_bytes, read_faar, recording_to_bytes, write_epochs, FaarData};
use faar::model::default_channel_names;
use faar::rng::PortableRng;
use faar::{FaarError, Recording};
use ndarray::Array2;

#[test]
fn fifty_random_corpora_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50 {
        let e = random_corpus(seed);
        let path = dir.path().join(format!("c{seed}.faar"));
        write_epochs(&path, &e).unwrap();
        let back = read_faar(&path).unwrap().into_epochs().unwrap();
        assert!(same_bits(&e, &back), "corpus {seed}");
        // re-encoding is byte-stable
        assert_eq!(epochs_to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn recording_round_trip() {
    let mut rng = PortableRng::new(9);
    let data = Array2::from_shape_fn((3, 500), |_| f32_exact(&mut rng, 20.0));
    let r = Recording::new(data, 250.0, default_channel_names(3), "S7", "2").unwrap();
    let back = from_bytes(&recording_to_bytes(&r).unwrap()).unwrap().into_recording().unwrap();
    assert_eq!(r, back);
    assert!(matches!(
        from_bytes(&recording_to_bytes(&r).unwrap()).unwrap().into_epochs(),
        Err(FaarError::HeaderMismatch(_))
    ));
}

/// A valid file split into (header JSON, payload).
fn parts() -> (serde_json::Value, Vec<u8>) {
    let bytes = epochs_to_bytes(&random_corpus(3)).unwrap();
    let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header = serde_json::from_slice(&bytes[10..10 + len]).unwrap();
    (header, bytes[10 + len..].to_vec())
}

fn assemble(header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(header).unwrap();
    let mut out = b"FAAR".to_vec();
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

fn err(bytes: &[u8]) -> FaarError {
    match from_bytes(bytes) {
        Ok(FaarData::Epochs(_)) | Ok(FaarData::Recording(_)) => panic!("corrupt file was accepted"),
        Err(e) => e,
    }
}

#[test]
fn corrupted_file_taxonomy() {
    let (header, payload) = parts();
    let good = assemble(&header, &payload);
    assert!(from_bytes(&good).is_ok());

    assert!(matches!(err(b""), FaarError::BadMagic));
    assert!(matches!(err(b"FAA"), FaarError::BadMagic));
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(err(&magic), FaarError::BadMagic));

    assert!(matches!(err(&good[..8]), FaarError::TruncatedPayload { .. }));
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(err(&version), FaarError::BadVersion(2)));

    let mut long_header = good.clone();
    long_header[6..10].copy_from_slice(&(u32::MAX).to_le_bytes());
    assert!(matches!(err(&long_header), FaarError::TruncatedPayload { .. }));

    let mut not_json = good.clone();
    not_json[10] = b'#';
    assert!(matches!(err(&not_json), FaarError::HeaderMismatch(_)));

    let n = header["shape"][0].as_u64().unwrap();
    let edits: Vec<(&str, serde_json::Value)> = vec![
        ("dtype", "float64".into()),
        ("shape", serde_json::json!([n, 1])),
        ("channel_names", serde_json::json!(["only"])),
        ("epoch_ids", serde_json::json!(vec![0; n as usize + 1])),
        ("kind", "tensor".into()),
    ];
    for (field, value) in edits {
        let mut h = header.clone();
        h[field] = value;
        let e = err(&assemble(&h, &payload));
        assert!(matches!(e, FaarError::HeaderMismatch(_)), "{field}: {e}");
    }

    assert!(matches!(err(&assemble(&header, &payload[..payload.len() - 1])), FaarError::TruncatedPayload { .. }));
    let mut extra = payload.clone();
    extra.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(err(&assemble(&header, &extra)), FaarError::HeaderMismatch(_)));

    let mut nan = payload.clone();
    nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(err(&assemble(&header, &nan)), FaarError::NonFinite(_)));
}

#[test]
fn unrepresentable_values_are_refused_on_write() {
    let mut e = random_corpus(1);
    e.data[[0, 0, 0]] = 1e300;
    assert!(matches!(epochs_to_bytes(&e), Err(FaarError::NonFinite(_))));
}

#[test]
fn missing_file_is_io() {
    assert!(matches!(read_faar("/nonexistent/dir/x.faar"), Err(FaarError::Io(_))));
}
