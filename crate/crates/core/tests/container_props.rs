use proptest::prelude::*;
use serde_json::json;
use soce_core::soup::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use soce_core::{DType, Error, Tensor, TensorMap};

fn dtype() -> impl Strategy<Value = DType> {
    prop_oneof![Just(DType::BF16), Just(DType::F16), Just(DType::F32), Just(DType::F64)]
}

fn tensor() -> impl Strategy<Value = Tensor> {
    (dtype(), prop::collection::vec(0usize..4, 0..4)).prop_flat_map(|(d, shape)| {
        let numel: usize = shape.iter().product();
        prop::collection::vec(any::<u8>(), numel * d.size())
            .prop_map(move |data| Tensor::new(d, shape.clone(), data).unwrap())
    })
}

fn tensor_map() -> impl Strategy<Value = TensorMap> {
    (
        prop::collection::btree_map("[a-z]{1,6}(\\.[a-z0-9_]{1,5}){0,2}", tensor(), 0..6),
        prop::collection::btree_map("[a-z_.]{1,8}", "[ -~]{0,12}", 0..3),
    )
        .prop_map(|(tensors, meta)| {
            let mut m = TensorMap::new();
            for (name, t) in tensors {
                m.insert(name, t);
            }
            m.metadata_mut().extend(meta);
            m
        })
}

/// Assembles a file from a raw header object and buffer.
fn raw(header: serde_json::Value, buffer: &[u8]) -> Vec<u8> {
    let h = serde_json::to_vec(&header).unwrap();
    let mut out = (h.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(&h);
    out.extend_from_slice(buffer);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bytes_round_trip(m in tensor_map()) {
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn encoding_is_deterministic(m in tensor_map()) {
        prop_assert_eq!(to_bytes(&m), to_bytes(&m.clone()));
        let header_len = u64::from_le_bytes(to_bytes(&m)[..8].try_into().unwrap());
        prop_assert_eq!(header_len % 8, 0);
    }

    #[test]
    fn every_strict_prefix_is_rejected(m in tensor_map(), cut in any::<prop::sample::Index>()) {
        // Every buffer byte belongs to some tensor, so no strict prefix is valid.
        let bytes = to_bytes(&m);
        let len = cut.index(bytes.len());
        prop_assert!(from_bytes(&bytes[..len]).is_err());
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = TensorMap::new();
    m.insert("a.weight", Tensor::from_f64(DType::BF16, vec![2, 2], &[1.0, -2.5, 0.125, 3.0]).unwrap());
    m.insert("b", Tensor::from_f32(vec![3], &[0.1, 0.2, 0.3]).unwrap());
    m.metadata_mut().insert("format".into(), "pt".into());
    let path = dir.path().join("m.safetensors");
    save_checkpoint(&m, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);
    let first = std::fs::read(&path).unwrap();
    save_checkpoint(&load_checkpoint(&path).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn truncated_buffer_rejected() {
    let bytes = raw(json!({"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}), &[0; 12]);
    assert!(matches!(from_bytes(&bytes), Err(Error::TruncatedBuffer(_))));
    assert!(matches!(from_bytes(&[1, 0, 0]), Err(Error::TruncatedBuffer(_))));
}

#[test]
fn overlapping_tensors_rejected() {
    let bytes = raw(
        json!({
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        }),
        &[0; 12],
    );
    assert!(matches!(from_bytes(&bytes), Err(Error::OverlappingTensors { .. })));
}

#[test]
fn unsupported_dtype_rejected() {
    let bytes = raw(json!({"w": {"dtype": "I32", "shape": [1], "data_offsets": [0, 4]}}), &[0; 4]);
    assert!(matches!(from_bytes(&bytes), Err(Error::UnsupportedDtype(_))));
}

#[test]
fn shape_and_extent_must_agree() {
    let bytes = raw(json!({"w": {"dtype": "F16", "shape": [3], "data_offsets": [0, 4]}}), &[0; 4]);
    assert!(from_bytes(&bytes).is_err());
}
