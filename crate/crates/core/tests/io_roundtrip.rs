//! Writer/reader closure and fuzz robustness of the file formats.

use proptest::prelude::*;
use slnet_core::io::*;
use slnet_core::localize::{Localization, LocalizationTable};
use slnet_core::slnet::SLNetModel;
use slnet_core::{Error, FlatMatrix, ImageStack, StackMeta};

fn meta(bits: u8) -> StackMeta {
    StackMeta {
        bit_depth: Some(bits),
        ..StackMeta::default()
    }
}

/// Walks the IFD chain of a little-endian file, returning each directory offset.
fn ifd_offsets(bytes: &[u8]) -> Vec<u32> {
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let mut out = Vec::new();
    let mut next = u32_at(4);
    while next != 0 {
        out.push(next);
        let n = u16_at(next as usize) as usize;
        next = u32_at(next as usize + 2 + 12 * n);
    }
    out
}

#[test]
fn three_hundred_pages_chain_in_order() {
    let frames: Vec<f32> = (0..300 * 6).map(|i| (i / 6) as f32).collect();
    let stack = ImageStack::new(3, 2, frames, StackMeta::default()).unwrap();
    let bytes = encode_tiff(&stack, 16).unwrap();
    let offsets = ifd_offsets(&bytes);
    assert_eq!(offsets.len(), 300);
    assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    let back = decode_tiff(&bytes).unwrap();
    for f in [0, 1, 150, 299] {
        assert!(back.frame(f).iter().all(|&v| v == f as f32));
    }
}

#[test]
fn file_round_trip_and_atomic_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stack.tif");
    let a = ImageStack::new(4, 3, (0..24).map(|i| i as f32 * 1000.0).collect(), meta(16)).unwrap();
    write_tiff(&a, &path, 16).unwrap();
    assert_eq!(read_tiff(&path).unwrap(), a);
    let b = ImageStack::zeros(2, 2, 1).with_meta(meta(8));
    write_tiff(&b, &path, 8).unwrap();
    assert_eq!(read_tiff(&path).unwrap(), b);
    assert_eq!(
        std::fs::read_dir(dir.path()).unwrap().count(),
        1,
        "no temp files left behind"
    );
}

#[test]
fn missing_file_names_path() {
    let err = read_tiff(std::path::Path::new("/nonexistent/x.tif")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.tif"));
}

#[test]
fn weights_file_round_trip_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.slnw");
    let model = SLNetModel::new(3, 8, 3, 4).unwrap();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    let probe = FlatMatrix::new(3, 25, (0..75).map(|i| (i as f64 * 0.37).sin().abs()).collect())
        .unwrap()
        .with_shape(3, 5, 5)
        .unwrap();
    assert_eq!(model.forward(&probe).unwrap(), back.forward(&probe).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(decode_model(&bytes), Err(Error::Checksum { .. })));
}

fn sig_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-6 * a.abs().max(b.abs())
}

#[test]
fn thousand_localizations_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut locs: Vec<Localization> = (0..1000)
        .map(|_| Localization {
            frame: rng.random_range(0..500),
            x: rng.random_range(0.0..64.0),
            y: rng.random_range(0.0..64.0),
            sigma: rng.random_range(0.5..3.0),
            intensity: rng.random_range(10.0..1e5),
            fit_residual: 0.0,
        })
        .collect();
    locs.sort_by_key(|l| l.frame);
    let table = LocalizationTable::new(locs, 107.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("locs.csv");
    write_locs_csv(&table, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), LOCS_HEADER);
    let back = read_locs_csv(&path, 107.0).unwrap();
    assert_eq!(back.len(), 1000);
    for (a, b) in table.locs.iter().zip(&back.locs) {
        assert_eq!(a.frame, b.frame);
        assert!(sig_equal(a.x, b.x) && sig_equal(a.y, b.y), "{:?} {:?}", a, b);
        assert!(sig_equal(a.sigma, b.sigma) && sig_equal(a.intensity, b.intensity));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tiff_closure(w in 1usize..9, h in 1usize..9, n in 1usize..5, sixteen in any::<bool>(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bits = if sixteen { 16 } else { 8 };
        let max = if sixteen { 65535u32 } else { 255 };
        let data: Vec<f32> = (0..w * h * n).map(|_| rng.random_range(0..=max) as f32).collect();
        let stack = ImageStack::new(w, h, data, meta(bits)).unwrap();
        let back = decode_tiff(&encode_tiff(&stack, bits).unwrap()).unwrap();
        prop_assert_eq!(back, stack);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_tiff(&bytes);
        let _ = decode_model(&bytes);
    }

    #[test]
    fn valid_header_with_garbage_never_panics(tail in proptest::collection::vec(any::<u8>(), 0..400), be in any::<bool>()) {
        let mut bytes = if be { b"MM\0*".to_vec() } else { b"II*\0".to_vec() };
        bytes.extend_from_slice(&tail);
        let _ = decode_tiff(&bytes);
    }

    #[test]
    fn mutated_files_never_panic(pos in any::<proptest::sample::Index>(), val in any::<u8>(), cut in any::<proptest::sample::Index>()) {
        let stack = ImageStack::new(5, 3, (0..30).map(|i| i as f32).collect(), meta(16)).unwrap();
        let mut bytes = encode_tiff(&stack, 16).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] = val;
        let _ = decode_tiff(&bytes);
        let c = cut.index(bytes.len());
        let _ = decode_tiff(&bytes[..c]);
    }

    #[test]
    fn locs_csv_closure(n in 0usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let locs: Vec<Localization> = (0..n)
            .map(|i| Localization {
                frame: i / 3,
                x: rng.random_range(0.0..100.0),
                y: rng.random_range(0.0..100.0),
                sigma: rng.random_range(0.1..5.0),
                intensity: rng.random_range(1.0..1e6),
                fit_residual: 0.0,
            })
            .collect();
        let t = LocalizationTable::new(locs, 160.0);
        let back = parse_locs_csv(&format_locs_csv(&t).unwrap(), 160.0, "mem").unwrap();
        prop_assert_eq!(back.len(), n);
        for (a, b) in t.locs.iter().zip(&back.locs) {
            prop_assert!(sig_equal(a.x, b.x) && sig_equal(a.y, b.y) && sig_equal(a.intensity, b.intensity));
        }
    }

    #[test]
    fn csv_parser_never_panics(text in "\\PC{0,300}") {
        let _ = parse_locs_csv(&format!("{}\n{}", LOCS_HEADER, text), 100.0, "fuzz");
        let _ = parse_truth_csv(&text, None, "fuzz");
        let _ = parse_config(&text);
    }
}
