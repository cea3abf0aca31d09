use std::io::Write;
use std::path::Path;

use proptest::prelude::*;
use splitnn::data::{
    load_cifar_bin, load_csv, load_mnist_idx, partition_horizontal, partition_vertical, synthetic,
    DataError, Dataset, HorizontalStrategy, SyntheticSpec,
};
use splitnn::Tensor32;

fn idx_images(n: u32, rows: u32, cols: u32) -> Vec<u8> {
    let mut b = 0x0000_0803u32.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend((0..n * rows * cols).map(|i| (i % 256) as u8));
    b
}

fn idx_labels(n: u32) -> Vec<u8> {
    let mut b = 0x0000_0801u32.to_be_bytes().to_vec();
    b.extend_from_slice(&n.to_be_bytes());
    b.extend((0..n).map(|i| (i % 10) as u8));
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
    p
}

#[test]
fn idx_ten_samples() {
    let dir = tempfile::tempdir().unwrap();
    let im = write(dir.path(), "im", &idx_images(10, 28, 28));
    let lb = write(dir.path(), "lb", &idx_labels(10));
    let d = load_mnist_idx(&im, &lb).unwrap();
    assert_eq!(d.len(), 10);
    assert_eq!(d.sample_shape(), &[1, 28, 28]);
    assert_eq!(d.labels()[3], 3);
    assert_eq!(d.features.data()[255], 1.0);
    assert_eq!(d.features.data()[1], 1.0 / 255.0);
}

#[test]
fn idx_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let im = write(dir.path(), "im", &idx_images(10, 28, 28));
    let lb = write(dir.path(), "lb", &idx_labels(9));
    assert!(matches!(
        load_mnist_idx(&im, &lb),
        Err(DataError::CountMismatch { images: 10, labels: 9 })
    ));
}

#[test]
fn idx_bad_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let lb = write(dir.path(), "lb", &idx_labels(10));
    let mut bytes = idx_images(10, 28, 28);
    bytes[3] = 0x01;
    let im = write(dir.path(), "bad", &bytes);
    assert!(matches!(load_mnist_idx(&im, &lb), Err(DataError::BadMagic { found: 0x801, .. })));
    let mut short = idx_images(10, 28, 28);
    short.truncate(500);
    let im = write(dir.path(), "short", &short);
    assert!(matches!(load_mnist_idx(&im, &lb), Err(DataError::Format { .. })));
}

#[test]
fn mnist_fixture_loads() {
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let d = load_mnist_idx(
        &fx.join("mnist01-images.idx3-ubyte"),
        &fx.join("mnist01-labels.idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(d.len(), 1000);
    assert!(d.labels().iter().all(|&l| l < 2));
    assert!(d.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn csv_last_column_is_label_and_errors_carry_line() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.csv", b"0.5,1.0,1\n-2,3,0\n");
    let d = load_csv(&ok).unwrap();
    assert_eq!(d.sample_shape(), &[2]);
    assert_eq!(d.labels(), &[1, 0]);
    assert_eq!(d.features.data(), &[0.5, 1.0, -2.0, 3.0]);

    let bad = write(dir.path(), "bad.csv", b"0.5,1.0,1\n-2,x,0\n");
    match load_csv(&bad) {
        Err(DataError::Csv { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cifar_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for label in [3u8, 7] {
        bytes.push(label);
        bytes.extend(std::iter::repeat_n(255u8, 3072));
    }
    let p = write(dir.path(), "data_batch.bin", &bytes);
    let d = load_cifar_bin(&p).unwrap();
    assert_eq!(d.sample_shape(), &[3, 32, 32]);
    assert_eq!(d.labels(), &[3, 7]);
    bytes.pop();
    let p = write(dir.path(), "short.bin", &bytes);
    assert!(load_cifar_bin(&p).is_err());
}

#[test]
fn synthetic_is_seeded() {
    let spec = SyntheticSpec::new(100, 4, 2, 7);
    let a = synthetic(&spec).unwrap();
    assert_eq!(a, synthetic(&spec).unwrap());
    let a_bits: Vec<u32> = a.features.data().iter().map(|v| v.to_bits()).collect();
    let b_bits: Vec<u32> = synthetic(&spec).unwrap().features.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a_bits, b_bits);
    assert_ne!(a, synthetic(&SyntheticSpec::new(100, 4, 2, 8)).unwrap());
}

#[test]
fn equal_split_of_ten_over_three() {
    let d = synthetic(&SyntheticSpec::new(10, 2, 2, 1)).unwrap();
    let shards = partition_horizontal(&d, 3, HorizontalStrategy::Equal, 0).unwrap();
    let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
    assert_eq!(sizes, [4, 3, 3]);
}

#[test]
fn vertical_slices_reassemble() {
    let d = synthetic(&SyntheticSpec::new(30, 10, 3, 2)).unwrap();
    let shards = partition_vertical(&d, &[4, 6]).unwrap();
    assert_eq!(shards[0].sample_shape, [4]);
    assert_eq!(shards[1].sample_shape, [6]);
    let a = shards[0].features(0..30);
    let b = shards[1].features(0..30);
    assert_eq!(Tensor32::concat_axis1(&[&a, &b]).unwrap(), d.features);
    assert!(shards.iter().all(|s| s.labels(0, 0..30) == d.labels()));
    assert!(matches!(partition_vertical(&d, &[4, 5]), Err(DataError::Widths { .. })));
}

#[test]
fn dirichlet_is_reproducible() {
    let d = synthetic(&SyntheticSpec::new(200, 3, 2, 5)).unwrap();
    let s = HorizontalStrategy::Dirichlet { alpha: 0.1 };
    let a = partition_horizontal(&d, 2, s, 9).unwrap();
    let b = partition_horizontal(&d, 2, s, 9).unwrap();
    assert_eq!(a, b);
    let mut all: Vec<usize> = a.iter().flat_map(|s| s.indices.clone()).collect();
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());
}

fn dataset(n: usize) -> Dataset {
    let rows: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32]).collect();
    Dataset::new(Tensor32::from_rows(&rows).unwrap(), (0..n).map(|i| (i % 3) as u16).collect()).unwrap()
}

proptest! {
    #[test]
    fn horizontal_shards_cover_exactly(
        n in 1usize..300,
        clients in 1usize..12,
        seed in any::<u64>(),
        dirichlet in any::<bool>(),
        alpha in 0.05f64..5.0,
    ) {
        let d = dataset(n);
        let strategy = if dirichlet {
            HorizontalStrategy::Dirichlet { alpha }
        } else {
            HorizontalStrategy::Equal
        };
        match partition_horizontal(&d, clients, strategy, seed) {
            Err(DataError::TooManyClients { .. }) => prop_assert!(clients > n),
            Err(e) => prop_assert!(false, "{e}"),
            Ok(shards) => {
                prop_assert_eq!(shards.len(), clients);
                let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for s in &shards {
                    for (k, &i) in s.indices.iter().enumerate() {
                        prop_assert_eq!(s.features(k..k + 1).data()[0], i as f32);
                        prop_assert_eq!(s.labels(0, k..k + 1)[0], (i % 3) as u16);
                    }
                }
                if !dirichlet {
                    let max = shards.iter().map(|s| s.len()).max().unwrap();
                    let min = shards.iter().map(|s| s.len()).min().unwrap();
                    prop_assert!(max - min <= 1);
                }
            }
        }
    }
}
