use cdr_core::benchmark::{
    export_dataset, generate_benchmark, generate_synthetic_set, import_split, make_split, BenchmarkConfig,
    DataSplit, Domain, DomainSample, SplitSpec, TranslationPreset,
};

fn without_latents(s: &[DomainSample]) -> Vec<DomainSample> {
    s.iter()
        .cloned()
        .map(|mut x| {
            x.latent = None;
            x
        })
        .collect()
}

fn parts(s: &DataSplit) -> [&[DomainSample]; 7] {
    [&s.train_a, &s.train_b, &s.val_a, &s.val_b, &s.test_a, &s.test_b, &s.unused]
}

#[test]
fn imported_split_equals_generated_split() {
    let bench = BenchmarkConfig {
        num_classes: 8,
        samples_per_class_per_domain: 10,
        ..Default::default()
    };
    let spec = SplitSpec {
        overlap_frac: 0.5,
        ..Default::default()
    };
    let ds = generate_benchmark(&bench).unwrap();
    let split = make_split(&ds, &spec).unwrap();
    let t = TranslationPreset::Ideal.config(3);
    let syn_a = generate_synthetic_set(&split.train_b, Domain::A, &t, &ds.world).unwrap();

    for oracle in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(dir.path(), &bench, &spec, &split, Some(&t), &[&syn_a], oracle).unwrap();
        for swap in [false, true] {
            let want = make_split(&ds, &SplitSpec { swap, ..spec.clone() }).unwrap();
            let (manifest, got) = import_split(dir.path(), swap).unwrap();
            assert_eq!(manifest.benchmark, bench);
            assert_eq!(got.categories, want.categories, "swap={swap}");
            for (g, w) in parts(&got).iter().zip(parts(&want)) {
                if oracle {
                    assert_eq!(*g, w, "swap={swap}");
                } else {
                    assert_eq!(*g, without_latents(w).as_slice(), "swap={swap}");
                }
            }
        }
    }
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = import_split(&dir.path().join("nope"), false).unwrap_err();
    assert!(matches!(err, cdr_core::Error::Io { .. }), "{err:?}");
}

#[test]
fn corrupt_samples_name_the_file() {
    let bench = BenchmarkConfig {
        num_classes: 4,
        samples_per_class_per_domain: 10,
        ..Default::default()
    };
    let ds = generate_benchmark(&bench).unwrap();
    let spec = SplitSpec::default();
    let split = make_split(&ds, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(dir.path(), &bench, &spec, &split, None, &[], false).unwrap();
    std::fs::write(dir.path().join("samples.jsonl"), "{not json}\n").unwrap();
    match import_split(dir.path(), false) {
        Err(cdr_core::Error::Parse { path, .. }) => assert!(path.ends_with("samples.jsonl")),
        other => panic!("expected a parse error, got {other:?}"),
    }
}
