use std::path::Path;
use std::process::{Command, Output};

use shdl::pipeline::{synthetic_dataset, write_cifar_dir};

const SMALL: &[&str] = &[
    "scatter.j_r1=3",
    "scatter.j_r2=2",
    "pca.patch_size=3",
    "pca.k_l3=8",
    "pca.k_l4=8",
    "pca.count_step=4",
    "pca.log_grid=[0.5, 1.0]",
    "pca.max_patches_per_image=40",
    "ols.budget=4",
    "data.train_per_class=5",
    "data.test_limit=20",
];

fn shdl(args: &[&str], data: &Path, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shdl"));
    cmd.arg(args[0]).arg("--out").arg(out).arg("--threads").arg("2");
    for s in SMALL {
        cmd.arg("--set").arg(s);
    }
    cmd.arg("--set").arg(format!("data.cifar_dir={}", data.display()));
    // Later overrides win, so the caller's come last.
    cmd.args(&args[1..]);
    cmd.output().expect("binary runs")
}

fn cifar_dir(root: &Path) -> std::path::PathBuf {
    let dir = root.join("cifar");
    write_cifar_dir(
        &dir,
        &synthetic_dataset(6, 10, (32, 32), 1),
        &synthetic_dataset(2, 10, (32, 32), 2),
    )
    .unwrap();
    dir
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn train_eval_inspect_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = cifar_dir(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&shdl(&["train", "--seed", "7"], &data, out));
    }
    let ma = std::fs::read(a.join("model.shdl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("model.shdl")).unwrap());

    for out in [&a, &b] {
        let model = out.join("model.shdl");
        ok(&shdl(&["eval", "--model", model.to_str().unwrap()], &data, out));
    }
    let ja = std::fs::read_to_string(a.join("metrics.json")).unwrap();
    assert_eq!(ja, std::fs::read_to_string(b.join("metrics.json")).unwrap());
    assert!(ja.contains("overall_accuracy"));
    assert!(std::fs::read_to_string(a.join("confusion.csv")).unwrap().lines().count() == 11);

    let model = a.join("model.shdl");
    let o = shdl(&["inspect-model", "--model", model.to_str().unwrap()], &data, &a);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("dim svm"));
    assert!(a.join("ols_selection.txt").exists());

    let report = a.join("train_report.json");
    let curves = tmp.path().join("curves");
    ok(&shdl(&["cv-curves", "--report", report.to_str().unwrap()], &data, &curves));
    let csv = std::fs::read_to_string(curves.join("cv_curves").join("R1L1_L3_filters.csv")).unwrap();
    assert!(csv.starts_with("candidate,fold1,fold2,fold3,fold4,fold5,mean"));

    let feats = tmp.path().join("feats");
    ok(&shdl(&["extract-features", "--split", "test"], &data, &feats));
    let hdr = std::fs::read_to_string(feats.join("features.hdr")).unwrap();
    assert!(hdr.contains("count 20"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = cifar_dir(tmp.path());
    let out = tmp.path().join("sweep");
    let o = shdl(&["sweep", "--set", "sweep.sizes=[50]", "--set", "sweep.seeds=[0]"], &data, &out);
    ok(&o);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let cells: Vec<&str> = csv.lines().filter(|l| l.starts_with("50,0,")).collect();
    assert_eq!(cells.len(), 1, "{csv}");
    assert!(cells[0].ends_with(",ok"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(shdl(&["train", "--set", "pca.bogus=1"], tmp.path(), &out)), 2);
    assert_eq!(code(shdl(&["train", "--set", "ols.budget=0"], tmp.path(), &out)), 2);
    // No CIFAR batches in the directory.
    assert_eq!(code(shdl(&["train"], tmp.path(), &out)), 3);

    let bad = tmp.path().join("bad.shdl");
    std::fs::write(&bad, b"SHDLMODL\x01\x00\x00\x00garbage").unwrap();
    assert_eq!(code(shdl(&["inspect-model", "--model", bad.to_str().unwrap()], tmp.path(), &out)), 3);

    let short = tmp.path().join("cifar_short");
    std::fs::create_dir(&short).unwrap();
    for f in ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"] {
        std::fs::write(short.join(f), vec![0u8; 3073 + 7]).unwrap();
    }
    let o = shdl(&["train"], &short, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 3073"));
}
