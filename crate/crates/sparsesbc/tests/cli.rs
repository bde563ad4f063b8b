//! End-to-end tests of the `sparsesbc` binary: subcommands, config
//! overrides, CSV outputs, and exit codes.

mod common;

use std::path::Path;
use std::process::Command;

use sparsesbc::imaging::{read_image, write_cifar10_batch, write_image, Image};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparsesbc"))
}

/// Writes a small CIFAR-format dataset (all five train batches plus the
/// test batch) into `dir`.
fn write_dataset(dir: &Path, count: usize, seed: u64) {
    let images = common::structured_images(count, seed);
    let per_batch = count.div_ceil(5);
    for (b, chunk) in images.chunks(per_batch).enumerate() {
        let records: Vec<(u8, Image)> = chunk
            .iter()
            .enumerate()
            .map(|(i, img)| ((i % 10) as u8, img.clone()))
            .collect();
        write_cifar10_batch(&dir.join(format!("data_batch_{}.bin", b + 1)), &records).unwrap();
    }
    for b in images.chunks(per_batch).len() + 1..=5 {
        write_cifar10_batch(&dir.join(format!("data_batch_{b}.bin")), &[(0, images[0].clone())])
            .unwrap();
    }
    let test_records: Vec<(u8, Image)> = images
        .iter()
        .take(per_batch)
        .enumerate()
        .map(|(i, img)| ((i % 10) as u8, img.clone()))
        .collect();
    write_cifar10_batch(&dir.join("test_batch.bin"), &test_records).unwrap();
}

fn train_args(data: &Path, out: &Path) -> Vec<String> {
    [
        "train",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--dataset.path",
        data.to_str().unwrap(),
        "dataset.limit=10",
        "arch.conv_channels=4",
        "arch.n_bits=32",
        "train.batch_size=5",
        "train.epochs=2",
        "train.samples=2",
        "train.eval_count=4",
        "train.rx_mode=direct_backprop",
        "train.optimizer=adam",
        "train.learning_rate=0.001",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn train_eval_plot_pipeline() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 10, 1);
    let out = tempfile::tempdir().unwrap();

    // Train (dotted-key flags and trailing key=value overrides together).
    let status = bin()
        .args(train_args(data.path(), out.path()))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.path().join("resolved.cfg").exists());
    assert!(out.path().join("final.ssbc").exists());
    assert!(out.path().join("final_eval.csv").exists());
    let metrics = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    let data_rows = metrics
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .count();
    assert_eq!(data_rows, 2);
    let resolved = std::fs::read_to_string(out.path().join("resolved.cfg")).unwrap();
    assert!(resolved.contains("arch.n_bits = 32"));
    assert!(resolved.contains("run.seed = 11"));

    // Eval sweep: 2 channels x 2 SNRs -> 4 rows; payload column = ceil(32/8).
    let eval_out = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "eval",
            "--checkpoint",
            out.path().join("final.ssbc").to_str().unwrap(),
            "--data",
            data.path().to_str().unwrap(),
            "--split",
            "test",
            "--snrs",
            "0,10",
            "--channels",
            "awgn,pif",
            "--per-image",
            "--out",
            eval_out.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let eval_csv = std::fs::read_to_string(eval_out.path().join("eval.csv")).unwrap();
    let rows: Vec<&str> = eval_csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("channel"))
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",4")));

    // Plot emission from both CSVs.
    let plots = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "plot",
            "--kind",
            "snr_curves",
            "--csv",
            eval_out.path().join("eval.csv").to_str().unwrap(),
            "--out",
            plots.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(plots.path().join("fig_snr_awgn.dat").exists());
    assert!(plots.path().join("fig_snr_pif.dat").exists());

    let status = bin()
        .args([
            "plot",
            "--kind",
            "sparsity_hist",
            "--csv",
            eval_out.path().join("eval_images.csv").to_str().unwrap(),
            "--out",
            plots.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(plots.path().join("fig_sparsity_hist.dat").exists());
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 10, 2);
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    assert!(bin().args(train_args(data.path(), out_a.path())).status().unwrap().success());
    assert!(bin().args(train_args(data.path(), out_b.path())).status().unwrap().success());
    assert_eq!(
        std::fs::read(out_a.path().join("metrics.csv")).unwrap(),
        std::fs::read(out_b.path().join("metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out_a.path().join("final.ssbc")).unwrap(),
        std::fs::read(out_b.path().join("final.ssbc")).unwrap()
    );
}

#[test]
fn video_identity_reconstructs_frames() {
    let frames = tempfile::tempdir().unwrap();
    let originals = common::structured_images(25, 3);
    for (i, img) in originals.iter().enumerate() {
        write_image(img, &frames.path().join(format!("frame_{i:06}.ppm"))).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "video",
            "--frames",
            frames.path().to_str().unwrap(),
            "--gop",
            "12",
            "--mode",
            "signed",
            "--noiseless",
            "--out",
            out.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for (i, orig) in originals.iter().enumerate() {
        let recon = read_image(&out.path().join("recon").join(format!("frame_{i:06}.ppm"))).unwrap();
        assert_eq!(&recon, orig, "frame {i}");
    }
    let csv = std::fs::read_to_string(out.path().join("video.csv")).unwrap();
    let bases: Vec<u32> = csv
        .lines()
        .filter(|l| l.contains(",base,"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(bases, vec![1, 13, 25]);
}

#[test]
fn resume_continues_from_checkpoint() {
    let data = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 10, 4);

    // Reference: 3 epochs in one go.
    let out_full = tempfile::tempdir().unwrap();
    let mut full = train_args(data.path(), out_full.path());
    full.push("train.epochs=3".into());
    assert!(bin().args(&full).status().unwrap().success());

    // Interrupted: 1 epoch, then resume for 2 more.
    let out_part = tempfile::tempdir().unwrap();
    let mut part = train_args(data.path(), out_part.path());
    part.push("train.epochs=1".into());
    assert!(bin().args(&part).status().unwrap().success());
    let mut cont = train_args(data.path(), out_part.path());
    cont.push("train.epochs=3".into());
    cont.push("--resume".into());
    cont.push(out_part.path().join("final.ssbc").to_str().unwrap().into());
    assert!(bin().args(&cont).status().unwrap().success());

    assert_eq!(
        std::fs::read(out_full.path().join("final.ssbc")).unwrap(),
        std::fs::read(out_part.path().join("final.ssbc")).unwrap(),
        "resumed run must land on the uninterrupted parameters"
    );
    let rows = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
            .map(String::from)
            .collect()
    };
    let full_rows = rows(out_full.path());
    let part_rows = rows(out_part.path());
    assert_eq!(full_rows.len(), 3);
    assert_eq!(part_rows, full_rows);
}

#[test]
fn invalid_config_exits_nonzero() {
    let status = bin()
        .args(["train", "--dataset.path", "/nope/never", "train.epochs=1"])
        .status()
        .unwrap();
    assert!(!status.success());

    // Unknown config key is rejected too.
    let status = bin().args(["train", "bogus.key=1"]).status().unwrap();
    assert!(!status.success());
}
