//! Shared fixtures for integration tests: a deterministic structured image
//! generator and CIFAR-format dataset synthesis.

use std::path::PathBuf;

use rand::Rng;
use sparsesbc::imaging::{load_cifar10, write_cifar10_batch, Dataset, Image, Split};
use sparsesbc::rng;

/// Deterministic 32x32x3 images with learnable structure: a two-color
/// gradient background plus solid rectangles.
pub fn structured_images(count: usize, seed: u64) -> Vec<Image> {
    (0..count).map(|i| structured_image(seed, i as u64)).collect()
}

fn structured_image(seed: u64, index: u64) -> Image {
    let mut rng = rng::stream(seed, "synthetic-image", &[index]);
    let c0: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let c1: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let horizontal: bool = rng.random();

    let mut planes = vec![0f64; 3 * 32 * 32];
    for row in 0..32 {
        for col in 0..32 {
            let t = if horizontal { col } else { row } as f64 / 31.0;
            for ch in 0..3 {
                planes[(ch * 32 + row) * 32 + col] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }

    let rects = 1 + (rng.random::<u32>() % 3) as usize;
    for _ in 0..rects {
        let x0 = (rng.random::<u32>() % 24) as usize;
        let y0 = (rng.random::<u32>() % 24) as usize;
        let w = 4 + (rng.random::<u32>() % 12) as usize;
        let h = 4 + (rng.random::<u32>() % 12) as usize;
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for row in y0..(y0 + h).min(32) {
            for col in x0..(x0 + w).min(32) {
                for ch in 0..3 {
                    planes[(ch * 32 + row) * 32 + col] = color[ch];
                }
            }
        }
    }

    let data: Vec<u8> = planes
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Image::new(32, 32, 3, data).expect("32x32x3 by construction")
}

/// Training images for desk-scale runs: the real CIFAR-10 corpus when
/// `CIFAR10_DIR` points at its binary batches, otherwise a deterministic
/// structured dataset written in CIFAR binary format and ingested through
/// the same loader.
pub fn desk_dataset(count: usize) -> Dataset {
    if let Ok(dir) = std::env::var("CIFAR10_DIR") {
        let mut ds = load_cifar10(&PathBuf::from(dir), Split::Train).expect("CIFAR10_DIR set but unreadable");
        ds.truncate(count);
        return ds;
    }
    let dir = std::env::temp_dir().join(format!("sparsesbc-synth-{count}"));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let per_batch = count.div_ceil(5);
    let images = structured_images(count, 0xC1FA_0010);
    for (b, chunk) in images.chunks(per_batch).enumerate() {
        let records: Vec<(u8, Image)> = chunk
            .iter()
            .enumerate()
            .map(|(i, img)| ((i % 10) as u8, img.clone()))
            .collect();
        write_cifar10_batch(&dir.join(format!("data_batch_{}.bin", b + 1)), &records)
            .expect("write batch");
    }
    for b in images.chunks(per_batch).len() + 1..=5 {
        let pad = vec![(0u8, images[0].clone())];
        write_cifar10_batch(&dir.join(format!("data_batch_{b}.bin")), &pad).expect("write batch");
    }
    let mut ds = load_cifar10(&dir, Split::Train).expect("synthetic batches readable");
    ds.truncate(count);
    ds
}
