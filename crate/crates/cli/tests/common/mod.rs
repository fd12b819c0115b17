#![allow(dead_code)]

use std::path::Path;

use isrc_core::preprocess::{encode_pgm, ImageRaster};

/// Writes `root/<class>/<set>/<nnn>.pgm`, 16x16 grayscale images whose
/// pattern depends on the class and varies per image.
pub fn write_dataset(root: &Path, classes: usize, sets: usize, images: usize) {
    for c in 0..classes {
        for s in 0..sets {
            let dir = root.join(format!("class{c}")).join(format!("set{s}"));
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..images {
                let k = s * images + i;
                let px = (0..16 * 16)
                    .map(|p| {
                        let (y, x) = (p / 16, p % 16);
                        let base = if c % 2 == 0 { x * 12 } else { y * 12 } + c * 9;
                        let jitter = (x * 7 + y * 13 + k * 31 + (x * y * (k + 3)) % 11) % 23;
                        ((base + jitter) % 256) as f64
                    })
                    .collect();
                let img = ImageRaster::new(16, 16, 1, px).unwrap();
                std::fs::write(dir.join(format!("{i:03}.pgm")), encode_pgm(&img).unwrap()).unwrap();
            }
        }
    }
}

pub fn run(args: &[&str]) -> anyhow::Result<String> {
    let mut out = Vec::new();
    let mut full = vec!["isrc"];
    full.extend_from_slice(args);
    isrc_cli::run_from(full, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}
