#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COLORS: [[u8; 3]; 6] = [
    [220, 30, 30],
    [30, 200, 40],
    [30, 30, 220],
    [230, 230, 40],
    [200, 40, 200],
    [40, 210, 210],
];

/// `root/<class>/NNN.png`: solid class colour with per-pixel noise.
pub fn write_class_images(root: &Path, classes: &[&str], per_class: usize, size: u32) {
    for (c, name) in classes.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64((c * 1000 + i) as u64);
            let img = image::RgbImage::from_fn(size, size, |_, _| {
                image::Rgb(COLORS[c % COLORS.len()].map(|v| (v as i32 + rng.random_range(-25..=25)).clamp(0, 255) as u8))
            });
            img.save(dir.join(format!("{i:03}.png"))).unwrap();
        }
    }
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn leafnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafnet")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
