//! Procedural textured test images.
//!
//! Deterministic grayscale scenes with structure at feature scale: oriented
//! gratings, Gaussian blobs, and high-contrast rectangles. Used by the test
//! suites as a stand-in corpus and by the CLI to generate demo data when no
//! real imagery is at hand.

use crate::image::ImageBuf;
use crate::rng::DetRng;

/// Render a grayscale image with blobs, edges, corners and texture at
/// scales a feature detector cares about (roughly 2-30 px). Structure is
/// coarse and high-contrast so it stays visible under severe sensor
/// noise; values saturate by clamping, like an exposed sensor, instead of
/// being rescaled away.
pub fn textured_image(width: usize, height: usize, seed: u64) -> ImageBuf {
    let mut rng = DetRng::derive(seed, &[0x7e57_1a9e]);
    let mut acc = vec![0.5f64; width * height];

    // low-frequency illumination gradient
    let gx = rng.uniform_in(-0.2, 0.2);
    let gy = rng.uniform_in(-0.2, 0.2);
    for y in 0..height {
        for x in 0..width {
            acc[y * width + x] += gx * x as f64 / width as f64 + gy * y as f64 / height as f64;
        }
    }

    // a few oriented gratings for mid-frequency texture
    for _ in 0..3 {
        let theta = rng.uniform_in(0.0, std::f64::consts::PI);
        let wavelength = rng.uniform_in(10.0, 30.0);
        let phase = rng.uniform_in(0.0, std::f64::consts::TAU);
        let amp = rng.uniform_in(0.04, 0.1);
        let (c, s) = (theta.cos(), theta.sin());
        let k = std::f64::consts::TAU / wavelength;
        for y in 0..height {
            for x in 0..width {
                let t = (x as f64 * c + y as f64 * s) * k + phase;
                acc[y * width + x] += amp * t.sin();
            }
        }
    }

    // hard-edged rectangles: corners and long edges
    let area = (width * height) as f64 / (128.0 * 128.0);
    let rects = ((38.0 + rng.below(16) as f64) * area).ceil() as usize;
    for _ in 0..rects {
        let w = 5 + rng.below(14);
        let h = 5 + rng.below(14);
        if width <= w + 1 || height <= h + 1 {
            continue;
        }
        let x0 = rng.below(width - w);
        let y0 = rng.below(height - h);
        let amp = rng.uniform_in(0.22, 0.45) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                acc[y * width + x] += amp;
            }
        }
    }

    // high-contrast disks: blob detections with crisp boundaries
    let disks = ((38.0 + rng.below(16) as f64) * area).ceil() as usize;
    for _ in 0..disks {
        let cx = rng.uniform_in(4.0, width as f64 - 4.0);
        let cy = rng.uniform_in(4.0, height as f64 - 4.0);
        let radius = rng.uniform_in(2.0, 7.0);
        let amp = rng.uniform_in(0.25, 0.5) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        let r = radius.ceil() as isize + 1;
        for dy in -r..=r {
            let y = cy as isize + dy;
            if y < 0 || y >= height as isize {
                continue;
            }
            for dx in -r..=r {
                let x = cx as isize + dx;
                if x < 0 || x >= width as isize {
                    continue;
                }
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                // half-pixel soft rim keeps the edge band-limited
                let cover = (radius - d + 0.5).clamp(0.0, 1.0);
                acc[y as usize * width + x as usize] += amp * cover;
            }
        }
    }

    let mut img = ImageBuf::new(width, height, 1);
    for (o, &v) in img.data.iter_mut().zip(acc.iter()) {
        *o = v.clamp(0.03, 0.97) as f32;
    }
    img
}

/// Write `count` textured images to a directory as 8-bit PNGs, returning
/// their paths. Seeds are derived from `seed` and the image index.
pub fn write_texture_corpus(
    dir: &std::path::Path,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> crate::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = textured_image(width, height, seed.wrapping_add(i as u64).wrapping_mul(0x9e37) ^ (i as u64));
        let path = dir.join(format!("tex_{i:04}.png"));
        img.save_png8(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
