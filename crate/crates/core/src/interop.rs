//! On-disk formats and the export bridge to external SfM tooling.
//!
//! All binary formats are little-endian with 32-bit float payloads.
//!
//! **Feature file (`LBFT`)**: magic `LBFT`, version u32, count u32,
//! descriptor_dim u32, width u32, height u32, image_id (u16 length +
//! UTF-8), then per keypoint (x, y, scale, score) as f32, then a
//! count x descriptor_dim f32 block.
//!
//! **Flow file (`LBFW`)**: 16-byte header — magic `LBFW`, version u32,
//! height u32, width u32 — then height x width x 2 f32 target coordinates
//! (x, y) row-major, then height x width validity bytes (1 = valid).
//!
//! **Burst directory**: frames as lossless 16-bit PNGs `frame_{k:02}.png`
//! plus `metadata.txt` (common index, per-frame offsets, noise variance,
//! warp homography rows, seed) with full-precision decimal floats.
//!
//! **SfM text export**: the external tool's feature import format — header
//! `<count> <dim>`, then one line per keypoint `x y scale orientation`
//! followed by the descriptor quantized to unsigned bytes
//! (`q = round((d + 1) * 127.5)` clamped to [0, 255]). Orientation is
//! fixed at 0: descriptors here carry no orientation.

use crate::burstsynth::{Burst, FlowMap};
use crate::error::{Error, Result};
use crate::extractor::{FeatureSet, Keypoint};
use crate::geometry::Homography;
use crate::image::ImageBuf;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const FEATURE_MAGIC: [u8; 4] = *b"LBFT";
pub const FLOW_MAGIC: [u8; 4] = *b"LBFW";
pub const FORMAT_VERSION: u32 = 1;

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated file: needed {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(
                self.path,
                format!(
                    "bad magic {:02x?}, expected {:02x?} ({})",
                    got,
                    magic,
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(
                self.path,
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "trailing data: expected {} bytes total, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Serialize a feature set to the `LBFT` binary format.
pub fn write_feature_file(fs: &FeatureSet, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(
        26 + fs.image_id.len() + fs.len() * (16 + 4 * fs.descriptor_dim),
    );
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(fs.len() as u32).to_le_bytes());
    out.extend_from_slice(&(fs.descriptor_dim as u32).to_le_bytes());
    out.extend_from_slice(&(fs.width as u32).to_le_bytes());
    out.extend_from_slice(&(fs.height as u32).to_le_bytes());
    let id = fs.image_id.as_bytes();
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    for kp in &fs.keypoints {
        out.extend_from_slice(&(kp.x as f32).to_le_bytes());
        out.extend_from_slice(&(kp.y as f32).to_le_bytes());
        out.extend_from_slice(&(kp.scale as f32).to_le_bytes());
        out.extend_from_slice(&kp.score.to_le_bytes());
    }
    for d in &fs.descriptors {
        out.extend_from_slice(&d.to_le_bytes());
    }
    write_atomic(path, &out)
}

/// Deserialize an `LBFT` feature file.
pub fn read_feature_file(path: &Path) -> Result<FeatureSet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { buf: &buf, pos: 0, path };
    r.expect_magic(&FEATURE_MAGIC)?;
    r.expect_version()?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let id_len = r.u16()? as usize;
    let image_id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| Error::format(path, "image id is not utf-8"))?;
    let mut keypoints = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.f32()? as f64;
        let y = r.f32()? as f64;
        let scale = r.f32()? as f64;
        let score = r.f32()?;
        keypoints.push(Keypoint { x, y, scale, score });
    }
    let mut descriptors = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        descriptors.push(r.f32()?);
    }
    r.expect_end()?;
    Ok(FeatureSet {
        keypoints,
        descriptors,
        descriptor_dim: dim,
        image_id,
        width,
        height,
    })
}

/// Serialize a flow map to the `LBFW` binary format (coordinates stored as
/// f32).
pub fn write_flow_file(flow: &FlowMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + flow.vectors.len() * 9);
    out.extend_from_slice(&FLOW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    for v in &flow.vectors {
        out.extend_from_slice(&(v[0] as f32).to_le_bytes());
        out.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    for &ok in &flow.valid {
        out.push(u8::from(ok));
    }
    write_atomic(path, &out)
}

/// Deserialize an `LBFW` flow file.
pub fn read_flow_file(path: &Path) -> Result<FlowMap> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { buf: &buf, pos: 0, path };
    r.expect_magic(&FLOW_MAGIC)?;
    r.expect_version()?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let mut vectors = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let x = r.f32()? as f64;
        let y = r.f32()? as f64;
        vectors.push([x, y]);
    }
    let mut valid = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let b = r.take(1)?[0];
        valid.push(b != 0);
    }
    r.expect_end()?;
    Ok(FlowMap { width, height, vectors, valid })
}

/// Write a burst as a directory of lossless frames plus metadata.
pub fn write_burst_dir(burst: &Burst, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, frame) in burst.frames.iter().enumerate() {
        frame.save_png16(&dir.join(format!("frame_{k:02}.png")))?;
    }
    let mut meta = String::new();
    let _ = writeln!(meta, "format: {FORMAT_VERSION}");
    let _ = writeln!(meta, "frames: {}", burst.frames.len());
    let _ = writeln!(meta, "common_index: {}", burst.common_index);
    let _ = writeln!(meta, "channels: {}", burst.frames[0].channels);
    let _ = writeln!(meta, "noise_variance: {}", burst.noise_variance);
    let _ = writeln!(meta, "seed: {}", burst.seed);
    let offsets: Vec<String> = burst
        .intra_offsets
        .iter()
        .map(|o| format!("{} {}", o[0], o[1]))
        .collect();
    let _ = writeln!(meta, "offsets: {}", offsets.join("; "));
    let rows = burst.warp.rows();
    let flat: Vec<String> = rows.iter().flatten().map(|v| format!("{v}")).collect();
    let _ = writeln!(meta, "homography: {}", flat.join(" "));
    std::fs::write(dir.join("metadata.txt"), meta).map_err(|e| Error::io(dir, e))
}

fn meta_field<'a>(fields: &'a std::collections::BTreeMap<&str, &str>, key: &str, path: &Path) -> Result<&'a str> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::format(path, format!("metadata missing field '{key}'")))
}

/// Read a burst directory written by [`write_burst_dir`].
pub fn read_burst_dir(dir: &Path) -> Result<Burst> {
    let meta_path = dir.join("metadata.txt");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim(), v.trim());
        }
    }
    let parse_usize = |key: &str| -> Result<usize> {
        meta_field(&fields, key, &meta_path)?
            .parse()
            .map_err(|e| Error::format(&meta_path, format!("field '{key}': {e}")))
    };
    let n: usize = parse_usize("frames")?;
    let common_index: usize = parse_usize("common_index")?;
    let noise_variance: f64 = meta_field(&fields, "noise_variance", &meta_path)?
        .parse()
        .map_err(|e| Error::format(&meta_path, format!("noise_variance: {e}")))?;
    let seed: u64 = meta_field(&fields, "seed", &meta_path)?
        .parse()
        .map_err(|e| Error::format(&meta_path, format!("seed: {e}")))?;
    let mut intra_offsets = Vec::new();
    for part in meta_field(&fields, "offsets", &meta_path)?.split(';') {
        let nums: Vec<f64> = part
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(&meta_path, format!("offsets: {e}")))?;
        if nums.len() != 2 {
            return Err(Error::format(&meta_path, "offsets entries must be 'x y' pairs"));
        }
        intra_offsets.push([nums[0], nums[1]]);
    }
    let hvals: Vec<f64> = meta_field(&fields, "homography", &meta_path)?
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(&meta_path, format!("homography: {e}")))?;
    if hvals.len() != 9 {
        return Err(Error::format(&meta_path, "homography must hold 9 values"));
    }
    if intra_offsets.len() != n {
        return Err(Error::format(
            &meta_path,
            format!("metadata lists {} offsets for {} frames", intra_offsets.len(), n),
        ));
    }
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let frame_path = dir.join(format!("frame_{k:02}.png"));
        if !frame_path.exists() {
            return Err(Error::Data(format!(
                "burst directory {} is missing frame_{k:02}.png",
                dir.display()
            )));
        }
        frames.push(ImageBuf::load(&frame_path)?);
    }
    if common_index >= n {
        return Err(Error::format(&meta_path, "common_index out of range"));
    }
    Ok(Burst {
        frames,
        common_index,
        intra_offsets,
        noise_variance,
        warp: Homography::from_rows([
            [hvals[0], hvals[1], hvals[2]],
            [hvals[3], hvals[4], hvals[5]],
            [hvals[6], hvals[7], hvals[8]],
        ]),
        seed,
    })
}

/// Quantize one descriptor component to an unsigned byte.
#[inline]
pub fn quantize_component(d: f32) -> u8 {
    (((d as f64 + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}

/// Inverse of [`quantize_component`] (error at most 1/255 per component for
/// inputs in [-1, 1]).
#[inline]
pub fn dequantize_component(q: u8) -> f32 {
    (q as f64 / 127.5 - 1.0) as f32
}

/// Export a feature set in the external SfM tool's text import format.
pub fn export_sfm_text(fs: &FeatureSet, path: &Path) -> Result<()> {
    if fs.is_empty() {
        return Err(Error::Data("refusing to export an empty feature set".into()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", fs.len(), fs.descriptor_dim);
    for (i, kp) in fs.keypoints.iter().enumerate() {
        let _ = write!(out, "{} {} {} 0", kp.x, kp.y, kp.scale);
        for &d in fs.descriptor(i) {
            let _ = write!(out, " {}", quantize_component(d));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a file written by [`export_sfm_text`]. Scores are not part of the
/// format and come back as zero; descriptors are dequantized.
pub fn read_sfm_text(path: &Path) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::format(path, "header must be '<count> <dim>'"));
    }
    let count: usize = parts[0]
        .parse()
        .map_err(|e| Error::format(path, format!("count: {e}")))?;
    let dim: usize = parts[1]
        .parse()
        .map_err(|e| Error::format(path, format!("dim: {e}")))?;
    let mut keypoints = Vec::with_capacity(count);
    let mut descriptors = Vec::with_capacity(count * dim);
    for (i, line) in lines.enumerate().take(count) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 + dim {
            return Err(Error::format(
                path,
                format!("keypoint {i}: expected {} fields, got {}", 4 + dim, toks.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::format(path, format!("keypoint {i}: {e}")))
        };
        keypoints.push(Keypoint {
            x: num(toks[0])?,
            y: num(toks[1])?,
            scale: num(toks[2])?,
            score: 0.0,
        });
        for t in &toks[4..] {
            let q: u8 = t
                .parse()
                .map_err(|e| Error::format(path, format!("keypoint {i} descriptor: {e}")))?;
            descriptors.push(dequantize_component(q));
        }
    }
    if keypoints.len() != count {
        return Err(Error::format(
            path,
            format!("expected {count} keypoints, file holds {}", keypoints.len()),
        ));
    }
    Ok(FeatureSet {
        keypoints,
        descriptors,
        descriptor_dim: dim,
        image_id: String::new(),
        width: 0,
        height: 0,
    })
}

/// Read a batch-extraction manifest: one burst directory per line, `#`
/// comments and blank lines ignored. Relative paths resolve against the
/// manifest's directory.
pub fn read_burst_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut dirs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = PathBuf::from(line);
        dirs.push(if p.is_absolute() { p } else { base.join(p) });
    }
    if dirs.is_empty() {
        return Err(Error::format(path, "manifest lists no burst directories"));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burstsynth::{make_burst_pair, BurstSpec};
    use crate::rng::DetRng;
    use crate::texture;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("burstfeat_interop_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn random_feature_set(n: usize, rng: &mut DetRng) -> FeatureSet {
        let dim = 128;
        let mut descriptors = Vec::with_capacity(n * dim);
        let mut keypoints = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            descriptors.extend(v.iter().map(|x| (x / norm) as f32));
            // f32-representable coordinates so the f32 payload is lossless
            keypoints.push(Keypoint {
                x: rng.uniform_in(0.0, 1000.0) as f32 as f64,
                y: rng.uniform_in(0.0, 700.0) as f32 as f64,
                scale: rng.uniform_in(1.0, 4.0) as f32 as f64,
                score: rng.uniform_in(0.0, 1.0) as f32,
            });
        }
        FeatureSet {
            keypoints,
            descriptors,
            descriptor_dim: dim,
            image_id: "img_007".into(),
            width: 1000,
            height: 700,
        }
    }

    #[test]
    fn feature_file_round_trips_bitwise() {
        let dir = tmpdir("lbft");
        let mut rng = DetRng::seed_from(1);
        for i in 0..5 {
            let fs = random_feature_set(1 + i * 7, &mut rng);
            let path = dir.join(format!("f{i}.lbft"));
            write_feature_file(&fs, &path).unwrap();
            let back = read_feature_file(&path).unwrap();
            assert_eq!(fs, back);
        }
    }

    #[test]
    fn feature_file_size_matches_layout() {
        let dir = tmpdir("lbft_size");
        let mut rng = DetRng::seed_from(2);
        let fs = random_feature_set(4000, &mut rng);
        let path = dir.join("big.lbft");
        write_feature_file(&fs, &path).unwrap();
        let expect = 26 + fs.image_id.len() as u64 + 4000 * (16 + 512);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expect);
    }

    #[test]
    fn feature_file_errors_are_distinct() {
        let dir = tmpdir("lbft_err");
        let mut rng = DetRng::seed_from(3);
        let fs = random_feature_set(3, &mut rng);
        let path = dir.join("ok.lbft");
        write_feature_file(&fs, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.join("magic.lbft");
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(read_feature_file(&bad_magic).unwrap_err().to_string().contains("magic"));

        let bad_version = dir.join("version.lbft");
        let mut b = bytes.clone();
        b[4] = 99;
        std::fs::write(&bad_version, &b).unwrap();
        assert!(read_feature_file(&bad_version)
            .unwrap_err()
            .to_string()
            .contains("version"));

        let cut = dir.join("cut.lbft");
        std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
        let msg = read_feature_file(&cut).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
    }

    #[test]
    fn flow_file_round_trips() {
        let dir = tmpdir("lbfw");
        let h = crate::geometry::Homography::translation(2.5, -1.25);
        let flow = crate::burstsynth::compute_flow_map(&h, 20, 31).unwrap();
        let path = dir.join("flow.lbfw");
        write_flow_file(&flow, &path).unwrap();
        let back = read_flow_file(&path).unwrap();
        assert_eq!(back.width, 31);
        assert_eq!(back.height, 20);
        assert_eq!(back.valid, flow.valid);
        for (a, b) in flow.vectors.iter().zip(&back.vectors) {
            assert_eq!(a[0] as f32, b[0] as f32);
            assert_eq!(a[1] as f32, b[1] as f32);
        }
        // write -> read -> write is byte-stable
        let path2 = dir.join("flow2.lbfw");
        write_flow_file(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        // header is exactly 16 bytes + payload
        let expect = 16 + (20 * 31 * 8) + 20 * 31;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expect);
    }

    #[test]
    fn burst_dir_round_trips_exactly() {
        let dir = tmpdir("burst");
        let img = texture::textured_image(160, 160, 5);
        let spec = BurstSpec {
            frame_count: 5,
            max_translation: 6.0,
            noise_variance_range: (0.3, 0.6),
            homography_jitter: 0.03,
            crop_size: 64,
            seed: 9,
        };
        let pair = make_burst_pair(&img, &spec, &mut DetRng::seed_from(9)).unwrap();
        let bdir = dir.join("burst_a");
        write_burst_dir(&pair.burst_a, &bdir).unwrap();
        let back = read_burst_dir(&bdir).unwrap();
        assert_eq!(back.frames.len(), 5);
        for (a, b) in pair.burst_a.frames.iter().zip(&back.frames) {
            assert_eq!(a.data, b.data, "frame pixels must round-trip exactly");
        }
        assert_eq!(back.common_index, pair.burst_a.common_index);
        assert_eq!(back.noise_variance, pair.burst_a.noise_variance);
        assert_eq!(back.seed, pair.burst_a.seed);
        assert_eq!(back.intra_offsets, pair.burst_a.intra_offsets);
        assert_eq!(back.warp.rows(), pair.burst_a.warp.rows());
    }

    #[test]
    fn missing_frame_is_named() {
        let dir = tmpdir("burst_missing");
        let img = texture::textured_image(128, 128, 6);
        let spec = BurstSpec {
            frame_count: 3,
            max_translation: 3.0,
            noise_variance_range: (0.0, 0.0),
            homography_jitter: 0.0,
            crop_size: 48,
            seed: 1,
        };
        let pair = make_burst_pair(&img, &spec, &mut DetRng::seed_from(2)).unwrap();
        let bdir = dir.join("b");
        write_burst_dir(&pair.burst_a, &bdir).unwrap();
        std::fs::remove_file(bdir.join("frame_02.png")).unwrap();
        let msg = read_burst_dir(&bdir).unwrap_err().to_string();
        assert!(msg.contains("frame_02"), "{msg}");
    }

    #[test]
    fn sfm_text_format_and_round_trip() {
        let dir = tmpdir("sfm");
        let fs = FeatureSet {
            keypoints: vec![Keypoint { x: 10.5, y: 20.25, scale: 1.0, score: 0.9 }],
            descriptors: vec![0.0; 128],
            descriptor_dim: 128,
            image_id: "one".into(),
            width: 64,
            height: 64,
        };
        let path = dir.join("one.txt");
        export_sfm_text(&fs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "1 128");
        let first = lines.next().unwrap();
        assert!(first.starts_with("10.5 20.25 1 0"), "{first}");
        // all-zero descriptor quantizes to the 128 midpoint
        for tok in first.split_whitespace().skip(4) {
            assert_eq!(tok, "128");
        }

        let mut rng = DetRng::seed_from(4);
        let fs = random_feature_set(20, &mut rng);
        let path = dir.join("rt.txt");
        export_sfm_text(&fs, &path).unwrap();
        let back = read_sfm_text(&path).unwrap();
        assert_eq!(back.len(), 20);
        for (a, b) in fs.keypoints.iter().zip(&back.keypoints) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(a.scale, b.scale);
        }
        for (a, b) in fs.descriptors.iter().zip(&back.descriptors) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn quantization_error_bounded_on_unit_descriptors() {
        let mut rng = DetRng::seed_from(5);
        for _ in 0..100 {
            let v: Vec<f64> = (0..128).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            for x in v {
                let d = (x / n) as f32;
                let q = quantize_component(d);
                let back = dequantize_component(q);
                assert!((d - back).abs() <= 1.0 / 255.0 + 1e-7);
            }
        }
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tmpdir("manifest");
        std::fs::write(dir.join("list.txt"), "# bursts\nburst_a\n\n/abs/burst_b\n").unwrap();
        let dirs = read_burst_manifest(&dir.join("list.txt")).unwrap();
        assert_eq!(dirs.len(), 2);
        assert_eq!(dirs[0], dir.join("burst_a"));
        assert_eq!(dirs[1], PathBuf::from("/abs/burst_b"));
        std::fs::write(dir.join("empty.txt"), "# nothing\n").unwrap();
        assert!(read_burst_manifest(&dir.join("empty.txt")).is_err());
    }
}
