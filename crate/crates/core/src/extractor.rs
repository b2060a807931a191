//! Multi-scale feature extraction.
//!
//! The burst is resized over a scale pyramid (largest dimension capped at
//! 2^10 px, stepped by 2^(-1/4) down to 2^8), the network runs at every
//! level, and thresholded strict local maxima of the detection map become
//! keypoints scored by detection * reliability. Keypoint coordinates map
//! back to the original frame; the merged set is ranked by score, pruned of
//! cross-scale duplicates, and truncated to the keypoint budget.

use crate::burstsynth::Burst;
use crate::error::{Error, Result};
use crate::network::{forward, NetworkOutput, Weights, DESCRIPTOR_DIM};

/// Extraction parameters.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ExtractParams {
    pub max_keypoints: usize,
    pub detection_threshold: f32,
    pub reliability_threshold: f32,
    /// Side of the square NMS neighborhood (pixels); peaks are strict
    /// maxima within Chebyshev radius window/2.
    pub nms_window: usize,
    /// Cap on the largest image dimension at the finest pyramid level.
    pub scale_max_dim: usize,
    /// Pyramid stops before the largest dimension falls below this.
    pub scale_min_dim: usize,
    /// Downsampling ratio between consecutive levels (> 1).
    pub scale_step: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            max_keypoints: 4000,
            detection_threshold: 0.7,
            reliability_threshold: 0.7,
            nms_window: 16,
            scale_max_dim: 1 << 10,
            scale_min_dim: 1 << 8,
            scale_step: std::f64::consts::SQRT_2.sqrt(), // 2^(1/4)
        }
    }
}

impl ExtractParams {
    pub fn validate(&self) -> Result<()> {
        for t in [self.detection_threshold, self.reliability_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
            }
        }
        if self.scale_max_dim < self.scale_min_dim {
            return Err(Error::Config("scale_max_dim must be >= scale_min_dim".into()));
        }
        if self.scale_step <= 1.0 {
            return Err(Error::Config("scale_step must be > 1".into()));
        }
        if self.nms_window < 3 {
            return Err(Error::Config("nms_window must be >= 3".into()));
        }
        Ok(())
    }
}

/// One keypoint in original-frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Apparent size multiplier: 1 at full resolution, larger at coarser
    /// pyramid levels (original max dim / level max dim).
    pub scale: f64,
    /// Detection confidence times reliability at the peak.
    pub score: f32,
}

/// Sparse extraction result for one burst's common frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    /// Row-major keypoint-count x descriptor_dim block, unit-norm rows.
    pub descriptors: Vec<f32>,
    pub descriptor_dim: usize,
    pub image_id: String,
    pub width: usize,
    pub height: usize,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.descriptor_dim..(i + 1) * self.descriptor_dim]
    }
}

/// One pyramid level: the resize ratio applied to the original dimensions
/// and the resized burst.
pub struct PyramidLevel {
    pub ratio: f64,
    pub burst: Burst,
}

pub struct ScalePyramid {
    pub levels: Vec<PyramidLevel>,
    /// Input was already smaller than `scale_min_dim`; a single unscaled
    /// level was produced.
    pub undersized: bool,
}

fn resize_burst(burst: &Burst, w: usize, h: usize) -> Burst {
    if w == burst.width() && h == burst.height() {
        return burst.clone();
    }
    Burst {
        frames: burst.frames.iter().map(|f| f.resize_bilinear(w, h)).collect(),
        common_index: burst.common_index,
        intra_offsets: burst
            .intra_offsets
            .iter()
            .map(|o| [o[0] * w as f64 / burst.width() as f64, o[1] * h as f64 / burst.height() as f64])
            .collect(),
        noise_variance: burst.noise_variance,
        warp: burst.warp,
        seed: burst.seed,
    }
}

/// Build the scale pyramid. The first level caps the largest dimension at
/// `scale_max_dim` (never upscaling); each next level divides the target
/// dimension by `scale_step` until it would fall below `scale_min_dim`.
/// Octave steps are box-filtered before the bilinear resize.
pub fn build_scale_pyramid(burst: &Burst, params: &ExtractParams) -> Result<ScalePyramid> {
    params.validate()?;
    let (w, h) = (burst.width(), burst.height());
    let orig_max = w.max(h);
    if orig_max < params.scale_min_dim {
        return Ok(ScalePyramid {
            levels: vec![PyramidLevel { ratio: 1.0, burst: burst.clone() }],
            undersized: true,
        });
    }
    let base_max = orig_max.min(params.scale_max_dim) as f64;
    let mut levels = Vec::new();
    // octave-filtered source for anti-aliasing
    let mut src = burst.clone();
    let mut src_ratio = 1.0f64;
    let mut k = 0u32;
    loop {
        let target_max = (base_max / params.scale_step.powi(k as i32)).round();
        if (target_max as usize) < params.scale_min_dim {
            break;
        }
        let ratio = target_max / orig_max as f64;
        while ratio <= src_ratio / 2.0 {
            src = Burst {
                frames: src.frames.iter().map(|f| f.box_downsample_2x()).collect(),
                common_index: src.common_index,
                intra_offsets: src.intra_offsets.clone(),
                noise_variance: src.noise_variance,
                warp: src.warp,
                seed: src.seed,
            };
            src_ratio /= 2.0;
        }
        let lw = (w as f64 * ratio).round().max(1.0) as usize;
        let lh = (h as f64 * ratio).round().max(1.0) as usize;
        levels.push(PyramidLevel {
            ratio,
            burst: resize_burst(&src, lw, lh),
        });
        k += 1;
    }
    if levels.is_empty() {
        // orig_max >= scale_min_dim guarantees at least the first level
        return Err(Error::Numeric("pyramid schedule produced no levels".into()));
    }
    Ok(ScalePyramid { levels, undersized: false })
}

/// Strict local maxima of a map within a window x window neighborhood
/// (Chebyshev radius window/2), at or above `threshold`. Equal-valued
/// neighbors suppress each other, so plateaus yield nothing. The result is
/// sorted by value descending, ties by (y, x) ascending.
pub fn nms(map: &[f32], dims: (usize, usize), window: usize, threshold: f32) -> Vec<(usize, usize, f32)> {
    let (w, h) = dims;
    debug_assert_eq!(map.len(), w * h);
    let r = (window / 2) as isize;
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = map[y as usize * w + x as usize];
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'nbhd: for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    if map[ny as usize * w + nx as usize] >= v {
                        is_max = false;
                        break 'nbhd;
                    }
                }
            }
            if is_max {
                out.push((x as usize, y as usize, v));
            }
        }
    }
    out.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.1, a.0).cmp(&(b.1, b.0)))
    });
    out
}

struct Candidate {
    x: f64,
    y: f64,
    scale: f64,
    score: f32,
    level: usize,
    lx: usize,
    ly: usize,
    descriptor: Vec<f32>,
}

/// Thresholded peaks of one network output, mapped back to original-frame
/// coordinates through the level's resize ratio.
fn level_candidates(
    out: &NetworkOutput,
    params: &ExtractParams,
    ratio_x: f64,
    ratio_y: f64,
    scale_label: f64,
    level: usize,
) -> Vec<Candidate> {
    let peaks = nms(
        &out.detection,
        (out.width, out.height),
        params.nms_window,
        params.detection_threshold,
    );
    let mut cands = Vec::new();
    for (x, y, k) in peaks {
        let r = out.reliability_at(x, y);
        if r < params.reliability_threshold {
            continue;
        }
        // pixel-center mapping between the resized and original grids
        let ox = (x as f64 + 0.5) / ratio_x - 0.5;
        let oy = (y as f64 + 0.5) / ratio_y - 0.5;
        cands.push(Candidate {
            x: ox,
            y: oy,
            scale: scale_label,
            score: k * r,
            level,
            lx: x,
            ly: y,
            descriptor: out.descriptor_at(x, y),
        });
    }
    cands
}

/// Run the full multi-scale extraction for one burst.
pub fn extract_features(
    weights: &Weights,
    burst: &Burst,
    params: &ExtractParams,
    image_id: &str,
) -> Result<FeatureSet> {
    params.validate()?;
    let (w, h) = (burst.width(), burst.height());
    let pyramid = build_scale_pyramid(burst, params)?;
    let mut candidates: Vec<Candidate> = Vec::new();
    for (li, level) in pyramid.levels.iter().enumerate() {
        let out = forward(weights, &level.burst)?;
        let rx = out.width as f64 / w as f64;
        let ry = out.height as f64 / h as f64;
        let scale_label = 1.0 / level.ratio;
        candidates.extend(level_candidates(&out, params, rx, ry, scale_label, li));
    }
    // rank globally by score; deterministic tie-break by level then pixel
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.level, a.ly, a.lx).cmp(&(b.level, b.ly, b.lx)))
    });
    // suppress cross-scale duplicates within 2 px of a better keypoint
    let mut kept: Vec<Candidate> = Vec::new();
    for cand in candidates {
        if kept.len() >= params.max_keypoints {
            break;
        }
        let dup = kept.iter().any(|k| {
            let dx = k.x - cand.x;
            let dy = k.y - cand.y;
            dx * dx + dy * dy <= 4.0
        });
        if !dup {
            kept.push(cand);
        }
    }
    let mut keypoints = Vec::with_capacity(kept.len());
    let mut descriptors = Vec::with_capacity(kept.len() * DESCRIPTOR_DIM);
    for c in kept {
        keypoints.push(Keypoint { x: c.x, y: c.y, scale: c.scale, score: c.score });
        descriptors.extend_from_slice(&c.descriptor);
    }
    Ok(FeatureSet {
        keypoints,
        descriptors,
        descriptor_dim: DESCRIPTOR_DIM,
        image_id: image_id.to_string(),
        width: w,
        height: h,
    })
}
