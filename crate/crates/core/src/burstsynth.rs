//! Synthetic low-light robotic burst generation.
//!
//! A burst pair is derived from a single source image: two perspective
//! crops of the same scene, each rendered as N frames under uniform linear
//! apparent motion, with independent Gaussian noise per frame. The
//! ground-truth flow map relates the two common (middle) frames and is
//! computed from the noise-free geometry alone.
//!
//! All randomness flows through explicit [`DetRng`] state; identical
//! (image, spec, seed) produce bit-identical output.

use crate::error::{Error, Result};
use crate::geometry::{quad_is_convex, Homography};
use crate::image::ImageBuf;
use crate::rng::DetRng;

/// Parameters of burst-pair synthesis.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BurstSpec {
    /// Frames per burst; must be odd so the common frame is the middle one.
    pub frame_count: usize,
    /// Bound on the apparent translation of the extreme frames, in pixels.
    pub max_translation: f64,
    /// Range of the Gaussian noise variance on normalized intensities.
    pub noise_variance_range: (f64, f64),
    /// Corner-perturbation magnitude as a fraction of the crop size.
    pub homography_jitter: f64,
    /// Side length of the square crop rendered for every frame.
    pub crop_size: usize,
    /// Master seed for this synthesis.
    pub seed: u64,
}

impl Default for BurstSpec {
    fn default() -> Self {
        BurstSpec {
            frame_count: 5,
            max_translation: 30.0,
            noise_variance_range: (0.3, 0.6),
            homography_jitter: 0.05,
            crop_size: 192,
            seed: 0,
        }
    }
}

impl BurstSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 || self.frame_count.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame_count must be odd and >= 1, got {}",
                self.frame_count
            )));
        }
        let (lo, hi) = self.noise_variance_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config(format!(
                "noise_variance_range must satisfy 0 <= low <= high, got [{lo}, {hi}]"
            )));
        }
        if self.max_translation < 0.0 {
            return Err(Error::Config("max_translation must be >= 0".into()));
        }
        if self.homography_jitter < 0.0 {
            return Err(Error::Config("homography_jitter must be >= 0".into()));
        }
        if self.crop_size < 2 {
            return Err(Error::Config("crop_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// An N-frame image stack with a designated common (middle) frame.
#[derive(Clone, Debug)]
pub struct Burst {
    pub frames: Vec<ImageBuf>,
    pub common_index: usize,
    /// Apparent translation of each frame's content relative to the common
    /// frame, in pixels of the frame grid.
    pub intra_offsets: Vec<[f64; 2]>,
    /// Noise variance drawn for this burst.
    pub noise_variance: f64,
    /// Sampling map from frame pixel coordinates to source-image
    /// coordinates (the geometry of the common frame).
    pub warp: Homography,
    /// Seed recorded for reproducibility metadata.
    pub seed: u64,
}

impl Burst {
    pub fn common_frame(&self) -> &ImageBuf {
        &self.frames[self.common_index]
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    /// Wrap a bare image stack (e.g. captured frames loaded from disk).
    pub fn from_frames(frames: Vec<ImageBuf>) -> Result<Burst> {
        if frames.is_empty() || frames.len().is_multiple_of(2) {
            return Err(Error::Data(format!(
                "burst needs an odd frame count, got {}",
                frames.len()
            )));
        }
        let (w, h, c) = (frames[0].width, frames[0].height, frames[0].channels);
        if frames.iter().any(|f| f.width != w || f.height != h || f.channels != c) {
            return Err(Error::Data("burst frames must share dimensions".into()));
        }
        let n = frames.len();
        Ok(Burst {
            frames,
            common_index: n / 2,
            intra_offsets: vec![[0.0, 0.0]; n],
            noise_variance: 0.0,
            warp: Homography::identity(),
            seed: 0,
        })
    }
}

/// Per-pixel ground-truth correspondence field between two frames of equal
/// size. `vectors[y][x]` is the partner-frame coordinate of pixel (x, y);
/// `valid` marks pixels whose target lies inside the partner frame.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl FlowMap {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> ([f64; 2], bool) {
        let i = y * self.width + x;
        (self.vectors[i], self.valid[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Two bursts of the same scene plus the geometry relating their common
/// frames. `homography_ab` maps common-frame-A coordinates to common-frame-B
/// coordinates; `flow_ab` maps each pixel of B's common frame back to its
/// source coordinate in A's common frame.
#[derive(Clone, Debug)]
pub struct BurstPair {
    pub burst_a: Burst,
    pub burst_b: Burst,
    pub flow_ab: FlowMap,
    pub homography_ab: Homography,
}

const HOMOGRAPHY_RETRY_CAP: usize = 64;

/// Sample a random homography mapping the unit square onto a perturbed
/// convex quadrilateral. Corner displacements are bounded by `jitter`
/// (distance in unit-crop coordinates, i.e. a fraction of the crop size).
/// Zero jitter returns the exact identity.
pub fn sample_homography(spec: &BurstSpec, rng: &mut DetRng) -> Result<Homography> {
    let jitter = spec.homography_jitter;
    if jitter < 0.0 {
        return Err(Error::Config("homography_jitter must be >= 0".into()));
    }
    if jitter == 0.0 {
        return Ok(Homography::identity());
    }
    let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    for _ in 0..HOMOGRAPHY_RETRY_CAP {
        let mut dst = src;
        for corner in &mut dst {
            // uniform in the disk of radius jitter, keeping the worst-case
            // corner displacement at exactly jitter * crop_size
            let (dx, dy) = loop {
                let dx = rng.uniform_in(-jitter, jitter);
                let dy = rng.uniform_in(-jitter, jitter);
                if dx * dx + dy * dy <= jitter * jitter {
                    break (dx, dy);
                }
            };
            corner.0 += dx;
            corner.1 += dy;
        }
        if !quad_is_convex(&dst) {
            continue;
        }
        match Homography::from_point_pairs(&src, &dst) {
            Ok(h) if h.is_invertible() => return Ok(h),
            _ => continue,
        }
    }
    Err(Error::Numeric(format!(
        "no valid homography after {HOMOGRAPHY_RETRY_CAP} draws; jitter {jitter} is too large"
    )))
}

/// Zero-mean Gaussian field with the given variance, one value per
/// pixel/channel of an image with the given shape. This is the pre-clip
/// noise applied by [`add_gaussian_noise`].
pub fn gaussian_field(
    width: usize,
    height: usize,
    channels: usize,
    variance: f64,
    rng: &mut DetRng,
) -> Vec<f32> {
    let sigma = variance.sqrt();
    (0..width * height * channels)
        .map(|_| (rng.normal() * sigma) as f32)
        .collect()
}

/// Additive Gaussian noise with the given variance, clipped to [0, 1].
/// The input is not mutated.
pub fn add_gaussian_noise(image: &ImageBuf, variance: f64, rng: &mut DetRng) -> Result<ImageBuf> {
    if variance < 0.0 {
        return Err(Error::Config(format!(
            "noise variance must be >= 0, got {variance}"
        )));
    }
    let mut out = image.clone();
    if variance == 0.0 {
        return Ok(out);
    }
    let field = gaussian_field(image.width, image.height, image.channels, variance, rng);
    for (v, n) in out.data.iter_mut().zip(field) {
        *v = (*v + n).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Scale a unit-square homography to act on crop pixel coordinates
/// [0, crop-1]^2.
fn unit_to_crop(h_unit: &Homography, crop_size: usize) -> Homography {
    let s = (crop_size - 1) as f64;
    Homography::scale(s)
        .compose(h_unit)
        .compose(&Homography::scale(1.0 / s))
}

fn crop_corners(crop_size: usize) -> [(f64, f64); 4] {
    let c = (crop_size - 1) as f64;
    [(0.0, 0.0), (c, 0.0), (c, c), (0.0, c)]
}

/// Render one frame: sample the source at warp(q - offset) for every crop
/// pixel q. Returns an error if any corner of the sampled quad leaves the
/// source image.
fn render_frame(
    image: &ImageBuf,
    warp: &Homography,
    offset: [f64; 2],
    crop_size: usize,
) -> Result<ImageBuf> {
    for (cx, cy) in crop_corners(crop_size) {
        let (sx, sy) = warp
            .apply(cx - offset[0], cy - offset[1])
            .ok_or_else(|| Error::Numeric("warp maps crop corner to infinity".into()))?;
        if !image.contains(sx, sy) {
            return Err(Error::Data(format!(
                "translated crop leaves the source image (corner maps to \
                 ({sx:.1}, {sy:.1}) in a {}x{} image); use a larger source or a smaller crop",
                image.width, image.height
            )));
        }
    }
    let mut frame = ImageBuf::new(crop_size, crop_size, image.channels);
    frame.channels = image.channels;
    frame.data = vec![0.0; crop_size * crop_size * image.channels];
    for y in 0..crop_size {
        for x in 0..crop_size {
            let (sx, sy) = warp
                .apply(x as f64 - offset[0], y as f64 - offset[1])
                .expect("checked finite above");
            for c in 0..image.channels {
                let v = image.sample_bilinear(sx, sy, c);
                frame.data[(y * crop_size + x) * image.channels + c] = v;
            }
        }
    }
    Ok(frame)
}

/// Synthesize one burst. `warp` maps crop pixel coordinates to source-image
/// coordinates and defines the geometry of the common frame. Frame k is the
/// warped crop translated by (k - N/2) * step, where the uniformly random
/// step direction and magnitude are scaled so the extreme frame offset stays
/// within `spec.max_translation`. One noise variance is drawn per burst and
/// applied as independent per-frame realizations.
pub fn synthesize_burst(
    image: &ImageBuf,
    warp: &Homography,
    spec: &BurstSpec,
    rng: &mut DetRng,
) -> Result<Burst> {
    spec.validate()?;
    let n = spec.frame_count;
    let mid = n / 2;

    let step = if n > 1 {
        let angle = rng.uniform_in(0.0, std::f64::consts::TAU);
        let extreme = rng.uniform_in(0.0, spec.max_translation);
        let per_frame = extreme / mid as f64;
        [per_frame * angle.cos(), per_frame * angle.sin()]
    } else {
        [0.0, 0.0]
    };
    let offsets: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let f = k as f64 - mid as f64;
            [f * step[0], f * step[1]]
        })
        .collect();

    let (lo, hi) = spec.noise_variance_range;
    let noise_variance = if hi > lo { rng.uniform_in(lo, hi) } else { lo };

    let mut frames = Vec::with_capacity(n);
    for offset in &offsets {
        let clean = render_frame(image, warp, *offset, spec.crop_size)?;
        let mut noisy = add_gaussian_noise(&clean, noise_variance, rng)?;
        noisy.quantize_u16();
        frames.push(noisy);
    }

    Ok(Burst {
        frames,
        common_index: mid,
        intra_offsets: offsets,
        noise_variance,
        warp: *warp,
        seed: spec.seed,
    })
}

/// Dense flow under a homography: `vectors[y][x]` is the image of (x, y)
/// under `h`; `valid` marks targets inside a partner frame of the same
/// dimensions.
pub fn compute_flow_map(h: &Homography, height: usize, width: usize) -> Result<FlowMap> {
    if !h.is_invertible() {
        return Err(Error::Numeric("flow map requires an invertible homography".into()));
    }
    let mut vectors = vec![[0.0f64; 2]; width * height];
    let mut valid = vec![false; width * height];
    let xmax = (width - 1) as f64;
    let ymax = (height - 1) as f64;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            match h.apply(x as f64, y as f64) {
                Some((u, v)) if u.is_finite() && v.is_finite() => {
                    vectors[i] = [u, v];
                    valid[i] = u >= 0.0 && v >= 0.0 && u <= xmax && v <= ymax;
                }
                _ => {
                    vectors[i] = [0.0, 0.0];
                    valid[i] = false;
                }
            }
        }
    }
    Ok(FlowMap {
        width,
        height,
        vectors,
        valid,
    })
}

/// Generate a full burst pair from one source image.
///
/// Burst A uses one sampled homography; burst B uses another plus a random
/// inter-burst translation (uniform per axis in [-max_translation,
/// +max_translation]). The flow map is computed from the noise-free
/// geometry before any noise is applied.
pub fn make_burst_pair(image: &ImageBuf, spec: &BurstSpec, rng: &mut DetRng) -> Result<BurstPair> {
    spec.validate()?;
    let crop = spec.crop_size;

    let h_a = sample_homography(spec, rng)?;
    let h_b = sample_homography(spec, rng)?;
    let w_a = unit_to_crop(&h_a, crop);
    let w_b = unit_to_crop(&h_b, crop);

    let inter = [
        rng.uniform_in(-spec.max_translation, spec.max_translation),
        rng.uniform_in(-spec.max_translation, spec.max_translation),
    ];

    // Bound every coordinate either burst can sample, as a function of the
    // base crop origin, then draw a feasible origin. Intra-burst offsets
    // shift the pre-warp coordinate by up to max_translation per axis, so
    // the reachable set is the warp image of the offset-expanded crop
    // square (projective maps preserve convexity, so its four corners
    // bound everything).
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let m = spec.max_translation + 0.5;
    let c = (crop - 1) as f64;
    let expanded = [(-m, -m), (c + m, -m), (c + m, c + m), (-m, c + m)];
    for (w, extra) in [(&w_a, [0.0, 0.0]), (&w_b, inter)] {
        for (cx, cy) in expanded {
            let (sx, sy) = w
                .apply(cx, cy)
                .ok_or_else(|| Error::Numeric("degenerate warp".into()))?;
            min_x = min_x.min(sx + extra[0]);
            min_y = min_y.min(sy + extra[1]);
            max_x = max_x.max(sx + extra[0]);
            max_y = max_y.max(sy + extra[1]);
        }
    }
    let lo_x = -min_x;
    let hi_x = (image.width - 1) as f64 - max_x;
    let lo_y = -min_y;
    let hi_y = (image.height - 1) as f64 - max_y;
    if hi_x < lo_x || hi_y < lo_y {
        return Err(Error::Data(format!(
            "source image {}x{} too small for crop {} with max_translation {} and jitter {}; \
             use a larger source or a smaller crop",
            image.width, image.height, crop, spec.max_translation, spec.homography_jitter
        )));
    }
    let origin = [rng.uniform_in(lo_x, hi_x.max(lo_x + f64::EPSILON)), rng.uniform_in(lo_y, hi_y.max(lo_y + f64::EPSILON))];

    let m_a = Homography::translation(origin[0], origin[1]).compose(&w_a);
    let m_b = Homography::translation(origin[0] + inter[0], origin[1] + inter[1]).compose(&w_b);

    // noise-free geometry first: flow is independent of the noise draws
    let h_ab = m_b.inverse()?.compose(&m_a);
    let h_ba = h_ab.inverse()?;
    let flow_ab = compute_flow_map(&h_ba, crop, crop)?;

    let burst_a = synthesize_burst(image, &m_a, spec, rng)?;
    let burst_b = synthesize_burst(image, &m_b, spec, rng)?;

    Ok(BurstPair {
        burst_a,
        burst_b,
        flow_ab,
        homography_ab: h_ab,
    })
}
