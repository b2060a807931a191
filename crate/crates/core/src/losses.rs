//! Training losses.
//!
//! The detection loss combines patchwise cosine similarity between the two
//! confidence maps of a burst pair (one warped into the other's frame
//! through the ground-truth flow) with a local peakiness term on each map:
//!
//! ```text
//! L_det = L_cosim + (L_peak_a + L_peak_b) / 2
//! ```
//!
//! Descriptor reliability is trained by maximizing a differentiable
//! average precision: query descriptors from burst A are ranked against
//! sampled descriptors from burst B by Euclidean distance via soft
//! histogram binning, and the per-query loss `1 - [AP*R + kappa*(1 - R)]`
//! rewards confident reliability exactly where AP beats the threshold
//! `kappa`.
//!
//! Values and gradients are computed in f64 (inputs stay f32), which keeps
//! the structural identities exact and finite-difference checks clean.

use crate::burstsynth::FlowMap;
use crate::error::{Error, Result};
use crate::network::tensor::Tensor;
use crate::network::{NetworkOutput, OutputGrads};

/// Loss hyperparameters.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Patch size M for cosine-similarity and peakiness tiling.
    pub patch_size: usize,
    /// Reliability threshold kappa in (0, 1).
    pub ap_kappa: f64,
    /// Histogram bins of the soft AP.
    pub ap_bins: usize,
    /// Weight of the reliability loss in the total.
    pub reliability_weight: f64,
    /// Cap on AP queries per burst pair.
    pub sample_count: usize,
    /// Correspondences within this many pixels of the flow target count as
    /// positives.
    pub positive_tolerance_px: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            patch_size: 16,
            ap_kappa: 0.5,
            ap_bins: 20,
            reliability_weight: 1.0,
            sample_count: 512,
            positive_tolerance_px: 4.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::Config("patch_size must be >= 2".into()));
        }
        if !(self.ap_kappa > 0.0 && self.ap_kappa < 1.0) {
            return Err(Error::Config("ap_kappa must lie in (0, 1)".into()));
        }
        if self.ap_bins < 2 {
            return Err(Error::Config("ap_bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// Scalar breakdown of one loss evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub total: f64,
    pub detection: f64,
    pub cosim: f64,
    pub peakiness_a: f64,
    pub peakiness_b: f64,
    pub reliability: f64,
}

/// Gradients with respect to both network outputs of a pair.
pub struct PairGrads {
    pub a: OutputGrads,
    pub b: OutputGrads,
}

#[derive(Clone, Copy)]
struct MapDims {
    w: usize,
    h: usize,
}

/// Bilinear read of a confidence map at a continuous coordinate, together
/// with the four (index, weight) taps for gradient scatter.
fn bilinear_taps(map: &[f32], dims: MapDims, x: f64, y: f64) -> Option<(f64, [(usize, f64); 4])> {
    if !(x >= 0.0 && y >= 0.0 && x <= (dims.w - 1) as f64 && y <= (dims.h - 1) as f64) {
        return None;
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f as usize;
    let y0 = y0f as usize;
    let x1 = (x0 + 1).min(dims.w - 1);
    let y1 = (y0 + 1).min(dims.h - 1);
    let taps = [
        (y0 * dims.w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * dims.w + x1, fx * (1.0 - fy)),
        (y1 * dims.w + x0, (1.0 - fx) * fy),
        (y1 * dims.w + x1, fx * fy),
    ];
    let mut v = 0.0f64;
    for &(i, w) in &taps {
        v += map[i] as f64 * w;
    }
    Some((v, taps))
}

/// Top-left corners of the overlapping M x M tiling (stride M/2).
fn patch_origins(dims: MapDims, m: usize) -> Vec<(usize, usize)> {
    let stride = (m / 2).max(1);
    let mut out = Vec::new();
    if dims.w < m || dims.h < m {
        return out;
    }
    let mut y = 0;
    while y + m <= dims.h {
        let mut x = 0;
        while x + m <= dims.w {
            out.push((x, y));
            x += stride;
        }
        y += stride;
    }
    out
}

/// Cosine-similarity detection loss between two confidence maps.
///
/// `flow` is defined over `k_b`'s grid and maps each of its pixels to a
/// coordinate in `k_a`'s frame; `k_a` is sampled there (bilinear), aligning
/// it with `k_b`. Overlapping M x M patches containing only valid pixels
/// contribute `1 - cos(patch_a_warped, patch_b)`; the loss is the mean.
///
/// Returns the loss and its gradients with respect to `k_a` and `k_b`.
pub fn cosim_loss(
    k_a: &[f32],
    k_b: &[f32],
    dims: (usize, usize),
    flow: &FlowMap,
    m: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let dims = MapDims { w: dims.0, h: dims.1 };
    if k_a.len() != dims.w * dims.h || k_b.len() != dims.w * dims.h {
        return Err(Error::Data("confidence map size mismatch".into()));
    }
    if flow.width != dims.w || flow.height != dims.h {
        return Err(Error::Data("flow map size mismatch".into()));
    }
    // warp k_a onto k_b's grid
    let sz = dims.w * dims.h;
    let mut warped = vec![0.0f64; sz];
    let mut taps: Vec<Option<[(usize, f64); 4]>> = vec![None; sz];
    let mut ok = vec![false; sz];
    for i in 0..sz {
        if !flow.valid[i] {
            continue;
        }
        let [fx, fy] = flow.vectors[i];
        if let Some((v, t)) = bilinear_taps(k_a, dims, fx, fy) {
            warped[i] = v;
            taps[i] = Some(t);
            ok[i] = true;
        }
    }

    let mut patches = Vec::new();
    for (x0, y0) in patch_origins(dims, m) {
        let mut valid = true;
        'scan: for dy in 0..m {
            for dx in 0..m {
                if !ok[(y0 + dy) * dims.w + x0 + dx] {
                    valid = false;
                    break 'scan;
                }
            }
        }
        if valid {
            patches.push((x0, y0));
        }
    }
    if patches.is_empty() {
        return Err(Error::Data(
            "no fully valid patch in the flow overlap; the burst pair barely overlaps".into(),
        ));
    }
    let mut grad_a = vec![0.0f64; sz];
    let mut grad_b = vec![0.0f64; sz];
    let mut total = 0.0f64;
    let p_count = patches.len() as f64;
    for &(x0, y0) in &patches {
        // u = warped a, v = b
        let mut dot = 0.0f64;
        let mut nu2 = 0.0f64;
        let mut nv2 = 0.0f64;
        for dy in 0..m {
            for dx in 0..m {
                let i = (y0 + dy) * dims.w + x0 + dx;
                let u = warped[i];
                let v = k_b[i] as f64;
                dot += u * v;
                nu2 += u * u;
                nv2 += v * v;
            }
        }
        let nu = nu2.sqrt();
        let nv = nv2.sqrt();
        if nu < 1e-12 || nv < 1e-12 {
            // degenerate all-zero patch: cosine undefined, no gradient
            total += 1.0;
            continue;
        }
        let cos = dot / (nu * nv);
        total += 1.0 - cos;
        for dy in 0..m {
            for dx in 0..m {
                let i = (y0 + dy) * dims.w + x0 + dx;
                let u = warped[i];
                let v = k_b[i] as f64;
                let du = -(v / (nu * nv) - cos * u / nu2) / p_count;
                let dv = -(u / (nu * nv) - cos * v / nv2) / p_count;
                grad_b[i] += dv;
                if let Some(t) = &taps[i] {
                    for &(j, w) in t {
                        grad_a[j] += du * w;
                    }
                }
            }
        }
    }
    Ok((total / p_count, grad_a, grad_b))
}

/// Local peakiness loss: 1 - mean over overlapping M x M patches of
/// (max - mean). Returns the loss and its gradient.
pub fn peakiness_loss(k: &[f32], dims: (usize, usize), m: usize) -> Result<(f64, Vec<f64>)> {
    let dims = MapDims { w: dims.0, h: dims.1 };
    if k.len() != dims.w * dims.h {
        return Err(Error::Data("confidence map size mismatch".into()));
    }
    let origins = patch_origins(dims, m);
    if origins.is_empty() {
        return Err(Error::Data(format!(
            "map {}x{} smaller than patch size {m}",
            dims.w, dims.h
        )));
    }
    let p_count = origins.len() as f64;
    let m2 = (m * m) as f64;
    let mut grad = vec![0.0f64; k.len()];
    let mut acc = 0.0f64;
    for (x0, y0) in origins {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0usize;
        let mut sum = 0.0f64;
        for dy in 0..m {
            for dx in 0..m {
                let i = (y0 + dy) * dims.w + x0 + dx;
                let v = k[i] as f64;
                sum += v;
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
        }
        acc += best - sum / m2;
        // d loss / dk = -(1/P) * (d max - d mean)
        grad[best_i] -= 1.0 / p_count;
        for dy in 0..m {
            for dx in 0..m {
                let i = (y0 + dy) * dims.w + x0 + dx;
                grad[i] += 1.0 / (p_count * m2);
            }
        }
    }
    Ok((1.0 - acc / p_count, grad))
}

/// Detection loss of a burst pair (cosine similarity plus averaged
/// peakiness, Eq. of the detection objective). `flow` relates B-grid pixels
/// to A-frame coordinates.
pub fn detection_loss(
    out_a: &NetworkOutput,
    out_b: &NetworkOutput,
    flow: &FlowMap,
    cfg: &LossConfig,
) -> Result<(LossTerms, PairGrads)> {
    cfg.validate()?;
    let dims = (out_a.width, out_a.height);
    if out_b.width != out_a.width || out_b.height != out_a.height {
        return Err(Error::Data("paired outputs must share dimensions".into()));
    }
    let m = cfg.patch_size;
    let (l_c, ga_c, gb_c) = cosim_loss(&out_a.detection, &out_b.detection, dims, flow, m)?;
    let (l_pa, ga_p) = peakiness_loss(&out_a.detection, dims, m)?;
    let (l_pb, gb_p) = peakiness_loss(&out_b.detection, dims, m)?;
    let l_det = l_c + (l_pa + l_pb) / 2.0;

    let mut grads = PairGrads {
        a: OutputGrads::zeros(out_a),
        b: OutputGrads::zeros(out_b),
    };
    for (i, g) in grads.a.d_detection.iter_mut().enumerate() {
        *g = (ga_c[i] + 0.5 * ga_p[i]) as f32;
    }
    for (i, g) in grads.b.d_detection.iter_mut().enumerate() {
        *g = (gb_c[i] + 0.5 * gb_p[i]) as f32;
    }
    let terms = LossTerms {
        total: l_det,
        detection: l_det,
        cosim: l_c,
        peakiness_a: l_pa,
        peakiness_b: l_pb,
        reliability: 0.0,
    };
    Ok((terms, grads))
}

fn descriptor_at(t: &Tensor, idx: usize) -> Vec<f64> {
    let sz = t.height * t.width;
    (0..t.channels).map(|c| t.data[c * sz + idx] as f64).collect()
}

/// Soft-binned average precision of one distance row.
///
/// Distances are histogrammed over [0, 2] with `bins` triangular kernels;
/// precision accumulates over the cumulative histogram. Returns the AP and
/// d(AP)/d(distance_j). Compare against [`exact_ap`] for the sorted-rank
/// reference value.
pub fn soft_ap(distances: &[f64], positive: &[bool], bins: usize) -> (f64, Vec<f64>) {
    let n = distances.len();
    let delta = 2.0 / (bins - 1) as f64;
    let npos = positive.iter().filter(|p| **p).count() as f64;
    debug_assert!(npos > 0.0);
    let mut pos_k = vec![0.0f64; bins];
    let mut all_k = vec![0.0f64; bins];
    let weight = |d: f64, k: usize| -> f64 {
        let t = k as f64 * delta;
        (1.0 - (d - t).abs() / delta).max(0.0)
    };
    for (j, &d) in distances.iter().enumerate() {
        for k in 0..bins {
            let w = weight(d, k);
            if w > 0.0 {
                all_k[k] += w;
                if positive[j] {
                    pos_k[k] += w;
                }
            }
        }
    }
    let mut cum_p = vec![0.0f64; bins];
    let mut cum_a = vec![0.0f64; bins];
    let mut p = 0.0;
    let mut a = 0.0;
    for k in 0..bins {
        p += pos_k[k];
        a += all_k[k];
        cum_p[k] = p;
        cum_a[k] = a;
    }
    let eps = 1e-12;
    let prec: Vec<f64> = (0..bins)
        .map(|k| if cum_a[k] > eps { cum_p[k] / cum_a[k] } else { 0.0 })
        .collect();
    let ap: f64 = (0..bins).map(|k| pos_k[k] / npos * prec[k]).sum();

    // suffix sums for the gradient through the cumulative precision
    let mut s1 = vec![0.0f64; bins + 1]; // sum_{k' >= k} pos / cum_a
    let mut s2 = vec![0.0f64; bins + 1]; // sum_{k' >= k} pos * cum_p / cum_a^2
    for k in (0..bins).rev() {
        let (t1, t2) = if cum_a[k] > eps {
            (pos_k[k] / cum_a[k], pos_k[k] * cum_p[k] / (cum_a[k] * cum_a[k]))
        } else {
            (0.0, 0.0)
        };
        s1[k] = s1[k + 1] + t1;
        s2[k] = s2[k + 1] + t2;
    }
    let mut d_dist = vec![0.0f64; n];
    for (j, &d) in distances.iter().enumerate() {
        let is_pos = positive[j];
        let mut g = 0.0f64;
        for k in 0..bins {
            let t = k as f64 * delta;
            let u = (d - t) / delta;
            if u.abs() >= 1.0 || u == 0.0 {
                continue;
            }
            let dw = -u.signum() / delta;
            // d AP / d s_jk: positives contribute prec_k directly and feed
            // every cumulative precision at k' >= k; all candidates dilute
            // the denominators at k' >= k
            let direct = if is_pos { prec[k] } else { 0.0 };
            let through = if is_pos { s1[k] } else { 0.0 } - s2[k];
            g += (direct + through) / npos * dw;
        }
        d_dist[j] = g;
    }
    (ap, d_dist)
}

/// Exact average precision by sorted ranking (oracle and reporting).
pub fn exact_ap(distances: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap());
    let npos = positive.iter().filter(|p| **p).count();
    if npos == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut acc = 0.0f64;
    for (rank, &j) in order.iter().enumerate() {
        if positive[j] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    acc / npos as f64
}

/// Average-precision reliability loss.
///
/// Query pixels are taken on a stride-M grid (anchored at M/2, so queries
/// sit at patch centers) over the valid-flow pixels of B's grid, capped at
/// `cfg.sample_count`; each query's descriptor is read
/// from burst A at the flow target, its candidates are all sampled burst-B
/// descriptors, and candidates within `positive_tolerance_px` of the
/// query's own grid position count as positives. Per query the loss is
/// `1 - [AP * R + kappa * (1 - R)]` with `R` read from `r_a` at the flow
/// target; the result is the mean, with gradients for `f_a`, `f_b`, `r_a`.
pub fn ap_reliability_loss(
    f_a: &Tensor,
    f_b: &Tensor,
    r_a: &[f32],
    flow: &FlowMap,
    cfg: &LossConfig,
) -> Result<(f64, Tensor, Tensor, Vec<f64>)> {
    cfg.validate()?;
    let (w, h) = (f_b.width, f_b.height);
    if flow.width != w || flow.height != h {
        return Err(Error::Data("flow map size mismatch".into()));
    }
    let m = cfg.patch_size;
    let mut a_indices: Vec<usize> = Vec::new();
    let mut b_slots: Vec<usize> = Vec::new();
    let mut b_pos: Vec<(f64, f64)> = Vec::new();
    'grid: for y in (m / 2..h).step_by(m) {
        for x in (m / 2..w).step_by(m) {
            if b_slots.len() >= cfg.sample_count {
                break 'grid;
            }
            let i = y * w + x;
            if !flow.valid[i] {
                continue;
            }
            let [ax, ay] = flow.vectors[i];
            let axr = ax.round();
            let ayr = ay.round();
            if axr < 0.0
                || ayr < 0.0
                || axr > (f_a.width - 1) as f64
                || ayr > (f_a.height - 1) as f64
            {
                continue;
            }
            a_indices.push(ayr as usize * f_a.width + axr as usize);
            b_slots.push(i);
            b_pos.push((x as f64, y as f64));
        }
    }
    let n = b_slots.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "only {n} valid AP queries; need at least 2"
        )));
    }

    let dim = f_a.channels;
    let a_desc: Vec<Vec<f64>> = a_indices.iter().map(|&i| descriptor_at(f_a, i)).collect();
    let b_desc: Vec<Vec<f64>> = b_slots.iter().map(|&i| descriptor_at(f_b, i)).collect();

    let mut grad_fa = Tensor::zeros(dim, f_a.height, f_a.width);
    let mut grad_fb = Tensor::zeros(dim, h, w);
    let mut grad_ra = vec![0.0f64; r_a.len()];
    let sz_a = f_a.height * f_a.width;
    let sz_b = h * w;

    let mut total = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for qi in 0..n {
        let qd = &a_desc[qi];
        let mut distances = vec![0.0f64; n];
        let mut positive = vec![false; n];
        for (j, cd) in b_desc.iter().enumerate() {
            let mut s = 0.0f64;
            for c in 0..dim {
                let d = qd[c] - cd[c];
                s += d * d;
            }
            distances[j] = s.sqrt();
            let dxp = b_pos[j].0 - b_pos[qi].0;
            let dyp = b_pos[j].1 - b_pos[qi].1;
            positive[j] = (dxp * dxp + dyp * dyp).sqrt() <= cfg.positive_tolerance_px;
        }
        let (ap, d_dist) = soft_ap(&distances, &positive, cfg.ap_bins);
        let r = r_a[a_indices[qi]] as f64;
        total += 1.0 - (ap * r + cfg.ap_kappa * (1.0 - r));
        grad_ra[a_indices[qi]] += (cfg.ap_kappa - ap) * inv_n;
        let dap_scale = -r * inv_n; // d loss / d AP
        for (j, cd) in b_desc.iter().enumerate() {
            let g = dap_scale * d_dist[j];
            if g == 0.0 {
                continue;
            }
            let d = distances[j];
            if d < 1e-9 {
                continue; // coincident descriptors: zero subgradient
            }
            for c in 0..dim {
                let diff = g * (qd[c] - cd[c]) / d;
                grad_fa.data[c * sz_a + a_indices[qi]] += diff as f32;
                grad_fb.data[c * sz_b + b_slots[j]] -= diff as f32;
            }
        }
    }
    Ok((total * inv_n, grad_fa, grad_fb, grad_ra))
}

/// Full loss of a burst pair: detection plus weighted reliability.
pub fn total_loss(
    out_a: &NetworkOutput,
    out_b: &NetworkOutput,
    flow: &FlowMap,
    cfg: &LossConfig,
) -> Result<(LossTerms, PairGrads)> {
    let (mut terms, mut grads) = detection_loss(out_a, out_b, flow, cfg)?;
    let wr = cfg.reliability_weight;
    if wr != 0.0 {
        let (l_rel, g_fa, g_fb, g_ra) = ap_reliability_loss(
            &out_a.descriptors,
            &out_b.descriptors,
            &out_a.reliability,
            flow,
            cfg,
        )?;
        terms.reliability = l_rel;
        terms.total = terms.detection + wr * l_rel;
        for (dst, src) in grads.a.d_descriptors.data.iter_mut().zip(&g_fa.data) {
            *dst += wr as f32 * *src;
        }
        for (dst, src) in grads.b.d_descriptors.data.iter_mut().zip(&g_fb.data) {
            *dst += wr as f32 * *src;
        }
        for (dst, &src) in grads.a.d_reliability.iter_mut().zip(&g_ra) {
            *dst += (wr * src) as f32;
        }
    }
    if !terms.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: {terms:?}")));
    }
    Ok((terms, grads))
}
