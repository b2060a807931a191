//! Direct 2D convolution with dilation, tuned for the CPU training loop.
//!
//! All variants run on a zero-padded copy of the input so the hot loops are
//! branch-free. The interior kernel register-tiles 4 output channels by 32
//! columns and blocks over input channels so the streamed window stays
//! cache-resident. The per-unit arithmetic order is fixed, so results are
//! bit-deterministic regardless of thread count.
//!
//! Odd kernels center their taps ({-d, 0, +d} for 3x3 with dilation d);
//! even kernels use the symmetric half-offsets ({-d/2, +d/2} for 2x2,
//! rounding toward zero for odd dilations).

use super::tensor::Tensor;
use rayon::prelude::*;

const TX: usize = 16; // columns per register tile
const CB: usize = 4; // output channels per register tile
const CI_BLK: usize = 32; // input channels streamed per pass

/// Static description of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDesc {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDesc {
    /// Tap displacements in (dy, dx) order, row-major over the kernel.
    pub fn taps(&self) -> Vec<(isize, isize)> {
        let k = self.kernel as isize;
        let d = self.dilation as isize;
        let center = ((k - 1) * d) / 2;
        let mut out = Vec::with_capacity((k * k) as usize);
        for ky in 0..k {
            for kx in 0..k {
                out.push((ky * d - center, kx * d - center));
            }
        }
        out
    }

    /// Zero-padding width that makes every output pixel interior.
    pub fn pad(&self) -> usize {
        self.taps()
            .iter()
            .map(|&(dy, dx)| dy.abs().max(dx.abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }
}

/// Copy `t` into a zero-padded buffer with `pad` pixels on every side.
fn pad_tensor(t: &Tensor, pad: usize) -> (Vec<f32>, usize, usize) {
    let pw = t.width + 2 * pad;
    let ph = t.height + 2 * pad;
    let mut buf = vec![0.0f32; t.channels * ph * pw];
    for c in 0..t.channels {
        let src = t.plane(c);
        let dst = &mut buf[c * ph * pw..(c + 1) * ph * pw];
        for y in 0..t.height {
            let s = &src[y * t.width..(y + 1) * t.width];
            dst[(y + pad) * pw + pad..(y + pad) * pw + pad + t.width].copy_from_slice(s);
        }
    }
    (buf, pw, ph)
}

struct Padded<'a> {
    buf: &'a [f32],
    pw: usize,
    ph: usize,
}

/// Compute CB output planes for one co block, streaming input channels in
/// cache-sized chunks. `w_block` holds the weights of these CB channels,
/// laid out [CB][cin][kk]; taps are padded-grid offsets (non-negative).
#[allow(clippy::too_many_arguments)]
#[inline(never)]
fn conv_block_tiled<const KK: usize>(
    out: &mut [f32],
    h: usize,
    w: usize,
    padded: &Padded,
    cin: usize,
    taps: &[(usize, usize); KK],
    w_block: &[f32],
    bias: [f32; CB],
) {
    let plane = h * w;
    let (pw, ph) = (padded.pw, padded.ph);
    let full_tiles = w / TX;
    let rem = w - full_tiles * TX;
    let mut ci0 = 0usize;
    let mut first = true;
    while ci0 < cin {
        let ci1 = (ci0 + CI_BLK).min(cin);
        for y in 0..h {
            // full register tiles
            for tile in 0..full_tiles {
                let x0 = tile * TX;
                let mut acc = [[0.0f32; TX]; CB];
                for ci in ci0..ci1 {
                    let pbase = ci * ph * pw;
                    for (t, &(ty, tx)) in taps.iter().enumerate() {
                        let row = &padded.buf[pbase + (y + ty) * pw + x0 + tx..][..TX];
                        for b in 0..CB {
                            let wv = w_block[b * cin * KK + ci * KK + t];
                            let a = &mut acc[b];
                            for i in 0..TX {
                                a[i] = row[i].mul_add(wv, a[i]);
                            }
                        }
                    }
                }
                for b in 0..CB {
                    let orow = &mut out[b * plane + y * w + x0..][..TX];
                    if first {
                        for i in 0..TX {
                            orow[i] = acc[b][i] + bias[b];
                        }
                    } else {
                        for i in 0..TX {
                            orow[i] += acc[b][i];
                        }
                    }
                }
            }
            // remainder columns (variable length < TX)
            if rem > 0 {
                let x0 = full_tiles * TX;
                let mut acc = [[0.0f32; TX]; CB];
                for ci in ci0..ci1 {
                    let pbase = ci * ph * pw;
                    for (t, &(ty, tx)) in taps.iter().enumerate() {
                        let row = &padded.buf[pbase + (y + ty) * pw + x0 + tx..][..rem];
                        for b in 0..CB {
                            let wv = w_block[b * cin * KK + ci * KK + t];
                            let a = &mut acc[b];
                            for (i, &v) in row.iter().enumerate() {
                                a[i] = v.mul_add(wv, a[i]);
                            }
                        }
                    }
                }
                for b in 0..CB {
                    let orow = &mut out[b * plane + y * w + x0..][..rem];
                    if first {
                        for (i, o) in orow.iter_mut().enumerate() {
                            *o = acc[b][i] + bias[b];
                        }
                    } else {
                        for (i, o) in orow.iter_mut().enumerate() {
                            *o += acc[b][i];
                        }
                    }
                }
            }
        }
        first = false;
        ci0 = ci1;
    }
}

/// Scalar path for output channels that do not fill a CB block.
#[allow(clippy::too_many_arguments)]
fn conv_single_channel(
    out: &mut [f32],
    h: usize,
    w: usize,
    padded: &Padded,
    cin: usize,
    taps: &[(usize, usize)],
    w_chan: &[f32],
    bias: f32,
) {
    let (pw, ph) = (padded.pw, padded.ph);
    let kk = taps.len();
    for v in out.iter_mut() {
        *v = bias;
    }
    for ci in 0..cin {
        let pbase = ci * ph * pw;
        for (t, &(ty, tx)) in taps.iter().enumerate() {
            let wv = w_chan[ci * kk + t];
            for y in 0..h {
                let row = &padded.buf[pbase + (y + ty) * pw + tx..][..w];
                let orow = &mut out[y * w..(y + 1) * w];
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = v.mul_add(wv, *o);
                }
            }
        }
    }
}

/// Lane-partitioned dot-product accumulation; the fixed lane mapping keeps
/// the reduction order independent of chunking.
#[inline(always)]
fn lane_dot(a: &[f32], b: &[f32], lanes: &mut [f32; 16]) {
    let ca = a.chunks_exact(16);
    let cb = b.chunks_exact(16);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..16 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    for (i, (xa, xb)) in ra.iter().zip(rb).enumerate() {
        lanes[i] += xa * xb;
    }
}

fn run_conv(
    desc: &ConvDesc,
    weights: &[f32],
    bias: Option<&[f32]>,
    input: &Tensor,
    out: &mut Tensor,
) {
    let pad = desc.pad();
    let (buf, pw, ph) = pad_tensor(input, pad);
    let padded = Padded { buf: &buf, pw, ph };
    let kk = desc.kernel * desc.kernel;
    let taps: Vec<(usize, usize)> = desc
        .taps()
        .iter()
        .map(|&(dy, dx)| ((dy + pad as isize) as usize, (dx + pad as isize) as usize))
        .collect();
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    let full_blocks = desc.cout / CB;
    let cin = desc.cin;

    let (blocks, tail) = out.data.split_at_mut(full_blocks * CB * plane);
    blocks
        .par_chunks_mut(CB * plane)
        .enumerate()
        .for_each(|(blk, chunk)| {
            let co0 = blk * CB;
            let w_block = &weights[co0 * cin * kk..(co0 + CB) * cin * kk];
            let mut b = [0.0f32; CB];
            if let Some(bias) = bias {
                b.copy_from_slice(&bias[co0..co0 + CB]);
            }
            match kk {
                9 => {
                    let t: &[(usize, usize); 9] = taps.as_slice().try_into().unwrap();
                    conv_block_tiled::<9>(chunk, h, w, &padded, cin, t, w_block, b);
                }
                4 => {
                    let t: &[(usize, usize); 4] = taps.as_slice().try_into().unwrap();
                    conv_block_tiled::<4>(chunk, h, w, &padded, cin, t, w_block, b);
                }
                1 => {
                    let t: &[(usize, usize); 1] = taps.as_slice().try_into().unwrap();
                    conv_block_tiled::<1>(chunk, h, w, &padded, cin, t, w_block, b);
                }
                _ => {
                    for (i, ochan) in chunk.chunks_mut(plane).enumerate() {
                        let co = co0 + i;
                        conv_single_channel(
                            ochan,
                            h,
                            w,
                            &padded,
                            cin,
                            &taps,
                            &weights[co * cin * kk..(co + 1) * cin * kk],
                            bias.map_or(0.0, |bvec| bvec[co]),
                        );
                    }
                }
            }
        });
    tail.par_chunks_mut(plane).enumerate().for_each(|(i, ochan)| {
        let co = full_blocks * CB + i;
        conv_single_channel(
            ochan,
            h,
            w,
            &padded,
            cin,
            &taps,
            &weights[co * cin * kk..(co + 1) * cin * kk],
            bias.map_or(0.0, |bvec| bvec[co]),
        );
    });
}

/// out[co] = bias[co] + sum_ci sum_taps w[co][ci][t] * in[ci] shifted by tap.
pub fn conv_forward(
    desc: &ConvDesc,
    weights: &[f32],
    bias: Option<&[f32]>,
    input: &Tensor,
) -> Tensor {
    debug_assert_eq!(input.channels, desc.cin);
    debug_assert_eq!(weights.len(), desc.weight_len());
    let mut out = Tensor::zeros(desc.cout, input.height, input.width);
    run_conv(desc, weights, bias, input, &mut out);
    out
}

/// Gradient with respect to the input: the adjoint convolution. Implemented
/// by reusing the forward kernel with transposed channels and reversed taps
/// (tap sets here are symmetric under negation, and reversal negates them).
pub fn conv_backward_input(desc: &ConvDesc, weights: &[f32], grad_out: &Tensor) -> Tensor {
    let kk = desc.kernel * desc.kernel;
    let mut wt = vec![0.0f32; weights.len()];
    for co in 0..desc.cout {
        for ci in 0..desc.cin {
            for t in 0..kk {
                wt[(ci * desc.cout + co) * kk + (kk - 1 - t)] =
                    weights[(co * desc.cin + ci) * kk + t];
            }
        }
    }
    let tdesc = ConvDesc {
        cin: desc.cout,
        cout: desc.cin,
        kernel: desc.kernel,
        dilation: desc.dilation,
    };
    let mut out = Tensor::zeros(desc.cin, grad_out.height, grad_out.width);
    run_conv(&tdesc, &wt, None, grad_out, &mut out);
    out
}

/// Accumulate weight (and optional bias) gradients:
/// gw[co][ci][t] += sum_pixels grad_out[co] * input[ci] shifted by tap.
/// Parallelized over input-channel chunks (each chunk owns disjoint gw
/// columns); sums use 8-lane partial accumulation, which vectorizes and
/// keeps the reduction order fixed.
pub fn conv_backward_weights(
    desc: &ConvDesc,
    input: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut [f32],
    grad_bias: Option<&mut [f32]>,
) {
    debug_assert_eq!(grad_w.len(), desc.weight_len());
    let pad = desc.pad();
    let (buf, pw, ph) = pad_tensor(input, pad);
    let kk = desc.kernel * desc.kernel;
    let taps: Vec<(usize, usize)> = desc
        .taps()
        .iter()
        .map(|&(dy, dx)| ((dy + pad as isize) as usize, (dx + pad as isize) as usize))
        .collect();
    let (h, w) = (input.height, input.width);
    let cin = desc.cin;
    let cout = desc.cout;

    // chunk over input channels; chunk k owns gw columns [ci0, ci1) of
    // every output channel, so the scattered writes never collide
    let n_chunks = cin.div_ceil(CI_BLK);
    let gw_cell = std::sync::atomic::AtomicPtr::new(grad_w.as_mut_ptr());
    let gw_addr = gw_cell.load(std::sync::atomic::Ordering::Relaxed) as usize;
    (0..n_chunks).into_par_iter().for_each(|chunk| {
        let ci0 = chunk * CI_BLK;
        let ci1 = (ci0 + CI_BLK).min(cin);
        let gw = gw_addr as *mut f32;
        for co in 0..cout {
            let gplane = grad_out.plane(co);
            for ci in ci0..ci1 {
                let pbase = ci * ph * pw;
                for (t, &(ty, tx)) in taps.iter().enumerate() {
                    let mut lanes = [0.0f32; 16];
                    for y in 0..h {
                        let grow = &gplane[y * w..(y + 1) * w];
                        let irow = &buf[pbase + (y + ty) * pw + tx..][..w];
                        lane_dot(grow, irow, &mut lanes);
                    }
                    let mut s = 0.0f64;
                    for &l in &lanes {
                        s += l as f64;
                    }
                    // disjoint per chunk: chunk owns ci in [ci0, ci1)
                    unsafe {
                        *gw.add((co * cin + ci) * kk + t) += s as f32;
                    }
                }
            }
        }
    });

    if let Some(gb) = grad_bias {
        gb.par_iter_mut().enumerate().for_each(|(co, out)| {
            let gplane = grad_out.plane(co);
            let mut lanes = [0.0f32; 8];
            for (i, &g) in gplane.iter().enumerate() {
                lanes[i % 8] += g;
            }
            let mut s = 0.0f64;
            for l in lanes {
                s += l as f64;
            }
            *out += s as f32;
        });
    }
}

/// Internal throughput probe of the bare tile kernel (temporary).
pub fn bench_tile_internal() -> f64 {
    let (h, w, cin, cout) = (64usize, 64usize, 128usize, 128usize);
    let pad = 4usize;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let buf = vec![0.5f32; cin * ph * pw];
    let padded = Padded { buf: &buf, pw, ph };
    let taps: [(usize, usize); 9] = [
        (0, 0), (0, 4), (0, 8), (4, 0), (4, 4), (4, 8), (8, 0), (8, 4), (8, 8),
    ];
    let wts = vec![0.01f32; cout * cin * 9];
    let mut out = vec![0.0f32; cout * h * w];
    let reps = 50;
    let t = std::time::Instant::now();
    for _ in 0..reps {
        for cb in 0..cout / CB {
            let co0 = cb * CB;
            let w_block = &wts[co0 * cin * 9..(co0 + CB) * cin * 9];
            let chunk = &mut out[co0 * h * w..(co0 + CB) * h * w];
            conv_block_tiled::<9>(chunk, h, w, &padded, cin, &taps, w_block, [0.0; CB]);
        }
    }
    let dt = t.elapsed().as_secs_f64();
    std::hint::black_box(&out);
    2.0 * reps as f64 * (64.0 * 64.0 * 128.0 * 128.0 * 9.0) / dt / 1e9
}

/// Internal throughput probe (temporary).
pub fn bench_conv_internal() -> f64 {
    let desc = ConvDesc { cin: 128, cout: 128, kernel: 3, dilation: 4 };
    let mut input = Tensor::zeros(128, 64, 64);
    for (i, v) in input.data.iter_mut().enumerate() {
        *v = (i % 97) as f32 * 0.01;
    }
    let w: Vec<f32> = (0..desc.weight_len()).map(|i| (i % 31) as f32 * 0.001).collect();
    let reps = 50;
    let t = std::time::Instant::now();
    for _ in 0..reps {
        let o = conv_forward(&desc, &w, None, &input);
        std::hint::black_box(&o);
    }
    let dt = t.elapsed().as_secs_f64();
    2.0 * reps as f64 * (64.0 * 64.0 * 128.0 * 128.0 * 9.0) / dt / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut DetRng) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = rng.uniform_in(-1.0, 1.0) as f32;
        }
        t
    }

    /// Direct f64 reference convolution with zero padding.
    fn naive_conv(desc: &ConvDesc, wts: &[f32], bias: Option<&[f32]>, input: &Tensor) -> Vec<f64> {
        let taps = desc.taps();
        let kk = taps.len();
        let (h, w) = (input.height, input.width);
        let mut out = vec![0.0f64; desc.cout * h * w];
        for co in 0..desc.cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = bias.map_or(0.0, |b| b[co] as f64);
                    for ci in 0..desc.cin {
                        for (t, &(dy, dx)) in taps.iter().enumerate() {
                            let (iy, ix) = (y + dy, x + dx);
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += wts[(co * desc.cin + ci) * kk + t] as f64
                                * input.at(ci, iy as usize, ix as usize) as f64;
                        }
                    }
                    out[(co * h + y as usize) * w + x as usize] = s;
                }
            }
        }
        out
    }

    fn assert_close(got: &[f32], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (i, (&g, &w)) in got.iter().zip(want.iter()).enumerate() {
            let scale = w.abs().max(1.0);
            assert!(
                ((g as f64) - w).abs() <= tol * scale,
                "index {i}: got {g}, want {w}"
            );
        }
    }

    #[test]
    fn forward_matches_naive_3x3() {
        let mut rng = DetRng::seed_from(1);
        for &(h, w, dil) in &[(16usize, 16usize, 1usize), (20, 37, 2), (9, 70, 4), (8, 8, 1)] {
            let desc = ConvDesc { cin: 3, cout: 6, kernel: 3, dilation: dil };
            let input = random_tensor(3, h, w, &mut rng);
            let wts: Vec<f32> = (0..desc.weight_len())
                .map(|_| rng.uniform_in(-0.5, 0.5) as f32)
                .collect();
            let bias: Vec<f32> = (0..6).map(|_| rng.uniform_in(-0.2, 0.2) as f32).collect();
            let out = conv_forward(&desc, &wts, Some(&bias), &input);
            let want = naive_conv(&desc, &wts, Some(&bias), &input);
            assert_close(&out.data, &want, 1e-5);
        }
    }

    #[test]
    fn forward_matches_naive_with_many_channels() {
        // exercises the input-channel chunking (cin > CI_BLK)
        let mut rng = DetRng::seed_from(7);
        let desc = ConvDesc { cin: 70, cout: 9, kernel: 3, dilation: 2 };
        let input = random_tensor(70, 18, 45, &mut rng);
        let wts: Vec<f32> = (0..desc.weight_len())
            .map(|_| rng.uniform_in(-0.2, 0.2) as f32)
            .collect();
        let bias: Vec<f32> = (0..9).map(|_| rng.uniform_in(-0.2, 0.2) as f32).collect();
        let out = conv_forward(&desc, &wts, Some(&bias), &input);
        let want = naive_conv(&desc, &wts, Some(&bias), &input);
        assert_close(&out.data, &want, 1e-4);
    }

    #[test]
    fn forward_matches_naive_2x2_and_1x1() {
        let mut rng = DetRng::seed_from(2);
        for &(k, dil) in &[(2usize, 4usize), (2, 2), (1, 1)] {
            let desc = ConvDesc { cin: 5, cout: 7, kernel: k, dilation: dil };
            let input = random_tensor(5, 24, 33, &mut rng);
            let wts: Vec<f32> = (0..desc.weight_len())
                .map(|_| rng.uniform_in(-0.5, 0.5) as f32)
                .collect();
            let out = conv_forward(&desc, &wts, None, &input);
            let want = naive_conv(&desc, &wts, None, &input);
            assert_close(&out.data, &want, 1e-5);
        }
    }

    #[test]
    fn backward_input_matches_adjoint_oracle() {
        let mut rng = DetRng::seed_from(3);
        for &(k, dil) in &[(3usize, 2usize), (2, 4), (1, 1)] {
            let desc = ConvDesc { cin: 4, cout: 6, kernel: k, dilation: dil };
            let gout = random_tensor(6, 13, 21, &mut rng);
            let wts: Vec<f32> = (0..desc.weight_len())
                .map(|_| rng.uniform_in(-0.5, 0.5) as f32)
                .collect();
            let gin = conv_backward_input(&desc, &wts, &gout);
            let taps = desc.taps();
            let kk = taps.len();
            let (h, w) = (13usize, 21usize);
            let mut want = vec![0.0f64; 4 * h * w];
            for ci in 0..4 {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut s = 0.0f64;
                        for co in 0..6 {
                            for (t, &(dy, dx)) in taps.iter().enumerate() {
                                let (oy, ox) = (y - dy, x - dx);
                                if oy < 0 || ox < 0 || oy >= h as isize || ox >= w as isize {
                                    continue;
                                }
                                s += wts[(co * 4 + ci) * kk + t] as f64
                                    * gout.at(co, oy as usize, ox as usize) as f64;
                            }
                        }
                        want[(ci * h + y as usize) * w + x as usize] = s;
                    }
                }
            }
            assert_close(&gin.data, &want, 1e-5);
        }
    }

    #[test]
    fn backward_weights_matches_oracle() {
        let mut rng = DetRng::seed_from(4);
        // cin > CI_BLK exercises the chunked parallel path
        let desc = ConvDesc { cin: 40, cout: 5, kernel: 3, dilation: 2 };
        let input = random_tensor(40, 17, 19, &mut rng);
        let gout = random_tensor(5, 17, 19, &mut rng);
        let mut gw = vec![0.0f32; desc.weight_len()];
        let mut gb = vec![0.0f32; 5];
        conv_backward_weights(&desc, &input, &gout, &mut gw, Some(&mut gb));
        let taps = desc.taps();
        let kk = taps.len();
        for co in 0..5 {
            let mut bsum = 0.0f64;
            for y in 0..17 {
                for x in 0..19 {
                    bsum += gout.at(co, y, x) as f64;
                }
            }
            assert!(((gb[co] as f64) - bsum).abs() <= 1e-4 * bsum.abs().max(1.0));
            for ci in 0..40 {
                for (t, &(dy, dx)) in taps.iter().enumerate() {
                    let mut s = 0.0f64;
                    for y in 0..17isize {
                        for x in 0..19isize {
                            let (iy, ix) = (y + dy, x + dx);
                            if iy < 0 || ix < 0 || iy >= 17 || ix >= 19 {
                                continue;
                            }
                            s += gout.at(co, y as usize, x as usize) as f64
                                * input.at(ci, iy as usize, ix as usize) as f64;
                        }
                    }
                    let got = gw[(co * 40 + ci) * kk + t] as f64;
                    assert!((got - s).abs() <= 1e-4 * s.abs().max(1.0), "co={co} ci={ci} t={t}");
                }
            }
        }
    }

    #[test]
    fn taps_are_centered() {
        let d3 = ConvDesc { cin: 1, cout: 1, kernel: 3, dilation: 2 };
        assert_eq!(d3.taps()[0], (-2, -2));
        assert_eq!(d3.taps()[4], (0, 0));
        assert_eq!(d3.pad(), 2);
        let d2 = ConvDesc { cin: 1, cout: 1, kernel: 2, dilation: 4 };
        assert_eq!(d2.taps(), vec![(-2, -2), (-2, 2), (2, -2), (2, 2)]);
        assert_eq!(d2.pad(), 2);
    }

    #[test]
    fn deterministic_across_calls() {
        let mut rng = DetRng::seed_from(5);
        let desc = ConvDesc { cin: 40, cout: 12, kernel: 3, dilation: 1 };
        let input = random_tensor(40, 33, 47, &mut rng);
        let wts: Vec<f32> = (0..desc.weight_len())
            .map(|_| rng.uniform_in(-0.5, 0.5) as f32)
            .collect();
        let a = conv_forward(&desc, &wts, None, &input);
        let b = conv_forward(&desc, &wts, None, &input);
        assert_eq!(a.data, b.data);
        let gout = random_tensor(12, 33, 47, &mut rng);
        let mut gw1 = vec![0.0f32; desc.weight_len()];
        let mut gw2 = vec![0.0f32; desc.weight_len()];
        conv_backward_weights(&desc, &input, &gout, &mut gw1, None);
        conv_backward_weights(&desc, &input, &gout, &mut gw2, None);
        assert_eq!(gw1, gw2);
    }
}
