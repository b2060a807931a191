//! Planar C x H x W float tensor used by the network.

/// Dense f32 tensor in channel-major (planar) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let sz = self.height * self.width;
        &self.data[c * sz..(c + 1) * sz]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let sz = self.height * self.width;
        &mut self.data[c * sz..(c + 1) * sz]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    /// Per-pixel vector across channels at (y, x).
    pub fn pixel_vector(&self, y: usize, x: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.channels);
        let sz = self.height * self.width;
        let off = y * self.width + x;
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[c * sz + off];
        }
    }
}
