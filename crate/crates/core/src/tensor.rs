//! Channel-stacked real images and feature maps.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Result, ShdlError};

/// H×W×C real-valued image or feature stack, stored channel-first.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    /// Wraps a `(channels, height, width)` array.
    pub fn from_array(data: Array3<f64>) -> Self {
        Self { data }
    }

    /// Stacks equally sized 2D maps as channels.
    pub fn from_channels(maps: &[Array2<f64>]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| ShdlError::Validation("no channels to stack".into()))?;
        let (h, w) = first.dim();
        let mut data = Array3::zeros((maps.len(), h, w));
        for (c, m) in maps.iter().enumerate() {
            if m.dim() != (h, w) {
                return Err(ShdlError::Dimension(format!(
                    "channel {c} is {:?}, expected {:?}",
                    m.dim(),
                    (h, w)
                )));
            }
            data.index_axis_mut(Axis(0), c).assign(m);
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fails on NaN or infinite entries.
    pub fn validate_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(ShdlError::Validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }

    /// Cyclic shift of every channel by `(dy, dx)` pixels.
    pub fn cyclic_shift(&self, dy: isize, dx: isize) -> Self {
        let (c, h, w) = self.data.dim();
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for y in 0..h {
                let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
                for x in 0..w {
                    let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                    out[[ch, y, x]] = self.data[[ch, sy, sx]];
                }
            }
        }
        Self { data: out }
    }

    /// Bicubic resize of every channel to `height × width`.
    pub fn resize_bicubic(&self, height: usize, width: usize) -> Self {
        let maps: Vec<Array2<f64>> = (0..self.channels())
            .map(|c| resize_bicubic(self.channel(c), height, width))
            .collect();
        let mut data = Array3::zeros((maps.len(), height, width));
        for (c, m) in maps.iter().enumerate() {
            data.index_axis_mut(Axis(0), c).assign(m);
        }
        Self { data }
    }
}

/// Keys cubic convolution kernel with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps: (first source index, four weights), edges clamped.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                let pos = base as isize + k as isize - 1;
                idx[k] = pos.clamp(0, n_in as isize - 1) as usize;
                w[k] = cubic_weight(t - off);
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling of a single channel.
pub fn resize_bicubic(src: ArrayView2<'_, f64>, height: usize, width: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let col_taps = cubic_taps(w, width);
    let row_taps = cubic_taps(h, height);
    let mut tmp = Array2::zeros((h, width));
    for y in 0..h {
        for (x, (idx, wt)) in col_taps.iter().enumerate() {
            tmp[[y, x]] = (0..4).map(|k| wt[k] * src[[y, idx[k]]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((height, width));
    for (y, (idx, wt)) in row_taps.iter().enumerate() {
        for x in 0..width {
            out[[y, x]] = (0..4).map(|k| wt[k] * tmp[[idx[k], x]]).sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_is_identity() {
        let src = Array2::from_shape_fn((7, 5), |(y, x)| (y * 5 + x) as f64 * 0.37 - 1.0);
        let out = resize_bicubic(src.view(), 7, 5);
        assert_eq!(out, src);
    }

    #[test]
    fn constants_survive_resampling() {
        let src = Array2::from_elem((32, 32), 0.731);
        let out = resize_bicubic(src.view(), 48, 48);
        assert!(out.iter().all(|v| (v - 0.731).abs() < 1e-9));
    }

    #[test]
    fn cyclic_shift_wraps() {
        let t = ImageTensor::from_array(Array3::from_shape_fn((1, 3, 3), |(_, y, x)| {
            (y * 3 + x) as f64
        }));
        let s = t.cyclic_shift(1, 0);
        assert_eq!(s.channel(0)[[0, 0]], 6.0);
        assert_eq!(s.channel(0)[[1, 2]], 2.0);
    }
}
