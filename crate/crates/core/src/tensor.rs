//! Dense image tensors and binary masks.

use crate::error::{Error, Result};

/// A single image or feature map: `channels × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "{} values cannot fill a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Sets every channel to zero at positions where `mask` is invalid.
    pub fn zero_outside(&mut self, mask: &Mask) {
        debug_assert_eq!((mask.height, mask.width), (self.height, self.width));
        let n = self.plane_len();
        for c in 0..self.channels {
            let plane = &mut self.data[c * n..(c + 1) * n];
            for (v, &keep) in plane.iter_mut().zip(&mask.bits) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Batch of images, `(batch, channel, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_images(images: &[Planes]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let [c, h, w] = first.shape();
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.shape() != [c, h, w] {
                return Err(Error::InvalidArgument(
                    "images in a batch must share a shape".into(),
                ));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Self {
            shape: [images.len(), c, h, w],
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn image(&self, i: usize) -> Planes {
        let [_, c, h, w] = self.shape;
        let n = c * h * w;
        Planes {
            channels: c,
            height: h,
            width: w,
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }
}

/// Binary `height × width` validity mask; `true` means valid / unmasked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{} bits cannot fill a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn area_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|b| *b)
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Self {
        debug_assert_eq!(self.bits.len(), other.bits.len());
        Self {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Self {
        debug_assert_eq!(self.bits.len(), other.bits.len());
        Self {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Tight bounding box `(y0, x0, y1, x1)`, exclusive upper bounds.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bbox = Some(match bbox {
                        None => (y, x, y + 1, x + 1),
                        Some((y0, x0, y1, x1)) => {
                            (y0.min(y), x0.min(x), y1.max(y + 1), x1.max(x + 1))
                        }
                    });
                }
            }
        }
        bbox
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let r = radius as isize;
        Self::from_fn(self.height, self.width, |y, x| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0
                        && xx >= 0
                        && (yy as usize) < self.height
                        && (xx as usize) < self.width
                        && self.get(yy as usize, xx as usize)
                    {
                        return true;
                    }
                }
            }
            false
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounding_box_of_block() {
        let m = Mask::from_fn(6, 6, |y, x| (2..4).contains(&y) && (1..5).contains(&x));
        assert_eq!(m.bounding_box(), Some((2, 1, 4, 5)));
        assert_eq!(Mask::filled(3, 3, false).bounding_box(), None);
    }

    #[test]
    fn dilation_of_single_pixel() {
        let mut m = Mask::filled(5, 5, false);
        m.set(2, 2, true);
        let d = m.dilate(1);
        assert_eq!(d.count(), 9);
        assert!(m.is_subset_of(&d));
    }

    #[test]
    fn batch_roundtrip() {
        let a = Planes::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::from_images(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(t.shape, [2, 1, 2, 2]);
        assert_eq!(t.image(1), a);
    }
}
