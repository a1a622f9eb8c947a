use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major image with 1 (mask) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<T>,
}

pub type Image = ImageBuf<f32>;

impl<T: Real> ImageBuf<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageBuf {
            width,
            height,
            channels,
            pixels: vec![T::zero(); width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[T]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            pixels.extend_from_slice(value);
        }
        ImageBuf {
            width,
            height,
            channels: value.len(),
            pixels,
        }
    }

    pub fn from_pixels(width: usize, height: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        let img = ImageBuf {
            width,
            height,
            channels,
            pixels,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 && self.channels != 4 {
            return Err(Error::Invariant(format!("unsupported channel count {}", self.channels)));
        }
        if self.pixels.len() != self.width * self.height * self.channels {
            return Err(Error::DimensionMismatch {
                what: "image pixels",
                expected: self.width * self.height * self.channels,
                got: self.pixels.len(),
            });
        }
        Ok(())
    }

    /// Checks every value lies in `[0, 1]`.
    pub fn check_range(&self) -> Result<()> {
        if self.pixels.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(Error::Invariant("pixel outside [0, 1]".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_size<U>(&self, other: &ImageBuf<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn same_shape<U>(&self, other: &ImageBuf<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> ImageBuf<U> {
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|p| U::from_f64(Real::to_f64(*p))).collect(),
        }
    }
}
