use ndarray::{s, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pixel element of a [`FrameSequence`]: 8-bit at rest, real-valued once
/// normalized.
pub trait Pixel: Copy + PartialEq + Default + Send + Sync + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    /// Converts a weighted combination back to the pixel domain. 8-bit pixels
    /// round half up and saturate.
    fn from_f64(v: f64) -> Self;
}

impl Pixel for u8 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        (v + 0.5).floor().clamp(0.0, 255.0) as u8
    }
}

impl Pixel for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Pixel for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Ordered stack of equally sized frames, laid out `[frame, row, column, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence<P> {
    frames: Array4<P>,
    fps: f32,
}

impl<P: Pixel> FrameSequence<P> {
    pub fn new(frames: Array4<P>, fps: f32) -> Result<Self> {
        let (n, h, w, c) = frames.dim();
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!(
                "frame sequence dimensions must be positive, got {n}x{h}x{w}x{c}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let frames = if frames.is_standard_layout() {
            frames
        } else {
            frames.as_standard_layout().into_owned()
        };
        Ok(Self { frames, fps })
    }

    pub fn from_fn(
        (n, h, w, c): (usize, usize, usize, usize),
        fps: f32,
        f: impl FnMut((usize, usize, usize, usize)) -> P,
    ) -> Result<Self> {
        Self::new(Array4::from_shape_fn((n, h, w, c), f), fps)
    }

    pub fn frames(&self) -> &Array4<P> {
        &self.frames
    }

    pub fn into_frames(self) -> Array4<P> {
        self.frames
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, P> {
        self.frames.index_axis(Axis(0), i)
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn channels(&self) -> usize {
        self.frames.dim().3
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_frames() as f64 / self.fps as f64
    }

    /// Frames `[start, end)` with the same fps.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames() {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} outside 0..{}",
                self.n_frames()
            )));
        }
        Self::new(self.frames.slice(s![start..end, .., .., ..]).to_owned(), self.fps)
    }

    /// Keeps every `step`-th frame starting at 0; fps is divided by `step`.
    pub fn decimate(&self, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::invalid("decimation step must be positive"));
        }
        let kept = self.frames.slice(s![..;step, .., .., ..]).to_owned();
        Self::new(kept, self.fps / step as f32)
    }

    pub fn map<Q: Pixel>(&self, mut f: impl FnMut(P) -> Q) -> FrameSequence<Q> {
        FrameSequence {
            frames: self.frames.mapv(&mut f),
            fps: self.fps,
        }
    }
}

impl FrameSequence<u8> {
    /// Scales 8-bit pixels to `[0, 1]`.
    pub fn normalized<T: Scalar + Pixel>(&self) -> FrameSequence<T> {
        let scale = T::lit(1.0 / 255.0);
        self.map(|p| T::lit(p as f64) * scale)
    }
}
