use ndarray::{Array4, Axis};

use super::{FrameSequence, Pixel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Luma weights for R, G, B.
pub const GRAY_WEIGHTS: [f64; 3] = [0.21, 0.72, 0.07];

fn require_channels<P: Pixel>(seq: &FrameSequence<P>, want: usize) -> Result<()> {
    if seq.channels() != want {
        return Err(Error::shape(format!(
            "expected {want} channel(s), got {}",
            seq.channels()
        )));
    }
    Ok(())
}

fn project<P: Pixel>(seq: &FrameSequence<P>, f: impl Fn(P, P, P) -> P) -> Result<FrameSequence<P>> {
    require_channels(seq, 3)?;
    let (n, h, w, _) = seq.frames().dim();
    let src = seq.frames();
    let out = Array4::from_shape_fn((n, h, w, 1), |(i, y, x, _)| {
        f(src[[i, y, x, 0]], src[[i, y, x, 1]], src[[i, y, x, 2]])
    });
    FrameSequence::new(out, seq.fps())
}

/// Red plane of an R,G,B sequence.
pub fn extract_red<P: Pixel>(seq: &FrameSequence<P>) -> Result<FrameSequence<P>> {
    project(seq, |r, _, _| r)
}

/// `0.21 R + 0.72 G + 0.07 B`. On 8-bit data the sum is formed in integer
/// hundredths so that exact halves round up deterministically.
pub fn extract_gray<P: Pixel>(seq: &FrameSequence<P>) -> Result<FrameSequence<P>> {
    if std::any::TypeId::of::<P>() == std::any::TypeId::of::<u8>() {
        return project(seq, |r, g, b| {
            let hundredths = 21 * r.to_f64() as u32 + 72 * g.to_f64() as u32 + 7 * b.to_f64() as u32;
            P::from_f64(((hundredths + 50) / 100) as f64)
        });
    }
    let [wr, wg, wb] = GRAY_WEIGHTS;
    project(seq, |r, g, b| {
        P::from_f64(wr * r.to_f64() + wg * g.to_f64() + wb * b.to_f64())
    })
}

/// Per-frame arithmetic mean of a single-channel sequence.
pub fn mean_pixel_trace<P: Pixel, T: Scalar>(seq: &FrameSequence<P>) -> Result<Vec<T>> {
    require_channels(seq, 1)?;
    let per_frame = (seq.height() * seq.width()) as f64;
    Ok(seq
        .frames()
        .axis_iter(Axis(0))
        .map(|frame| T::lit(frame.iter().map(|p| p.to_f64()).sum::<f64>() / per_frame))
        .collect())
}
