use ndarray::{s, Array2, Array5};
use rand::Rng;

use super::source::{Access, Channel, ClipSource, Task};
use crate::augment::{apply, draw_sample, AugmentConfig};
use crate::clipstore::{FrameSequence, Pixel};
use crate::error::{Error, Result};
use crate::Scalar;

fn check_geometry(n_frames: usize, window: usize, net_frames: usize) -> Result<usize> {
    if net_frames == 0 || window % net_frames != 0 {
        return Err(Error::invalid(format!("window {window} is not a multiple of {net_frames}")));
    }
    if n_frames < window {
        return Err(Error::TooShort(format!("{n_frames} frames, window needs {window}")));
    }
    Ok(window / net_frames)
}

/// Uniformly placed contiguous window of `window` frames, decimated to
/// `net_frames`.
pub fn sample_window<P: Pixel>(
    clip: &FrameSequence<P>,
    window: usize,
    net_frames: usize,
    rng: &mut impl Rng,
) -> Result<FrameSequence<P>> {
    let step = check_geometry(clip.n_frames(), window, net_frames)?;
    let start = rng.random_range(0..=clip.n_frames() - window);
    clip.slice_frames(start, start + window)?.decimate(step)
}

/// The deterministic window used for validation and testing: the first one.
pub fn first_window<P: Pixel>(clip: &FrameSequence<P>, window: usize, net_frames: usize) -> Result<FrameSequence<P>> {
    let step = check_geometry(clip.n_frames(), window, net_frames)?;
    clip.slice_frames(0, window)?.decimate(step)
}

/// Single-channel network input in `[0, 1]`.
pub fn to_network_input<T: Scalar + Pixel>(seq: &FrameSequence<u8>, channel: Channel) -> Result<FrameSequence<T>> {
    Ok(channel.extract(seq)?.normalized::<T>())
}

/// Stacks sequences into a `[B, frames, H, W, 1]` batch.
pub fn stack<T: Scalar + Pixel>(seqs: &[FrameSequence<T>]) -> Result<Array5<T>> {
    let first = seqs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (n, h, w, c) = first.frames().dim();
    let mut out = Array5::<T>::zeros((seqs.len(), n, h, w, c));
    for (i, s) in seqs.iter().enumerate() {
        if s.frames().dim() != (n, h, w, c) {
            return Err(Error::shape("sequences in a batch differ in shape"));
        }
        out.slice_mut(s![i, .., .., .., ..]).assign(s.frames());
    }
    Ok(out)
}

/// A training batch: random clips, random windows, a fresh augmentation
/// draw per sequence.
pub struct Batch<T> {
    pub inputs: Array5<T>,
    pub labels: Array2<T>,
    pub clip_ids: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn draw_batch<T: Scalar + Pixel>(
    source: &dyn ClipSource,
    ids: &[String],
    batch_size: usize,
    window: usize,
    net_frames: usize,
    channel: Channel,
    task: Task,
    augment: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Batch<T>> {
    if ids.is_empty() {
        return Err(Error::invalid("no clips to draw from"));
    }
    let mut seqs = Vec::with_capacity(batch_size);
    let mut labels = Array2::<T>::zeros((batch_size, task.n_outputs()));
    let mut clip_ids = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let id = &ids[rng.random_range(0..ids.len())];
        let clip = source.load(id, Access::Train)?;
        let win = sample_window(&clip, window, net_frames, rng)?;
        let x = to_network_input::<T>(&win, channel)?;
        let sample = draw_sample(augment, rng);
        seqs.push(apply(&sample, &x)?);
        for (j, v) in task.labels(source.record(id)?).into_iter().enumerate() {
            labels[[i, j]] = T::lit(v);
        }
        clip_ids.push(id.clone());
    }
    Ok(Batch {
        inputs: stack(&seqs)?,
        labels,
        clip_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn counter_clip(n: usize) -> FrameSequence<u8> {
        FrameSequence::new(Array4::from_shape_fn((n, 2, 2, 1), |(t, ..)| (t % 256) as u8), 30.0).unwrap()
    }

    fn start_of(w: &FrameSequence<u8>) -> usize {
        w.frames()[[0, 0, 0, 0]] as usize
    }

    #[test]
    fn window_starts_cover_all_offsets() {
        let clip = FrameSequence::new(
            Array4::from_shape_fn((810, 1, 1, 2), |(t, _, _, c)| if c == 0 { (t % 256) as u8 } else { (t / 256) as u8 }),
            30.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut starts = BTreeSet::new();
        for _ in 0..5000 {
            let w = sample_window(&clip, 720, 360, &mut rng).unwrap();
            assert_eq!(w.n_frames(), 360);
            assert_eq!(w.fps(), 15.0);
            assert!((w.duration_seconds() - 24.0).abs() < 1e-9);
            let f = w.frames();
            let start = f[[0, 0, 0, 0]] as usize + 256 * f[[0, 0, 0, 1]] as usize;
            let second = f[[1, 0, 0, 0]] as usize + 256 * f[[1, 0, 0, 1]] as usize;
            assert_eq!(second, start + 2);
            starts.insert(start);
        }
        assert_eq!(starts.len(), 91);
        assert_eq!((*starts.first().unwrap(), *starts.last().unwrap()), (0, 90));
    }

    #[test]
    fn exact_length_is_deterministic() {
        let clip = counter_clip(720);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(start_of(&sample_window(&clip, 720, 360, &mut rng).unwrap()), 0);
        }
        assert_eq!(first_window(&clip, 720, 360).unwrap().n_frames(), 360);
    }

    #[test]
    fn short_clip_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_window(&counter_clip(600), 720, 360, &mut rng), Err(Error::TooShort(_))));
        assert!(sample_window(&counter_clip(800), 720, 350, &mut rng).is_err());
    }
}
