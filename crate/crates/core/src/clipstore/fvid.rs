//! FVID: little-endian container for 8-bit frame sequences.
//!
//! ```text
//! "FVID" | version u8 | n_frames u32 | height u32 | width u32 | channels u32 | fps f32 | payload
//! ```
//! The payload holds `n_frames * height * width * channels` bytes in
//! frame-major, row-major, channel-minor order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array4;

use super::FrameSequence;
use crate::error::{Error, Result};

pub const FVID_MAGIC: &[u8; 4] = b"FVID";
pub const FVID_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 * 4 + 4;

pub fn write_clip(seq: &FrameSequence<u8>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n, h, w, c) = seq.frames().dim();
    let dims = [n, h, w, c]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;

    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(FVID_MAGIC);
    header.push(FVID_VERSION);
    for d in dims {
        header.extend_from_slice(&d.to_le_bytes());
    }
    header.extend_from_slice(&seq.fps().to_le_bytes());

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let payload = seq
        .frames()
        .as_slice()
        .expect("frame sequences are stored in standard layout");
    out.write_all(&header)
        .and_then(|_| out.write_all(payload))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<FrameSequence<u8>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let available = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut input = BufReader::new(file);

    let mut header = [0u8; HEADER_LEN];
    if available < HEADER_LEN as u64 {
        let mut magic = [0u8; 4];
        if available >= 4 {
            input.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
            if &magic != FVID_MAGIC {
                return Err(Error::BadMagic(path.display().to_string()));
            }
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: available,
        });
    }
    input.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..4] != FVID_MAGIC {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    if header[4] != FVID_VERSION {
        return Err(Error::UnsupportedVersion(header[4]));
    }
    let word = |i: usize| {
        let at = 5 + 4 * i;
        u32::from_le_bytes(header[at..at + 4].try_into().unwrap())
    };
    let (n, h, w, c) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3) as usize);
    let fps = f32::from_le_bytes(header[21..25].try_into().unwrap());

    let expected = (n as u64) * (h as u64) * (w as u64) * (c as u64);
    let found = available - HEADER_LEN as u64;
    if expected != found {
        return Err(Error::Truncated { expected, found });
    }
    let mut payload = vec![0u8; expected as usize];
    input.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let frames = Array4::from_shape_vec((n, h, w, c), payload)
        .map_err(|e| Error::shape(e.to_string()))?;
    FrameSequence::new(frames, fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(dims: (usize, usize, usize, usize), fps: f32, fill: impl Fn(usize) -> u8) -> FrameSequence<u8> {
        let mut k = 0;
        FrameSequence::from_fn(dims, fps, |_| {
            k += 1;
            fill(k)
        })
        .unwrap()
    }

    #[test]
    fn single_pixel_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.fvid");
        let s = seq((1, 1, 1, 1), 30.0, |_| 0);
        write_clip(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1);
        assert_eq!(&bytes[..4], b"FVID");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[21..25], &30.0f32.to_le_bytes());
        assert_eq!(bytes[25], 0);
        assert_eq!(read_clip(&path).unwrap(), s);
    }

    #[test]
    fn full_size_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.fvid");
        let s = seq((360, 32, 32, 3), 30.0, |k| (k.wrapping_mul(2654435761) >> 13) as u8);
        write_clip(&s, &path).unwrap();
        assert_eq!(read_clip(&path).unwrap(), s);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fvid");
        write_clip(&seq((1, 1, 1, 1), 30.0, |_| 7), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"XVID");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_clip(&path), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fvid");
        write_clip(&seq((100, 2, 2, 1), 30.0, |k| k as u8), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_clip(&path),
            Err(Error::Truncated { expected: 400, found: 396 })
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fvid");
        write_clip(&seq((1, 1, 1, 1), 30.0, |_| 7), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_clip(&path), Err(Error::UnsupportedVersion(9))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn roundtrip_is_bit_exact(
            n in 1usize..6, h in 1usize..9, w in 1usize..9, c in 1usize..4,
            fps in 1.0f32..240.0, salt in any::<u64>(),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.fvid");
            let s = seq((n, h, w, c), fps, |k| ((k as u64).wrapping_mul(salt | 1) >> 7) as u8);
            write_clip(&s, &path).unwrap();
            prop_assert_eq!(read_clip(&path).unwrap(), s);
        }
    }
}
