//! Frame-sequence data model, the FVID clip format, the dataset catalog and
//! channel extraction.

mod catalog;
mod channels;
mod frames;
mod fvid;

pub use catalog::{Catalog, ClipRecord, Split};
pub use channels::{extract_gray, extract_red, mean_pixel_trace};
pub use frames::{FrameSequence, Pixel};
pub use fvid::{read_clip, write_clip, FVID_MAGIC, FVID_VERSION};
