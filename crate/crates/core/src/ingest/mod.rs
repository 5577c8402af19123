//! External recordings and synthetic substitutes.

mod segfile;
mod surrogate;
mod wfdb;

pub use segfile::{
    decode_segments, encode_segments, read_segments, read_segments_with_fs, write_segments,
    SEGMENT_MAGIC,
};
pub use surrogate::{biphasic_template, gen_surrogate, SurrogateKind, SurrogateSpec};
pub use wfdb::{decode_212, read_wfdb, WfdbRecord};
