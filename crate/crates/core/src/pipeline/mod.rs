//! End-to-end compression: entropy-based field ordering, per-method codecs
//! driven by sequential bit predictions, the joint transformer/Huffman
//! selector, per-UE training, and verified evaluation with CSV reports.
//!
//! Accounting convention: K_t is the full frame length, including the
//! arithmetic coder's flush bits and, for the joint method, its selector bit.

mod bitmodel;
mod codec;
mod evaluate;
mod order;
mod report;
mod training;

pub use bitmodel::{ac_decode, ac_encode, BitModel, RnnBits, TransformerBits, UniformBits};
pub use codec::{MethodCodec, StreamCodec};
pub use evaluate::{evaluate, CompressionReport, MessageRecord};
pub use order::{field_entropy, sort_fields, FieldOrder, SortDirection};
pub use report::{
    bitmap_row, frame_entries, read_frames, read_records_csv, write_bitmap_csv, write_frames, write_records_csv,
    write_summary_csv, FrameEntry, FRAME_MAGIC,
};
pub use training::{
    stored, train_rnn, train_transformer, train_ue, validation_split, ModelTag, TrainSettings, UeArtifacts,
};
