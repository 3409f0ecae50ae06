//! Domain types, file formats and the correctness primitives everything else
//! is built on.

mod labels;
mod manifest;
mod matrix;
mod predict;
mod tensor_io;

pub use labels::{read_label_matrix, read_labels, write_label_matrix, write_labels};
pub use manifest::{Category, ClassGroup, ClassGroups, Manifest, ModelRecord};
pub use matrix::{EmbeddingMatrix, LabelVector, LogitMatrix, ProbMatrix};
pub use predict::{accuracy, correctness, top1, ClassScores, CorrectnessVector, Predictions};
pub use tensor_io::{
    load_tensor, read_tensor, save_tensor, write_tensor, DTYPE_REAL32, HEADER_LEN, MAGIC, VERSION,
};
