//! Dataset ingestion and result export.

mod csv;
mod dataset;
mod idx;
mod manifest;
mod netfile;

pub use self::csv::{
    export_csv, render_csv, CsvKind, CsvRecord, EnsembleRow, EntropyHistogramRow, EntropyProfileRow,
    HyperparamHistogramRow, PerturbationRow, SparsityRow, TrainingCurveRow, WeightClassRow,
};
pub use self::dataset::{make_dataset, Dataset, N_CLASSES};
pub use self::idx::{load_idx, parse_idx, IdxKind, IdxTensor, IMAGE_MAGIC, LABEL_MAGIC};
pub use self::manifest::RunManifest;
pub use self::netfile::{
    decode_effective, decode_network, encode_effective, encode_network, load_effective, load_network,
    load_network_expecting, save_effective, save_network,
};
