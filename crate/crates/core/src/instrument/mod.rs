//! Control-flow analysis and the CFI toolchain passes.

pub mod cfg;
pub mod corpus;
pub mod gadgets;
pub mod labels;
pub mod retpoline;

pub use cfg::{build_cfg, Block, Cfg, Edge, EdgeKind};
pub use corpus::{generate_corpus, CorpusSpec};
pub use gadgets::{scan_smother_gadgets, GadgetReport, MarkerEntry, ScanConfig};
pub use labels::{assign_labels, instrument, instrument_with, LabelError, LabelMap};
pub use retpoline::transform_retpoline;
