//! Direction, target and return predictors.

pub mod btb;
pub mod pht;
pub mod rsb;

pub use btb::{Btb, BtbEntry};
pub use pht::{Pht, Prediction};
pub use rsb::{LegacyRsb, LegacyUndo, RsbError, RsbScs, SPILL_BATCH};

/// Renders `structure,index,fields` rows as CSV with a header.
pub fn snapshot_csv(rows: &[(String, usize, String)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["structure", "index", "fields"]).expect("in-memory write");
    for (s, i, f) in rows {
        w.write_record([s.as_str(), &i.to_string(), f.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}
