//! Price, label and concept panels, their file formats, and the synthetic
//! market generator.

mod batch;
pub mod csv_io;
mod panels;
mod prices;
mod scaler;
mod split;
pub mod synthetic;

pub use batch::{BatchConcept, DateBatch};
pub use csv_io::{load_panels, DataPaths};
pub use panels::{
    normalize_labels, CapRecord, ConceptCalendar, ConceptEdge, FeaturePanel, LabelPanel, Panels, FEATURE_WIDTH,
    FIELDS, LOOKBACK,
};
pub use prices::{compute_trend, trend, Bar, PriceTable};
pub use scaler::FeatureScaler;
pub use split::{DateRange, Split, SplitConfig};
pub use synthetic::{generate_synthetic, LoadingRegime, SyntheticData, SyntheticSpec};
