//! Labels, batches, datasets and the synthetic long-tail generator.

mod batch;
mod dataset;
mod labels;
mod synth;

pub use batch::ContrastiveBatch;
pub use dataset::{read_dataset, write_dataset, MultiLabelDataset, Split, SplitSizes};
pub use labels::{intersection_size, jaccard, overlap_ratio, positive_sets, LabelMatrix, PositiveSets};
pub use synth::{generate_longtail, GeneratorConfig, RNG_ID};
