//! Feature-classifier alignment and Neural Collapse metrics.

mod fca;
mod misalign;
mod nc;

pub use fca::{fca_distances, fca_distances_via_cosine, fca_matrix, gfca, pfca, FcaVector};
pub use misalign::{
    group_stats, misalignment_stats, read_sample_csv, sample_metrics, write_sample_csv, GroupStats, MisalignmentStats,
    SampleMetrics, LOW_CONFIDENCE_COUNT,
};
pub use nc::{class_means, nc3_selfduality, nc_suite, NcReport};
