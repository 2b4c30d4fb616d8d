//! Evolutionary-tree reconstruction for neural-network models.
//!
//! Weights play the role of a genotype and response embeddings the role of a
//! phenotype. Pairwise distances between models feed neighbor joining; the
//! resulting trees are compared with Robinson–Foulds distance, tested against
//! random trees, and summarized with consensus trees.

pub mod distmat;
pub mod embeddings;
pub mod metrics;
pub mod importance;
pub mod phylo;
pub mod simulate;
pub mod tensor_archive;

pub use distmat::{DistanceMatrix, Source};
pub use metrics::MetricKind;
pub use phylo::PhyloTree;
pub use tensor_archive::{ModelGenotype, TensorArchive};
