//! Alignment of two monolingual word-embedding spaces.
//!
//! The crate learns a linear map `W` from a source embedding space to a
//! target embedding space by jointly optimizing three signals: adversarial
//! distribution matching against a small discriminator network, a supervised
//! similarity loss over a seed lexicon, and a weak orthogonality loss that
//! keeps `W` close to the orthogonal manifold without hard-constraining it.
//! Translations are retrieved with CSLS (cosine corrected by both points'
//! mean k-NN similarity), and mappings can be post-refined with iterative
//! Procrustes solving over mutually-matched pairs, with hub targets filtered
//! out of the induced dictionaries.
//!
//! A separate concern, but the reason the weak constraint exists at all:
//! the [`isometry`] module estimates how far two spaces are from being
//! isometric. It computes degree-0 Vietoris-Rips persistence diagrams of
//! each space and lower-bounds the Gromov-Hausdorff distance by the
//! bottleneck distance between them, alongside a Laplacian eigenvalue
//! similarity and the `‖I − WᵀW‖²` residual of a trained map.
//!
//! Start with the runnable programs under `examples/`; each one exercises a
//! single capability end to end. The `lexalign` binary wires the same
//! library calls into `train`, `refine`, `evaluate`, `gh`, and `toygen`
//! subcommands.

pub mod alignment;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod isometry;
pub mod metric;
pub mod refinement;

pub use error::{Error, Result};
