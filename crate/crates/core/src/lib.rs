//! Partially exchangeable trait-allocation models.
//!
//! Subjects are split into known groups (or into latent clusters); each
//! subject carries non-negative counts over a set of traits. The prior on
//! trait counts is a Poisson number of traits with group-specific trait
//! parameters drawn from a conjugate mixing law, so the marginal law of the
//! observed count matrix has a closed form (see [`petpf`]). On top of it the
//! crate provides posterior inference for the unseen-trait count,
//! a Pitman–Yor mixture sampler for unknown groups, and posterior summaries.

pub mod data;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod kernel;
pub mod math;
pub mod partition;
pub mod petpf;
pub mod posterior;
pub mod rng;
pub mod simulate;
pub mod summaries;

pub use data::GroupedCounts;
pub use error::{Error, Result};
pub use gibbs::{ChainDraw, ChainOutput, McmcConfig, ModelVariant};
pub use kernel::{ColumnCounts, ColumnStats, KernelFamily, KernelHyper, ThetaDraw};
pub use math::LogProb;
pub use partition::PitmanYor;
pub use posterior::{GammaPrior, ModelHyper, PosteriorUnseen};
