//! Tensor-ring compression of convolution kernels.
//!
//! Kernels `T x C x D1 x D2` are decomposed with TR-SVD under every circular
//! mode shift and every admissible first rank, keeping the representation
//! with the fewest parameters at a prescribed relative error. The cores then
//! drive a four-stage convolution whose multiply counts match the closed-form
//! complexity model in [`complexity`].

pub mod archive;
pub mod complexity;
pub mod error;
pub mod netspec;
pub mod svd;
pub mod synthetic;
pub mod tensor;
pub mod tr_conv;
pub mod tr_model;
pub mod tr_svd;

pub use archive::{AnyTensor, Archive};
pub use error::{Error, Result};
pub use tensor::{conv2d_direct, contract, ConvGeometry, DType, DenseTensor, Element};
pub use tr_conv::{tr_convolution, FlopCounter, TrConvLayer};
pub use tr_model::TrCores;
pub use tr_svd::{rsdtr_search, tr_svd, DecompositionConfig, SearchResult};
