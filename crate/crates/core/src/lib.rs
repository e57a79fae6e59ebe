//! Credit-risk analytics for loan portfolios split into green and brown
//! segments, under a two-factor model whose systematic component may be
//! skew-normal.
//!
//! The crate covers the scalar distribution kernels, the joint return model,
//! exposure concentration analytics, the large-portfolio limiting loss law
//! (density, cdf, quantiles, VaR) and a reproducible Monte Carlo engine for
//! finite portfolios.

pub mod dist;
pub mod error;
pub mod exposure;
pub mod limit;
pub mod mc;
pub mod model;
pub mod presets;
pub mod quad;

pub use error::{Error, Result};
pub use exposure::{ExposureLaw, ExposureVector};
pub use limit::LimitModel;
pub use mc::{McConfig, LossSampleSummary};
pub use model::{LoanClassParams, PortfolioSpec};
