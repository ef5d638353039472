//! Joint least-squares estimation of the index vector and the conditional
//! distribution functions in the distributional single index model
//!
//! `P(Y <= y | X = x) = F(alpha . x, y)`, with `F(z, .)` a CDF for every `z`
//! and stochastically increasing in `z`.
//!
//! The pieces, bottom-up:
//!
//! - [`weighting`] reduces a weighting measure over thresholds to finite atoms.
//! - [`idr`] fits the isotonic distributional regression for a fixed index.
//! - [`criterion`] evaluates the threshold-weighted squared loss and its
//!   profile over `F`.
//! - [`index_opt`] minimizes the profile over the unit sphere.
//! - [`model`] turns a fit into a predictor (CDF, quantiles, mean) and a JSON
//!   document.
//! - [`simulate`] runs the Monte Carlo rate experiments.
//! - [`cli`] is the command-line front end.
//!
//! ```
//! use dsim::{fit_dsim, Predictor, Sample, SearchConfig, WeightingMeasure};
//!
//! // y grows with x1 + x2
//! let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i % 11) as f64]).collect();
//! let y: Vec<f64> = rows.iter().map(|r| r[0] + r[1] + 0.1 * (r[0] * 3.0).sin()).collect();
//! let sample = Sample::from_rows(&rows, y).unwrap();
//!
//! let fit = fit_dsim(&sample, &WeightingMeasure::Empirical, &SearchConfig::default()).unwrap();
//! assert!(fit.alpha.iter().all(|&a| a > 0.0));
//!
//! let p = Predictor::new(fit).unwrap();
//! let median = p.quantile(&[3.0, 5.0], 0.5).unwrap();
//! assert!(p.cdf(&[3.0, 5.0], median).unwrap() >= 0.5);
//! ```

pub mod cli;
pub mod criterion;
pub mod error;
pub mod idr;
pub mod index_opt;
pub mod model;
pub mod optim;
pub mod sample;
pub mod simulate;
pub mod weighting;

pub use criterion::{evaluate, profiled, CdfSurface, CriterionValue};
pub use error::{DsimError, Result};
pub use idr::{GroupedProjections, IdrFit};
pub use index_opt::{fit_dsim, grid_search, refine, to_cartesian, DsimFit, GridNode, SearchConfig, SphericalPoint};
pub use model::{ModelDocument, Predictor};
pub use sample::Sample;
pub use weighting::{Density, ResolvedAtoms, WeightingConfig, WeightingMeasure};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/weighting.md")]
    mod weighting {}
    #[doc = include_str!("../../../book/src/idr.md")]
    mod idr {}
    #[doc = include_str!("../../../book/src/criterion.md")]
    mod criterion {}
    #[doc = include_str!("../../../book/src/index-search.md")]
    mod index_search {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
