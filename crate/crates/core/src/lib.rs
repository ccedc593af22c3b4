//! Joint TDOA trajectory estimation with uncertainty-aware Gaussian-mixture
//! noise model learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`lie`]: pose algebra for 1-D, 2-D and SE(3) states plus sigma-point
//!   covariance propagation,
//! - [`scene`]: anchors, TDOA and motion models with analytic Jacobians,
//! - [`mixture`]: scalar Gaussian mixtures, sampling, KL evaluation,
//! - [`msm`]: Max-Sum-Mixture square-root cost for least squares,
//! - [`solver`]: factor graph construction, Levenberg-Marquardt MAP solve,
//!   Laplace marginal covariances,
//! - [`vb`]: variational-Bayes mixture learning from noisy residual samples,
//! - [`bilevel`]: the outer/inner alternation tying the above together,
//! - [`sim`]: scenario generation for the 1-D/2-D/3-D studies,
//! - [`io`]: dataset/model/trajectory/result file formats and RMSE.

pub mod bilevel;
pub mod io;
pub mod lie;
pub mod mixture;
pub mod msm;
pub mod scene;
pub mod seeds;
pub mod sim;
pub mod solver;
pub mod vb;
