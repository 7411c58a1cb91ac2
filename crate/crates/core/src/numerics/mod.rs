//! Normal distribution functions, multivariate normal probabilities and root
//! finding.

pub mod bvn;
pub mod mvn;
pub mod normal;
pub mod root;

pub use bvn::{bvn_lower, bvn_upper};
pub use mvn::{
    many_to_one_correlation, mvn_rectangle, mvn_upper_orthant_union, two_stage_union,
    CorrelationMatrix, ProbResult,
};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf, upper_z};
pub use root::{find_root, ROOT_TOL};
