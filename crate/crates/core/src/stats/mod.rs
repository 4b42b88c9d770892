//! Effect-coded factorial regression.

pub mod design;
pub mod fit;
pub mod ols;
pub mod tdist;

pub use design::{code, effect_code, term_involves, term_name, Coding, DesignRow, N_TERMS, TERMS};
pub use fit::{fit_all, FitSet, RegressionFit, SkippedFit};
pub use ols::{fit_ols, least_squares, LeastSquares, OlsFit};
pub use tdist::{t_sf, two_sided_p};
