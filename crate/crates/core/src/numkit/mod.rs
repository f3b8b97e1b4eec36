//! Small numerics kernel shared by the estimators: 3×3 linear algebra,
//! unit-interval quadrature and a derivative-free minimizer.

pub mod linalg;
pub mod optim;
pub mod quadrature;

pub use linalg::{invert3, sqrt_spd, Matrix3, Vec3};
pub use optim::{minimize, Minimum, OptimConfig};
pub use quadrature::{integrate01, integrate01_split, QuadratureConfig, Side, UnitPoint, UnitQuadrature};
