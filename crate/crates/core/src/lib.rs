//! Maximization of scale-invariant Laplace eigenvalues over densities on
//! closed simplicial manifolds, together with closed-form round-sphere
//! oracles used to certify the numerics.

pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod eigen;
pub mod json;
pub mod reduced;
pub mod sphere;
pub mod optimizer;
