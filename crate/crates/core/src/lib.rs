//! Meshless least-squares training of sine-activated multiscale networks for
//! the stationary incompressible Navier-Stokes equations, with linearized
//! convection terms refreshed from a frozen snapshot of the velocity.

pub mod checkpoint;
pub mod geometry;
pub mod losses;
pub mod mlp;
pub mod optim;
pub mod model;
pub mod problem;
pub mod report;
pub mod trainer;
