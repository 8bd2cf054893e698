//! Study setups: the heat-diffusion network, radar drone tracking, and the
//! scalar system with a closed-form optimum.

pub mod drone;
pub mod heat;
pub mod scalar;
