pub mod conditions;
pub mod eikonal;
pub mod ode;
pub mod pipeline;
pub mod poly;
pub mod symbols;
pub mod synth;
pub mod transport;
