//! Outage analysis and capacity planning for two-tier cellular uplinks with
//! hexagonal macro cells and randomly deployed small cells.

pub mod geometry;
pub mod model;
pub mod quadrature;
pub mod analytic;
pub mod montecarlo;
pub mod planner;
pub mod presets;
