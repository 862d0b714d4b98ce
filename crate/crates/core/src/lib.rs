pub mod geometry;
pub mod grid;
pub mod hash;
pub mod landscape;
pub mod lang;
pub mod flow;
pub mod calibration;
pub mod planner;
pub mod sim;
pub mod pipeline;
