pub mod commands;
pub mod curves;
pub mod dataset;
pub mod evaluate;
pub mod metrics;
pub mod ppm;
pub mod synth;
