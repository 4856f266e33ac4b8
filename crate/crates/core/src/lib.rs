pub mod asgraph;
pub mod embedding;
pub mod pathdiff;
pub mod monitor;
pub mod detector;
pub mod validator;
pub mod synth;
