//! Support code for the `tripanel` binary.

pub mod json;
