//! Pieces of the `handfk` binary shared with its integration tests.

pub mod params;
