//! Optimal hedging of European options under CEV dynamics with quadratic
//! illiquidity costs.

pub mod cev;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod hedging;
pub mod hjb;
pub mod ncx2;
pub mod params;
pub mod pricing;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
