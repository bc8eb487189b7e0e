//! Two-player docking game over protein–ligand complex graphs, trained by
//! alternating loop self-play.

pub mod complex;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod game;
pub mod geom;
pub mod gradcheck;
pub mod net;
pub mod objectives;
pub mod seed;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
