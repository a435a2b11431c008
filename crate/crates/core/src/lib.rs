pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod nn;
pub mod predictor;
pub mod scene;
pub mod seeding;
pub mod semantic;
pub mod train;

pub use error::{Error, Result};
