pub mod ensemble;
pub mod error;
pub mod feedback;
pub mod oscillator;
pub mod quantum;
pub mod stochastic;
pub mod twoqubit;

pub use error::{Result, SimError};
