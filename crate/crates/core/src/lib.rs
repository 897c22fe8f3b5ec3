pub mod aggregation;
pub mod error;
pub mod events;
pub mod init;
pub mod msg_loss;
pub mod par;
pub mod peas;
pub mod pipeline;
pub mod ssm;
pub mod synth;
pub mod train;

pub use error::{CoreError, Result};
