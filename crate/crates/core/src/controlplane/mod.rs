//! Resource discovery, request orchestration and the SDN agent.

mod discovery;
mod messages;
mod params;
mod paths;
mod record;
mod sdn;
mod sim;

pub use discovery::{check_registration, run_discovery};
pub use messages::*;
pub use params::*;
pub use paths::*;
pub use record::*;
pub use sdn::*;
pub use sim::*;
