//! Online adaptation of a stripped forest: per-leaf sample reservoirs,
//! quick-shift clustering into modes, and the round-robin refresh schedule.

mod cluster;
mod reservoir;
mod state;

pub use cluster::{cluster_reservoir, ClusterConfig, LeafPrediction, ModalCluster};
pub use reservoir::{reservoir_insert, LeafReservoir, ReservoirEntry, RESERVOIR_CAPACITY};
pub use state::{integrate_frame, AdaptConfig, AdaptState, DEFAULT_REFRESH_BUDGET};
