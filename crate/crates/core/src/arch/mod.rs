//! Network builders at paper-shaped and desk profiles.

pub mod network;
pub mod profile;

pub use network::{build_gseg, build_lgseg, build_lseg, build_raseg, InputNorm, Mode, NetTape, Network, NetworkLoss};
pub use profile::{Profile, StemLayer, StemSpec};
