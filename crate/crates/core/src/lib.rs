//! Self-stabilizing TDMA slot allocation and alignment for wireless ad hoc
//! networks, with a deterministic radio simulator to run it on.
//!
//! Nodes share a single channel. Each owns a timeslot within a repeating
//! frame; neighbors up to two hops away must use different slots or their
//! packets collide. Starting from any state, the protocol synchronizes the
//! clocks and settles on a collision-free schedule using only what nodes
//! overhear in each other's packets.
//!
//! - [`clock`]: modular clocks and slot/frame arithmetic
//! - [`frame_info`]: the per-node record of recently heard transmissions
//! - [`protocol`]: the node state machine
//! - [`medium`]: collisions and omissions on the shared radio
//! - [`topology`]: communication graphs and their metrics
//! - [`engine`]: the discrete-event simulator
//! - [`analysis`]: legality, safety and convergence over traces
//! - [`cli`]: the `sstdma` experiment runner

pub mod analysis;
pub mod cli;
pub mod clock;
pub mod engine;
pub mod frame_info;
pub mod medium;
pub mod protocol;
pub mod topology;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/clocks.md")]
    struct Clocks;
    #[doc = include_str!("../../../book/src/frame-info.md")]
    struct FrameInfo;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/medium.md")]
    struct Medium;
    #[doc = include_str!("../../../book/src/topology.md")]
    struct Topology;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/formats.md")]
    struct Formats;
}
