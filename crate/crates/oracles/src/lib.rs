//! Brute-force reference implementations used only by tests. Each oracle is
//! written independently of the production algorithm it checks: different
//! data structures, different traversal order, no shared helpers beyond the
//! public domain types.

pub mod dijkstra;
pub mod guards;
pub mod projection;
pub mod unicycle;
pub mod vrptw;
