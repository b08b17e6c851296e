//! Packet-level discrete-event simulator of a datacenter fabric in which
//! every egress link runs repeated per-RTT second-price auctions, senders
//! translate end-to-end objectives into per-round bids by dynamic
//! programming over a global price distribution, and a multi-epoch harness
//! measures scheduling quality and market convergence.

pub mod bidding;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod fabric;
pub mod host;
pub mod price;
pub mod protocol;
pub mod workload;
