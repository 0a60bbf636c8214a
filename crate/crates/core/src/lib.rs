//! Revenue-optimal mediation for bilateral trade.
//!
//! A seller privately knows the quality `q` of an item, a buyer privately
//! knows a taste parameter `t`, and a mediator elicits both reports, privately
//! recommends trade or no trade, and charges the buyer while paying the seller.
//! This crate builds the revenue-maximizing threshold mechanism, certifies it
//! against every participation, obedience and truthfulness constraint on
//! grids, cross-checks optimality with an exhaustive discrete search, and
//! simulates the protocol.

pub mod dist;
pub mod io;
pub mod mechanism;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod roots;
pub mod sim;
pub mod solver;
pub mod stock;
pub mod verify;
