pub mod backends;
pub mod dataset;
pub mod filter;
pub mod policy;
pub mod path;
pub mod tags;
