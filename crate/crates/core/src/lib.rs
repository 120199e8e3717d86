pub mod book;
pub mod displacement;
pub mod rng;
pub mod tree;
pub mod coupling;
pub mod phase;
pub mod cli;
