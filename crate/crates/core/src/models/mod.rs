pub mod gaussian_chain;
pub mod owl;
