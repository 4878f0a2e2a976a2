pub mod aggregate;
pub mod bench;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod label;
pub mod passage;
pub mod scorer;
pub mod textproc;
