pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod query;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod train;
pub mod wl;
