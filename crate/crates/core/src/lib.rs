pub mod chunk;
pub mod concept;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod hypergraph;
pub mod instance;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod text;
