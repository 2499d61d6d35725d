pub mod adgraph;
pub mod augment;
pub mod harness;
pub mod linalg;
pub mod nlp;
pub mod oracles;
pub mod pendulum;
pub mod policy;
pub mod sensitivity;
pub mod sqp;
