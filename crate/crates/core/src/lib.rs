//! Open-vocabulary multi-object tracking toolkit: trajectory-consistent
//! association, trajectory-level classification with fused clip features,
//! contrastive training of the fusion block, TETA-style evaluation and a
//! seeded synthetic scene generator.

pub mod classify;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod synth;
pub mod tcr;
pub mod train;
