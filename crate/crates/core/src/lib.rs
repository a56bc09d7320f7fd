//! Interactive voting-based map matching over road pieces split from
//! OpenStreetMap ways, with shortest-path trajectory imputation.

pub mod bench;
pub mod candidates;
pub mod config;
pub mod geo;
pub mod imputer;
pub mod metrics;
pub mod netbuild;
pub mod netgraph;
pub mod pipeline;
pub mod stmatch;
pub mod synth;
pub mod trajectory;
pub mod trellis;
pub mod voting;
