//! BIM to BEM conversion: IFC ingest, space classification, boundary
//! wrangling, conflict detection, room-network construction and
//! cross-view traceability.

// Negated float comparisons are used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bimlite;
pub mod classify;
pub mod conflict;
pub mod geom;
pub mod ingest;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod step;
pub mod trace;
pub mod validate;
pub mod wrangle;
