//! Experiment configuration, execution and the acceptance suite behind the
//! `siegmund` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod corpus;
pub mod run;
