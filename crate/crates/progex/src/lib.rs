//! Neural-symbolic program execution.
//!
//! This crate pairs a symbolic program representation (two small DSL
//! dialects, a pointer machine, exact oracles) with a learned executor
//! built on a transparent tape-based autodiff core. Programs guide the
//! executor through two disentangled channels: a semantic matrix holding
//! routine token embeddings and a transition mask restricting which
//! routines may exchange information at each step.
//!
//! The library surface is organised by module:
//!
//! - [`dsl`]: parsing, formatting and validation for the policy dialect
//!   (gridworld agent programs) and the reasoning dialect (scene-graph
//!   query DAGs), plus token vocabularies.
//! - [`guidance`]: semantic matrices, transition masks and positional
//!   encodings derived from a parsed program.
//! - [`flow`]: the pointer machine that tracks which routines are active,
//!   ending conditions, and sequential/parallel scheduling.
//! - [`tensor`]: matrices, the autodiff tape, attention, MLPs, Adam,
//!   gradient checking and checkpoints.
//! - [`executor`]: the learned model that executes programs step by step.
//! - [`gridworld`]: the 2D environment, its encoder inputs and rewards.
//! - [`scene`]: synthetic scene graphs and their feature encodings.
//! - [`oracle`]: the symbolic planner (A* navigation plus condition
//!   evaluation) and the scene-graph executor used for ground truth.
//! - [`taskgen`]: seeded generators for programs, scenes, instances and
//!   dataset splits.
//! - [`train`]: dense/partial supervision, advantage actor-critic, and
//!   the evaluation harness.
//! - [`config`]: run configuration, validation and seed derivation.
//!
//! Runnable walkthroughs live in `examples/`; each file demonstrates one
//! capability end to end (`cargo run --release --example <name>`). The
//! `progex` binary is a thin command-line wrapper over [`cli`].

pub mod config;
pub mod dsl;
pub mod executor;
pub mod flow;
pub mod gridworld;
pub mod guidance;
pub mod oracle;
pub mod rng;
pub mod scene;
pub mod taskgen;
pub mod tensor;
pub mod train;

pub mod cli;
