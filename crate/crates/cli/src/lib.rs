//! Experiment harness behind the `dica` binary: the synthetic toy
//! projection, held-out-domain classification and regression benchmarks, and
//! a distributional-variance utility. Every command is a pure function of its
//! options and seed; writers emit CSV/JSON plus a run manifest.

pub mod benchmark;
pub mod grid;
pub mod report;
pub mod toy;
pub mod variance;
