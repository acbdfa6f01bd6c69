//! Benchmark toolkit for adversarial robustness of outcome-oriented
//! predictive process monitoring models.
//!
//! The crate covers the full experimental loop: event-log ingestion and
//! synthesis ([`eventlog`]), prefix encoding ([`encoding`]), outcome
//! classifiers ([`classifiers`]), class-specific sequence manifolds learned
//! with recurrent variational autoencoders ([`manifold`]), adversarial
//! attack generation ([`attacks`]), distance metrics ([`metrics`]),
//! attack-profile clustering ([`profiling`]) and a reproducible pipeline
//! harness ([`harness`]).

pub mod attacks;
pub mod classifiers;
pub mod encoding;
pub mod eventlog;
pub mod harness;
pub mod manifold;
pub mod metrics;
pub mod nn;
pub mod profiling;
pub mod seeding;
