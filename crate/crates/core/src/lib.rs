//! Multimodal crisis-post triage.
//!
//! The crate covers the whole offline pipeline for wildfire social-media
//! posts: corpus ingestion and splitting ([`corpus`]), the 13-class scheme
//! ([`taxonomy`]), annotator adjudication and agreement ([`annotation`]),
//! topic exploration ([`topics`]), encoder wrappers and the feature cache
//! ([`encoders`]), the dual-encoder fusion classifier and classical baselines
//! ([`classifiers`]), the zero-shot VLM harness ([`zeroshot`]), metrics
//! ([`evaluation`]) and weekly trend analysis ([`trends`]).
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod annotation;
pub mod classifiers;
pub mod corpus;
pub mod encoders;
pub mod evaluation;
pub mod nn;
pub mod par;
pub mod seeds;
pub mod taxonomy;
pub mod topics;
pub mod trends;
pub mod zeroshot;

pub use taxonomy::ClassLabel;
