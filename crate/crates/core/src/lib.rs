//! Client fault diagnosis from paired TCP packet traces.
//!
//! The pipeline turns a client-side and a server-side capture of the same
//! transfer into a 280-dimensional statistical signature, then runs a link
//! problem detector followed by a network of binary client-fault SVMs.
//! A deterministic discrete-event testbed ([`synth`]) generates labelled
//! trace pairs for training and evaluation.

pub mod classifiers;
pub mod featsel;
pub mod preprocess;
pub mod signature;
pub mod svm;
pub mod synth;
pub mod trace;
