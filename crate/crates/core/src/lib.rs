//! Core of a software-virtualised entanglement-distribution testbed.
//!
//! - [`tagcore`]: detection records, the ITU channel plan, tag-stream files
//! - [`photon_source`]: emulated pair source and detectors
//! - [`measurement`]: count rate, counter, delay histograms, coincidences and CAR
//! - [`allocation`]: QoS ledger, proportional-fair utility, Hungarian and FCFS policies
//! - [`simulation`]: discrete-event queueing model of the allocator

pub mod allocation;
pub mod measurement;
pub mod photon_source;
pub mod simulation;
pub mod tagcore;
