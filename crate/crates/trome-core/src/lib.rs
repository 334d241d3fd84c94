#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod airtime_energy;
pub mod frame_codec;
pub mod protocol_engine;
pub mod channel_sim;
pub mod markov_analyzer;
