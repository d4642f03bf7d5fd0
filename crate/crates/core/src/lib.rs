pub mod eventstore;
pub mod time;
pub mod archive;
pub mod dsp;
pub mod pgm;
pub mod segmentation;
pub mod pulsetrain;
pub mod recognizers;
pub mod classify;
pub mod evalkit;
pub mod synthbench;
pub mod registry;
pub mod config;
pub mod ada;
