pub mod degrade;
pub mod fusion;
pub mod metrics;
pub mod mot_io;
pub mod nncore;
pub mod oracle;
pub mod render;
pub mod selftest;
pub mod synth;
pub mod tracker;
