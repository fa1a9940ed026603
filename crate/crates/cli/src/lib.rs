pub mod artifacts;
pub mod commands;
pub mod selftest;
