//! Demos built on the compiler and machine: a network of switch nodes and a
//! record store with parallel index maintenance.

pub mod db;
pub mod net;
