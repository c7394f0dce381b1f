#![allow(dead_code)]

pub mod allocators;
pub mod callgraph;
