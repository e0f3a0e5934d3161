#![allow(dead_code)]

pub mod gradprobe;
pub mod oracles;
pub mod tiny;
