#![allow(dead_code)]

pub mod checks;
