#![allow(dead_code)]

pub mod gradcheck;
pub mod nesting;
