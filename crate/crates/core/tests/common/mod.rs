#![allow(dead_code)]

pub mod clouds;
pub mod gradcheck;
pub mod states;
pub mod worlds;
