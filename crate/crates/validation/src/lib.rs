//! Independent reference models used to check the simulator, plus the
//! acceptance suite under `tests/`.

pub mod las;
