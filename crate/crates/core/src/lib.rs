pub mod blinding;
pub mod cost;
pub mod field;
pub mod kernels;
pub mod model;
pub mod quantize;
pub mod runtime;
pub mod verify;
