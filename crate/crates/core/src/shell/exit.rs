//! Process exit codes.

pub const PROMOTE: i32 = 0;
pub const RUNTIME_ERROR: i32 = 1;
pub const USAGE: i32 = 2;
pub const HOLD: i32 = 3;
pub const INFEASIBLE: i32 = 4;
