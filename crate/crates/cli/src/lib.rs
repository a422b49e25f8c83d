//! File formats, scenario files, reports and the command-line front end of
//! the h2mxr simulator. The model itself lives in `h2mxr-core`.

pub mod export;
pub mod predict;
pub mod run;
pub mod scenario;
pub mod trace_io;
pub mod trafficgen;
