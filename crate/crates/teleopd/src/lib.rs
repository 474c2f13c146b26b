//! Command-line front end and live-session server for calibrated
//! teleoperation controllers.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
