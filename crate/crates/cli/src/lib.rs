//! Command implementations behind the `quietbench` binary.

pub mod args;
pub mod commands;
pub mod error;
pub mod verify;

use std::io::Write;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, Exit};

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Gen(a) => commands::cmd_gen(a, out),
        Command::Run(a) => commands::cmd_run(a, out),
        Command::Load(a) => commands::cmd_load(a, out),
        Command::Analyze(a) => commands::cmd_analyze(a, out),
        Command::Plot(a) => commands::cmd_plot(a, out),
        Command::Verify(a) => verify::cmd_verify(a, out),
    }
}
