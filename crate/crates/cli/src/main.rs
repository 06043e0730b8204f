use clap::Parser;
use siate_cli::{run_command, Cli, CommandKind, CommandLine, RunConfig};

fn main() {
    let cli = Cli::parse();
    let (kind, flags) = match &cli.command {
        CommandLine::Estimate(f) => (CommandKind::Estimate, f),
        CommandLine::Cv(f) => (CommandKind::Cv, f),
        CommandLine::Simulate(f) => (CommandKind::Simulate, f),
        CommandLine::LinkPlot(f) => (CommandKind::LinkPlot, f),
    };
    let result = RunConfig::resolve(kind, flags).and_then(|cfg| run_command(&cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("siate {}: {e}", kind.name());
            std::process::exit(e.exit_code());
        }
    }
}
