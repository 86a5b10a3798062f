use bloch_homog_cli::{load_config, output_dir, run, Cli};
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| run(cli.command, &cfg, &output_dir(&cli, &cfg), cli.threads));
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                for line in &outcome.summary {
                    println!("{line}");
                }
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
        }
        Err(e) => {
            eprintln!("{}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
