use clap::Parser;

use fracshe::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(rec) => {
            println!(
                "wrote {} files to {}",
                rec.files.len() + 1,
                rec.config.out.display()
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
