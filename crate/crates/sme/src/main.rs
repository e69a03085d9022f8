use clap::Parser;

fn main() {
    let cli = sme::cli::Cli::parse();
    match sme::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
