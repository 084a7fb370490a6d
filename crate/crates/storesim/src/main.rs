use clap::Parser;

fn main() {
    let cli = storesim::cli::Cli::parse();
    if let Err(err) = storesim::cli::run(cli) {
        let record = serde_json::json!({
            "error": err.message(),
            "exit": err.exit_code(),
        });
        eprintln!("{record}");
        std::process::exit(err.exit_code());
    }
}
