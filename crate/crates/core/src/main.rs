use clap::Parser;

fn main() {
    let cli = latticeloss::cli::Cli::parse();
    std::process::exit(latticeloss::cli::main_with(cli));
}
