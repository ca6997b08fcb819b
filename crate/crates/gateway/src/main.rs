fn main() {
    std::process::exit(qnet_gateway::cli::main_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr()));
}
