fn main() {
    std::process::exit(stackdecode::cli::main());
}
