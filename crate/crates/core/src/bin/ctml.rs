fn main() {
    std::process::exit(ctml::cli::main());
}
