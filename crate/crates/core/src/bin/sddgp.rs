fn main() {
    std::process::exit(sddgp::cli::main_with(std::env::args_os()));
}
