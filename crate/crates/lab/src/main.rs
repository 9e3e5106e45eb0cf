fn main() {
    std::process::exit(mess3_lab::cli::main_with(std::env::args_os()));
}
