fn main() {
    std::process::exit(maskprop::cli::main_with_args(std::env::args_os()));
}
