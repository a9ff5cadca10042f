fn main() {
    std::process::exit(signalbench::main_with_args(std::env::args_os()));
}
