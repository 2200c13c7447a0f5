fn main() {
    std::process::exit(biphoton_comb::cli::main_with_args(std::env::args_os()));
}
