fn main() {
    std::process::exit(graph_phase::cli::main_with_args(std::env::args_os()));
}
