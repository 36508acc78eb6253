fn main() {
    std::process::exit(ecnu_gnn::cli::run(std::env::args_os()));
}
