fn main() {
    std::process::exit(halo_gnn::cli::run(std::env::args_os()));
}
