fn main() {
    oocnmf::cli::init_logging();
    std::process::exit(oocnmf::cli::run(std::env::args_os()));
}
