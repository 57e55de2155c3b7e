fn main() {
    std::process::exit(meanflow_lab::cli::run());
}
