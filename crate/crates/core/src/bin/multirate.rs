fn main() {
    std::process::exit(multirate::cli::run());
}
