fn main() {
    std::process::exit(affine_dynkin::cli::main_entry());
}
