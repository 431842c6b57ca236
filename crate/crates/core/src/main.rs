fn main() {
    std::process::exit(countrypath::cli::main());
}
