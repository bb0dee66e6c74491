fn main() {
    std::process::exit(searisk::run(std::env::args_os()));
}
