fn main() {
    std::process::exit(limelens::run(std::env::args_os()));
}
