fn main() {
    std::process::exit(peft_ser_cli::run(std::env::args_os()));
}
