fn main() {
    let code = std::panic::catch_unwind(|| selfloc::cli::run_with_args(std::env::args_os()))
        .unwrap_or(1);
    std::process::exit(code);
}
