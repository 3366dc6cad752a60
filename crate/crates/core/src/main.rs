fn main() {
    // Die quietly on a closed pipe (`adf learn ... | head`) instead of panicking.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(adforest::cli::main_with_args(std::env::args_os()));
}
