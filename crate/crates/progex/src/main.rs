fn main() {
    // Die quietly when the read end of a pipe closes, like other
    // line-oriented tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(progex::cli::run());
}
