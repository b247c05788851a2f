fn main() {
    if let Err(e) = mixmdp::cli::run_from(std::env::args_os()) {
        // help, version and usage errors print themselves
        if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
            clap_err.exit();
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
