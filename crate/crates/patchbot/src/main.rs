use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let now = (patchbot::api::system_clock())();
    let code = patchbot::cli::run_with(
        std::env::args_os(),
        &mut io::stdout(),
        &mut io::stderr(),
        now,
    );
    std::process::exit(code);
}
