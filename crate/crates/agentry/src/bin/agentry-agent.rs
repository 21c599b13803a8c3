//! Child process entry point used by the subprocess launcher.

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(agentry::launch::agent_main(&agentry::builtin::registry()));
}
