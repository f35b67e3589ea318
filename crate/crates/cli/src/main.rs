use clap::Parser;

// Training allocates and frees many mid-sized buffers per batch; the system
// allocator keeps returning them to the OS.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    let cli = pewflow_cli::Cli::parse();
    if let Err(err) = pewflow_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(pewflow_cli::exit_code(&err));
    }
}
