#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    let seed = std::env::var("OCE_SEED").ok();
    std::process::exit(oce_cli::run(std::env::args_os(), seed.as_deref()));
}
