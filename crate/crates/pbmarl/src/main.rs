use clap::Parser;

use pbmarl::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("pbmarl: cannot configure {threads} threads: {err}");
            std::process::exit(3);
        }
    }

    if let Err(err) = cli::run(cli) {
        eprintln!("pbmarl: {err}");
        std::process::exit(err.exit_code());
    }
}
