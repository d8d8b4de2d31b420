use gflm_cli::{parse_args, run, ParseFailure};

fn main() {
    let code = match parse_args(std::env::args_os()) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            let code = e.exit_code();
            match e {
                ParseFailure::Clap(e) => {
                    let _ = e.print();
                }
                ParseFailure::Cli(e) => eprintln!("{e}"),
            }
            code
        }
    };
    std::process::exit(code);
}
