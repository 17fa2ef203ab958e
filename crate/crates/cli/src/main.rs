use clap::Parser;

fn main() {
    let cli = match pcis::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = pcis::run(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
}
