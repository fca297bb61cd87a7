use std::io;

fn main() {
    let args = std::env::args().collect();
    let env = std::env::vars().collect();
    let code = latentmap_cli::main_with(args, env, &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
