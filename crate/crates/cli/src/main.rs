use sellkit_cli::{parse_args, run, RunEnv};

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let nranks = parse_args(argv.iter()).map_or(1, |a| a.nranks());
    let out = run(argv, &mut RunEnv::system(nranks));
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    std::process::exit(out.code);
}
