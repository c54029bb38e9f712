//! Command-line front end: identification, classification, realizability,
//! oracle evaluation, witness construction, and bounds.

fn main() {
    eprintln!("ctfid: subcommands arrive with the engine modules");
    std::process::exit(1);
}
