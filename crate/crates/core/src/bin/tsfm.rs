fn main() {
    std::process::exit(tsfm_core::workbench::run(std::env::args_os()));
}
