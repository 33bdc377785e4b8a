pub fn run_cli(_argv: Vec<String>) -> i32 {
    0
}
