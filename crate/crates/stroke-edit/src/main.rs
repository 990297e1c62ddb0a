fn main() { stroke_edit::cli::main(); }
