fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo");
    let out = std::path::Path::new(&crate_dir).join("include").join("boxmix.h");
    std::fs::create_dir_all(out.parent().expect("include dir")).expect("mkdir include");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&out);
        }
        Err(e) => {
            // header generation must not break `cargo check` in minimal setups
            println!("cargo:warning=header generation skipped: {e}");
        }
    }
}
