//! Regenerates include/edgegen.h from the public extern "C" surface.

use std::env;
use std::path::Path;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR is always set");
    let header = Path::new(&crate_dir).join("include").join("edgegen.h");
    std::fs::create_dir_all(header.parent().expect("header path has a parent"))
        .expect("create include dir");

    match cbindgen::generate(&crate_dir) {
        // write_to_file leaves the file untouched when the content is
        // unchanged, so this does not trigger rebuild loops.
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(err) => panic!("cbindgen failed: {err}"),
    }

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
