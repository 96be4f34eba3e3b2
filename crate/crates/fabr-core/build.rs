fn main() {
    // BLAS/LAPACK routines come from the system OpenBLAS (which bundles
    // LAPACK). FABR_OPENBLAS_DIR overrides the search path for non-standard
    // installs.
    if let Ok(dir) = std::env::var("FABR_OPENBLAS_DIR") {
        println!("cargo:rustc-link-search=native={dir}");
    }
    println!("cargo:rustc-link-lib=dylib=openblas");
    println!("cargo:rerun-if-env-changed=FABR_OPENBLAS_DIR");
}
