// LAPACK and BLAS come from the system OpenBLAS.
fn main() {
    println!("cargo:rustc-link-lib=openblas");
}
