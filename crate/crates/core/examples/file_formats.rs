//! Round-trips dense and CSR matrices through the PDN1 binary format and
//! Matrix Market, and reads a window of a PDN1 file without loading it all.
//!
//! ```text
//! cargo run --release --example file_formats
//! ```

use oocnmf::linalg::io::{read_matrix, write_matrix, Pdn1Reader};
use oocnmf::linalg::{CsrMatrix, DenseMatrix, Matrix};

fn main() -> oocnmf::Result<()> {
    let dir = std::env::temp_dir().join(format!("oocnmf-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let dense = DenseMatrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64 / 7.0);
    let sparse = CsrMatrix::from_triplets(6, 6, vec![(0, 1, 0.5), (2, 2, 1.0 / 3.0), (5, 0, 2.0)])?;
    for (label, m) in [("dense", Matrix::Dense(dense)), ("csr", Matrix::Sparse(sparse))] {
        for ext in ["pdn", "mtx"] {
            let p = dir.join(format!("{label}.{ext}"));
            write_matrix(&p, m.as_ref())?;
            let back = read_matrix(&p)?;
            println!(
                "{label:<5} via .{ext}: {} bytes, identical = {}",
                std::fs::metadata(&p)?.len(),
                back == m
            );
        }
    }
    let mut reader = Pdn1Reader::open(dir.join("dense.pdn"))?;
    let win = reader.read_window(1..3, 2..4)?;
    println!("window rows 1..3 cols 2..4 = {:?} ({} bytes read)", win.to_dense().data(), reader.bytes_read());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
