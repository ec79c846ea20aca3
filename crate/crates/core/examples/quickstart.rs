use sellkit::{spmv, CrsData, DenseMat, SellMatrix, SellParams, SpmvOpts, StorageOrder};

fn main() -> sellkit::Result<()> {
    let a = CrsData::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 3.0), (2, 0, 1.0)])?;
    let m = SellMatrix::from_crs(&a, SellParams::new(2, 2)?)?;
    let x = DenseMat::from_rows(&[[1.0], [1.0], [1.0]], StorageOrder::ColMajor)?;
    let mut y = DenseMat::create(3, 1, StorageOrder::ColMajor)?;
    spmv(&mut y, &m, &x, &mut SpmvOpts::new())?;
    assert_eq!(y.col_vec(0), [2.0, 3.0, 1.0]);
    Ok(())
}
