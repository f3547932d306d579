use super::SumError;

/// Default number of sampled frames.
pub const DEFAULT_Q: usize = 10;

/// Indices `round(i * (n - 1) / (q - 1))` for `i = 0..q`, computed in integers with
/// halves rounded up. When `n <= q` every index is returned.
pub fn sample_indices(n: usize, q: usize) -> Result<Vec<usize>, SumError> {
    if q < 2 {
        return Err(SumError::QTooSmall(q));
    }
    if n == 0 {
        return Err(SumError::EmptyInput);
    }
    if n <= q {
        return Ok((0..n).collect());
    }
    let span = (n - 1) as u128;
    let parts = (q - 1) as u128;
    Ok((0..q as u128).map(|i| ((2 * i * span + parts) / (2 * parts)) as usize).collect())
}

/// Uniform temporal subsampling that always keeps the first and last frame.
pub fn sample_frames<T: Clone>(frames: &[T], q: usize) -> Result<Vec<T>, SumError> {
    Ok(sample_indices(frames.len(), q)?.into_iter().map(|i| frames[i].clone()).collect())
}
