use crate::error::{check_len, Error, Result};

/// Order-preserving concatenation: `out[i * d + j] == frames[i][j]`.
pub fn compose_grouping(frames: &[&[f64]], n: usize) -> Result<Vec<f64>> {
    check_len("grouping frame count", n, frames.len())?;
    let d = frames.first().ok_or(Error::Empty("grouping frames"))?.len();
    let mut out = Vec::with_capacity(n * d);
    for f in frames {
        check_len("grouping frame dimension", d, f.len())?;
        out.extend_from_slice(f);
    }
    Ok(out)
}
