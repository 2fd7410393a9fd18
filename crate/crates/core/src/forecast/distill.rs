use crate::error::{Error, Result};
use crate::neural::tape::{max_pool2, neighbors3};
use crate::neural::{Activation, Matrix};

/// Width-3 same-padded convolution over the sequence axis, ELU, then max-pool
/// of width 2 and stride 2. `kernel` is `3C x C_out`, taps ordered
/// `[previous, current, next]`; the output has `ceil(L / 2)` rows.
pub fn distill_block(x: &Matrix, kernel: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if x.rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "distilling needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    if kernel.rows() != 3 * x.cols() || kernel.cols() != bias.len() {
        return Err(Error::Shape(format!(
            "kernel {:?} and bias {} for {} channels",
            kernel.shape(),
            bias.len(),
            x.cols()
        )));
    }
    let mut conv = neighbors3(x).matmul(kernel)?;
    for i in 0..conv.rows() {
        for (v, b) in conv.row_mut(i).iter_mut().zip(bias) {
            *v = Activation::Elu.apply(*v + b);
        }
    }
    Ok(max_pool2(&conv).0)
}

/// A kernel whose centre tap is the identity and side taps are zero.
pub fn identity_kernel(channels: usize) -> Matrix {
    let mut k = Matrix::zeros(3 * channels, channels);
    for c in 0..channels {
        k[(channels + c, c)] = 1.0;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_length() {
        let k = identity_kernel(3);
        for l in 2..=64 {
            let x = Matrix::filled(l, 3, 0.1);
            assert_eq!(distill_block(&x, &k, &[0.0; 3]).unwrap().rows(), l.div_ceil(2));
        }
    }

    #[test]
    fn constant_input_identity_kernel() {
        for c in [-1.5, 0.0, 2.0] {
            let x = Matrix::filled(8, 2, c);
            let y = distill_block(&x, &identity_kernel(2), &[0.0, 0.0]).unwrap();
            assert_eq!(y.shape(), (4, 2));
            assert!(y.data().iter().all(|&v| v == Activation::Elu.apply(c)));
        }
    }

    #[test]
    fn too_short_rejected() {
        let x = Matrix::filled(1, 2, 1.0);
        assert!(distill_block(&x, &identity_kernel(2), &[0.0; 2]).is_err());
    }
}
