//! Iterative radix-2 FFT over `Complex64`, plus 2-D transforms on row-major
//! buffers whose sides are powers of two.

use num_complex::Complex64;

/// In-place forward (`inverse = false`) or inverse transform. The inverse is
/// scaled by `1/n`. Panics if the length is not a power of two.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        // Twiddles computed directly rather than by repeated multiplication
        // to keep round-off at the 1e-15 level for large n.
        let tw: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = data[start + k];
                let v = data[start + k + half] * tw[k];
                data[start + k] = u + v;
                data[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        for x in data.iter_mut() {
            *x *= s;
        }
    }
}

/// 2-D transform of a `width x height` row-major buffer.
pub fn fft2d_in_place(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    assert_eq!(data.len(), width * height);
    for row in data.chunks_exact_mut(width) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}
