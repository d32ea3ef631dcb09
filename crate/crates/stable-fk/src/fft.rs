//! Minimal power-of-two FFT used for the discrete convolutions of the
//! series quadrature. Only what the quadrature needs: real input, complex
//! spectra, multiply-accumulate in frequency space, real inverse.

#[derive(Debug, Clone)]
pub(crate) struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn zeros(size: usize) -> Self {
        Spectrum {
            re: vec![0.0; size],
            im: vec![0.0; size],
        }
    }

    /// `self += scale * (a o b)` elementwise in frequency space.
    pub fn accumulate_product(&mut self, a: &Spectrum, b: &Spectrum, scale: f64) {
        for k in 0..self.re.len() {
            let re = a.re[k] * b.re[k] - a.im[k] * b.im[k];
            let im = a.re[k] * b.im[k] + a.im[k] * b.re[k];
            self.re[k] += scale * re;
            self.im[k] += scale * im;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Convolver {
    size: usize,
    // Twiddles e^{-2 pi i k / size} for k < size/2.
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl Convolver {
    /// Transform size: the next power of two at or above `min_len`.
    pub fn new(min_len: usize) -> Self {
        let size = min_len.next_power_of_two().max(2);
        let half = size / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for k in 0..half {
            let angle = -2.0 * std::f64::consts::PI * k as f64 / size as f64;
            tw_re.push(angle.cos());
            tw_im.push(angle.sin());
        }
        Convolver { size, tw_re, tw_im }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn fft_in_place(&self, re: &mut [f64], im: &mut [f64], invert: bool) {
        let n = self.size;
        // Bit-reversal permutation.
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let idx = k * stride;
                    let (wr, wi) = if invert {
                        (self.tw_re[idx], -self.tw_im[idx])
                    } else {
                        (self.tw_re[idx], self.tw_im[idx])
                    };
                    let a = start + k;
                    let b = a + len / 2;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    /// Forward transform of a real signal, zero-padded to the fft size.
    pub fn forward(&self, data: &[f64]) -> Spectrum {
        assert!(data.len() <= self.size);
        let mut re = vec![0.0; self.size];
        let mut im = vec![0.0; self.size];
        re[..data.len()].copy_from_slice(data);
        self.fft_in_place(&mut re, &mut im, false);
        Spectrum { re, im }
    }

    /// Inverse transform, returning the real part.
    pub fn inverse(&self, spec: &Spectrum) -> Vec<f64> {
        let mut re = spec.re.clone();
        let mut im = spec.im.clone();
        self.fft_in_place(&mut re, &mut im, true);
        let scale = 1.0 / self.size as f64;
        for v in re.iter_mut() {
            *v *= scale;
        }
        re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &av) in a.iter().enumerate() {
            for (j, &bv) in b.iter().enumerate() {
                out[i + j] += av * bv;
            }
        }
        out
    }

    #[test]
    fn fft_convolution_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let b: Vec<f64> = (0..23).map(|i| ((i * 5 % 13) as f64) * 0.1 - 0.4).collect();
        let conv = Convolver::new(a.len() + b.len() - 1);
        let mut acc = Spectrum::zeros(conv.size());
        acc.accumulate_product(&conv.forward(&a), &conv.forward(&b), 1.0);
        let fast = conv.inverse(&acc);
        let slow = naive_convolution(&a, &b);
        for (k, want) in slow.iter().enumerate() {
            assert!(
                (fast[k] - want).abs() < 1e-12,
                "k={k}: {} vs {want}",
                fast[k]
            );
        }
        // Padding beyond the linear convolution must be ~0.
        for v in &fast[slow.len()..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn accumulate_scales_linearly() {
        let a = vec![1.0, 2.0, -1.0];
        let b = vec![0.5, 0.25];
        let conv = Convolver::new(8);
        let fa = conv.forward(&a);
        let fb = conv.forward(&b);
        let mut acc = Spectrum::zeros(conv.size());
        acc.accumulate_product(&fa, &fb, 2.0);
        acc.accumulate_product(&fa, &fb, -0.5);
        let got = conv.inverse(&acc);
        let base = naive_convolution(&a, &b);
        for (k, want) in base.iter().enumerate() {
            assert!((got[k] - 1.5 * want).abs() < 1e-13);
        }
    }
}
