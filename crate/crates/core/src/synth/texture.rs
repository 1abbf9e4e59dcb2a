//! Seeded, resolution-independent value noise for procedural scenes.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-stream.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix(seed ^ splitmix(stream.wrapping_mul(0x2545_F491_4F6C_DD1D)))
}

#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    seed: u64,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed: splitmix(seed) }
    }

    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let h = splitmix(self.seed ^ (ix as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7) ^ (iy as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Smoothly interpolated noise in [0, 1] with unit lattice spacing.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let sx = fx * fx * (3.0 - 2.0 * fx);
        let sy = fy * fy * (3.0 - 2.0 * fy);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let a = self.lattice(ix, iy);
        let b = self.lattice(ix + 1, iy);
        let c = self.lattice(ix, iy + 1);
        let d = self.lattice(ix + 1, iy + 1);
        let top = a + sx * (b - a);
        let bottom = c + sx * (d - c);
        top + sy * (bottom - top)
    }

    /// Fractal sum of `octaves` layers starting at `freq` cycles per pixel,
    /// normalized back to [0, 1].
    pub fn fbm(&self, x: f64, y: f64, freq: f64, octaves: u32) -> f64 {
        let (mut sum, mut norm, mut amp, mut f) = (0.0, 0.0, 1.0, freq);
        for o in 0..octaves {
            let shift = 17.31 * o as f64;
            sum += amp * self.at(x * f + shift, y * f - shift);
            norm += amp;
            amp *= 0.5;
            f *= 2.0;
        }
        sum / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_determinism() {
        let n = ValueNoise::new(7);
        for i in 0..500 {
            let (x, y) = (i as f64 * 0.37, i as f64 * 0.91 - 40.0);
            let v = n.fbm(x, y, 0.1, 4);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, ValueNoise::new(7).fbm(x, y, 0.1, 4));
        }
    }

    #[test]
    fn continuous_across_cells() {
        let n = ValueNoise::new(3);
        let (a, b) = (n.at(4.999999, 2.5), n.at(5.000001, 2.5));
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(ValueNoise::new(1).at(0.5, 0.5), ValueNoise::new(2).at(0.5, 0.5));
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
    }
}
