use crate::imageio::Image;

/// Summed-area tables over a grayscale image, with a zero first row and
/// column. Sums are exact integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<u32>,
    sq: Vec<u64>,
}

impl IntegralImage {
    /// RGB input is converted to luma first.
    pub fn new(image: &Image) -> Self {
        let gray = image.to_gray();
        let (w, h) = (gray.width(), gray.height());
        let stride = w + 1;
        let mut sum = vec![0u32; (h + 1) * stride];
        let mut sq = vec![0u64; (h + 1) * stride];
        let px = gray.data();
        for y in 0..h {
            let mut row = 0u32;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = px[y * w + x] as u32;
                row += v;
                row_sq += u64::from(v * v);
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        IntegralImage {
            width: w,
            height: h,
            sum,
            sq,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `ii(y, x)`: sum over rows `0..y` and columns `0..x`.
    pub fn at(&self, y: usize, x: usize) -> u32 {
        self.sum[y * (self.width + 1) + x]
    }

    /// Sum over `[x, x + w) × [y, y + h)`.
    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        let s = self.width + 1;
        let (a, b) = (y * s + x, y * s + x + w);
        let (c, d) = ((y + h) * s + x, (y + h) * s + x + w);
        // the true value is non-negative and below 2^32, so wrapping is exact
        self.sum[d]
            .wrapping_sub(self.sum[b])
            .wrapping_sub(self.sum[c])
            .wrapping_add(self.sum[a])
    }

    #[inline]
    pub fn rect_sq_sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        let s = self.width + 1;
        let (a, b) = (y * s + x, y * s + x + w);
        let (c, d) = ((y + h) * s + x, (y + h) * s + x + w);
        self.sq[d].wrapping_sub(self.sq[b]).wrapping_sub(self.sq[c]).wrapping_add(self.sq[a])
    }

    /// Population standard deviation over a square region.
    pub fn std_dev(&self, x: usize, y: usize, side: usize) -> f64 {
        let n = (side * side) as f64;
        let mean = f64::from(self.rect_sum(x, y, side, side)) / n;
        let var = self.rect_sq_sum(x, y, side, side) as f64 / n - mean * mean;
        if var > 1e-9 {
            var.sqrt()
        } else {
            0.0
        }
    }
}

/// Integral image of a grayscale image.
pub fn integral(image: &Image) -> IntegralImage {
    IntegralImage::new(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ones_and_zeros() {
        let ii = integral(&Image::filled(4, 4, 1, 1));
        assert_eq!(ii.rect_sum(0, 0, 4, 4), 16);
        assert_eq!(ii.at(2, 3), 6);
        let z = integral(&Image::filled(5, 3, 1, 0));
        assert_eq!(z.rect_sum(0, 0, 5, 3), 0);
        assert_eq!(z.std_dev(0, 0, 3), 0.0);
    }

    #[test]
    fn large_bright_image_is_exact() {
        let ii = integral(&Image::filled(1024, 1024, 1, 255));
        assert_eq!(ii.rect_sum(0, 0, 1024, 1024), 255 * 1024 * 1024);
        assert_eq!(ii.rect_sq_sum(0, 0, 1024, 1024), 255 * 255 * 1024 * 1024);
        assert_eq!(ii.rect_sum(1, 2, 1000, 1000), 255 * 1_000_000);
    }

    proptest! {
        #[test]
        fn rectangles_match_loops(w in 1usize..20, h in 1usize..20, seed in any::<u64>(), r in any::<[u16; 4]>()) {
            let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8).collect();
            let img = Image::new(w, h, 1, data.clone()).unwrap();
            let ii = integral(&img);
            let x = r[0] as usize % w;
            let y = r[1] as usize % h;
            let rw = r[2] as usize % (w - x) + 1;
            let rh = r[3] as usize % (h - y) + 1;
            let mut s = 0u32;
            let mut q = 0u64;
            for yy in y..y + rh {
                for xx in x..x + rw {
                    let v = data[yy * w + xx] as u32;
                    s += v;
                    q += u64::from(v * v);
                }
            }
            prop_assert_eq!(ii.rect_sum(x, y, rw, rh), s);
            prop_assert_eq!(ii.rect_sq_sum(x, y, rw, rh), q);
        }

        #[test]
        fn monotone_along_rows_and_columns(w in 1usize..12, h in 1usize..12, v in any::<u8>()) {
            let ii = integral(&Image::filled(w, h, 1, v));
            for y in 0..=h {
                for x in 0..w {
                    prop_assert!(ii.at(y, x) <= ii.at(y, x + 1));
                }
            }
            for x in 0..=w {
                for y in 0..h {
                    prop_assert!(ii.at(y, x) <= ii.at(y + 1, x));
                }
            }
        }
    }
}
