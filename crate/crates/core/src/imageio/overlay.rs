use super::Image;
use crate::geometry::Detection;

const BOX_COLOR: [u8; 3] = [0, 255, 0];
const LANDMARK_COLOR: [u8; 3] = [255, 0, 0];
const BORDER: i64 = 2;

fn paint(img: &mut Image, x: i64, y: i64, color: [u8; 3]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, v) in color.into_iter().enumerate() {
        img.set(x as usize, y as usize, c, v);
    }
}

/// Draws 2-px green box borders and 3×3 red landmark squares onto a copy of
/// `image` (promoted to RGB when there is anything to draw). Everything is
/// clipped to the image.
pub fn draw_overlay(image: &Image, detections: &[Detection]) -> Image {
    if detections.is_empty() {
        return image.clone();
    }
    let mut out = image.to_rgb();
    for det in detections {
        let b = det.bbox;
        let (x1, y1, x2, y2) = (b.x1.round() as i64, b.y1.round() as i64, b.x2.round() as i64, b.y2.round() as i64);
        for y in y1.max(0)..y2.min(out.height() as i64) {
            for x in x1.max(0)..x2.min(out.width() as i64) {
                let on_border = x < x1 + BORDER || x >= x2 - BORDER || y < y1 + BORDER || y >= y2 - BORDER;
                if on_border {
                    paint(&mut out, x, y, BOX_COLOR);
                }
            }
        }
    }
    for det in detections {
        for &(lx, ly) in det.landmarks.iter().flatten() {
            let (cx, cy) = (lx.round() as i64, ly.round() as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    paint(&mut out, cx + dx, cy + dy, LANDMARK_COLOR);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn diff_count(a: &Image, b: &Image) -> usize {
        a.data()
            .chunks_exact(3)
            .zip(b.data().chunks_exact(3))
            .filter(|(p, q)| p != q)
            .count()
    }

    #[test]
    fn no_detections_is_identity() {
        let img = Image::filled(8, 8, 1, 17);
        assert_eq!(draw_overlay(&img, &[]), img);
    }

    #[test]
    fn only_border_pixels_change() {
        let img = Image::filled(64, 64, 3, 40);
        let det = Detection::new(BBox::new(10.0, 10.0, 30.0, 30.0).unwrap(), 0.9);
        let out = draw_overlay(&img, &[det]);
        // 20×20 box minus its 16×16 interior
        assert_eq!(diff_count(&img, &out), 20 * 20 - 16 * 16);
        assert_eq!(out.get(10, 10, 1), 255);
        assert_eq!(out.get(20, 20, 1), 40);
    }

    #[test]
    fn out_of_bounds_marks_are_clipped() {
        let img = Image::filled(16, 16, 3, 0);
        let mut det = Detection::new(BBox::new(-8.0, -8.0, 40.0, 6.0).unwrap(), 0.5);
        det.landmarks = Some([(-30.0, -30.0), (0.0, 0.0), (15.4, 15.6), (100.0, 3.0), (7.0, 500.0)]);
        let out = draw_overlay(&img, &[det]);
        assert_eq!(out.get(15, 15, 0), 255);
        assert_eq!(out.get(0, 0, 0), 255);
    }
}
