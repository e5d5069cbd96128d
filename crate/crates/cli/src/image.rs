/// Blue at 0, yellow at 0.5, red at 1, linear in between.
pub fn probability_color(p: f64) -> [u8; 3] {
    let p = p.clamp(0.0, 1.0);
    let c = |v: f64| (v * 255.0).round() as u8;
    if p <= 0.5 {
        let t = 2.0 * p;
        [c(t), c(t), c(1.0 - t)]
    } else {
        let t = 2.0 * (p - 0.5);
        [255, c(1.0 - t), 0]
    }
}

pub fn encode_ppm(width: usize, height: usize, pixels: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(pixels.len() * 3);
    for px in pixels {
        out.extend_from_slice(px);
    }
    out
}
