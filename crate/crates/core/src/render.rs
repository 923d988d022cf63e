//! Colour rendering of label maps as plain PPM.

use crate::layout::HardLayout;

/// Colour of class `k` in the PASCAL VOC palette, built by spreading the
/// bits of `k` over the high bits of the three channels.
pub fn class_color(class: u32) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut k = class;
    let mut shift = 7i32;
    while k > 0 && shift >= 0 {
        for (ch, value) in rgb.iter_mut().enumerate() {
            *value |= (((k >> ch) & 1) as u8) << shift;
        }
        k >>= 3;
        shift -= 1;
    }
    rgb
}

/// ASCII PPM (P3) image of the layout, one image row per line.
pub fn render_ppm(layout: &HardLayout) -> Vec<u8> {
    let mut out = format!("P3\n{} {}\n255\n", layout.width(), layout.height());
    for row in layout.labels().chunks(layout.width()) {
        let line: Vec<String> = row
            .iter()
            .map(|&l| {
                let [r, g, b] = class_color(l);
                format!("{r} {g} {b}")
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}
