//! Integer BT.601 full-range luma/chroma transform.

use image::{GrayImage, RgbImage};

#[inline]
pub fn rgb_to_ycbcr([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (r as i32, g as i32, b as i32);
    let y = (77 * r + 150 * g + 29 * b + 128) >> 8;
    let cb = ((-43 * r - 85 * g + 128 * b + 128) >> 8) + 128;
    let cr = ((128 * r - 107 * g - 21 * b + 128) >> 8) + 128;
    [clamp_u8(y), clamp_u8(cb), clamp_u8(cr)]
}

#[inline]
pub fn ycbcr_to_rgb([y, cb, cr]: [u8; 3]) -> [u8; 3] {
    let (y, cb, cr) = (y as i32, cb as i32 - 128, cr as i32 - 128);
    let r = y + ((359 * cr + 128) >> 8);
    let g = y - ((88 * cb + 183 * cr + 128) >> 8);
    let b = y + ((454 * cb + 128) >> 8);
    [clamp_u8(r), clamp_u8(g), clamp_u8(b)]
}

#[inline]
pub fn luma([r, g, b]: [u8; 3]) -> u8 {
    clamp_u8((77 * r as i32 + 150 * g as i32 + 29 * b as i32 + 128) >> 8)
}

#[inline]
fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

pub fn luma_plane(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        image::Luma([luma(img.get_pixel(x, y).0)])
    })
}
