//! PNG encoding for [`Image`] values.

use std::io::Cursor;

use base64::Engine;
use thiserror::Error;

use crate::geometry::Image;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(img.pixels.as_flattened())?;
    }
    Ok(out)
}

pub fn decode_png(data: &[u8]) -> Result<Image, ImageIoError> {
    let mut decoder = png::Decoder::new(Cursor::new(data));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width, info.height);
    let bytes = &buf[..info.buffer_size()];
    let pixels: Vec<[u8; 3]> = match info.color_type {
        png::ColorType::Rgb => bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        png::ColorType::Rgba => bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2]]).collect(),
        png::ColorType::Grayscale => bytes.iter().map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).map(|c| [c[0], c[0], c[0]]).collect(),
        other => return Err(ImageIoError::Unsupported(format!("{other:?}"))),
    };
    Image::from_pixels(w, h, pixels).map_err(|e| ImageIoError::Unsupported(e.to_string()))
}

pub fn png_base64(img: &Image) -> Result<String, ImageIoError> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(img)?))
}

pub fn image_from_base64_png(s: &str) -> Result<Image, ImageIoError> {
    decode_png(&base64::engine::general_purpose::STANDARD.decode(s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let mut img = Image::filled(5, 3, [1, 2, 3]);
        img.set(4, 2, [250, 0, 7]);
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(image_from_base64_png(&png_base64(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode_png(b"not a png").is_err());
    }
}
