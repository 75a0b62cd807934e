//! Binary portable pixmap (P6, 8-bit) reader and writer.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub fn write_ppm(path: &Path, image: &ImageTensor) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::InvalidArgument("pixmaps hold exactly 3 channels".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", image.width, image.height)?;
    w.write_all(&image.to_u8())?;
    w.flush()?;
    Ok(())
}

fn read_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    // `#` comments run to end of line
    while *pos < bytes.len() && bytes[*pos] == b'#' {
        while *pos < bytes.len() && bytes[*pos] != b'\n' {
            *pos += 1;
        }
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("pixmap header truncated".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_ppm(path: &Path) -> Result<ImageTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let magic = read_token(&bytes, &mut pos)?;
    if magic != "P6" {
        return Err(Error::Format(format!("expected P6 pixmap, found `{magic}`")));
    }
    let width: usize = read_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad pixmap width".into()))?;
    let height: usize = read_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad pixmap height".into()))?;
    let maxval: usize = read_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad pixmap depth".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit pixmaps are supported, got {maxval}")));
    }
    pos += 1; // single whitespace byte after the header
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format("pixmap payload truncated".into()));
    }
    ImageTensor::from_u8(height, width, 3, &bytes[pos..pos + need])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bytes() {
        let mut img = ImageTensor::filled(5, 7, 3, 0.0);
        let mut rng = crate::rng::stream(3, "ppm-test", &[]);
        for v in img.data.iter_mut() {
            *v = crate::oracle::uniform(&mut rng, 0.0, 1.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
        assert_eq!((back.height, back.width), (5, 7));
        // writing the re-read image reproduces the file exactly
        let path2 = dir.path().join("y.ppm");
        write_ppm(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 2\n255\nxxxx").unwrap();
        assert!(read_ppm(&path).is_err());
    }
}
