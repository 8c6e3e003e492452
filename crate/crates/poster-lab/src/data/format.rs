//! On-disk dataset container.
//!
//! Layout (little-endian throughout):
//!   magic "PLDS" | version u32 | config_hash u64 | count u64 |
//!   config_json_len u32 | config_json bytes |
//!   per sample: payload_len u32 | payload | crc32(payload) u32
//!
//! Sample payload: seed u64 | style u32 | n_lines u32 |
//!   per line: orientation u8 | content_len u32 | content | box 4 x f64 |
//!   width u32 | height u32 | image 3wh u8 | product_image 3wh u8 | mask wh u8

use super::{DataError, DatasetConfig, Image, Mask, PosterSample, StyleId};
use crate::layout::{BBox, Layout, Orientation, TextLine};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PLDS";
const VERSION: u32 = 1;

pub fn save_dataset(
    cfg: &DatasetConfig,
    samples: &[PosterSample],
    path: &Path,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&cfg.hash().to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let cfg_json = serde_json::to_vec(cfg).expect("config serializes");
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    for sample in samples {
        let payload = encode_sample(sample);
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(&payload)?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetConfig, Vec<PosterSample>), DataError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DataError::Version { found: version, expected: VERSION });
    }
    let config_hash = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_json = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_json)?;
    let cfg: DatasetConfig =
        serde_json::from_slice(&cfg_json).map_err(|e| DataError::Format(e.to_string()))?;
    if cfg.hash() != config_hash {
        return Err(DataError::Format("config hash mismatch".into()));
    }
    cfg.validate()?;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        let crc = read_u32(&mut r)?;
        if crc32fast::hash(&payload) != crc {
            return Err(DataError::Checksum(i));
        }
        samples.push(decode_sample(&payload, i)?);
    }
    Ok((cfg, samples))
}

fn encode_sample(s: &PosterSample) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&s.seed.to_le_bytes());
    b.extend_from_slice(&s.style_id.0.to_le_bytes());
    b.extend_from_slice(&(s.layout.lines.len() as u32).to_le_bytes());
    for line in &s.layout.lines {
        b.push(match line.orientation {
            Orientation::Horizontal => 0,
            Orientation::Vertical => 1,
        });
        let content = line.content.as_bytes();
        b.extend_from_slice(&(content.len() as u32).to_le_bytes());
        b.extend_from_slice(content);
        for v in [line.box_.x_l, line.box_.y_t, line.box_.x_r, line.box_.y_b] {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b.extend_from_slice(&s.image.width.to_le_bytes());
    b.extend_from_slice(&s.image.height.to_le_bytes());
    b.extend_from_slice(&s.image.to_u8());
    b.extend_from_slice(&s.product_image.to_u8());
    b.extend_from_slice(&s.product_mask.data);
    b
}

fn decode_sample(b: &[u8], index: usize) -> Result<PosterSample, DataError> {
    let mut cur = Cursor { b, pos: 0, index };
    let seed = cur.u64()?;
    let style = StyleId(cur.u32()?);
    let n_lines = cur.u32()? as usize;
    let mut lines = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let orientation = match cur.u8()? {
            0 => Orientation::Horizontal,
            1 => Orientation::Vertical,
            v => return Err(DataError::Format(format!("bad orientation byte {v}"))),
        };
        let clen = cur.u32()? as usize;
        let content = String::from_utf8(cur.bytes(clen)?.to_vec())
            .map_err(|e| DataError::Format(e.to_string()))?;
        let box_ = BBox { x_l: cur.f64()?, y_t: cur.f64()?, x_r: cur.f64()?, y_b: cur.f64()? };
        lines.push(TextLine { content, box_, orientation });
    }
    let width = cur.u32()?;
    let height = cur.u32()?;
    let npx = (width * height) as usize;
    let image = Image::from_u8(width, height, cur.bytes(3 * npx)?);
    let product_image = Image::from_u8(width, height, cur.bytes(3 * npx)?);
    let mask_data = cur.bytes(npx)?.to_vec();
    if cur.pos != b.len() {
        return Err(DataError::Format(format!("trailing bytes in sample {index}")));
    }
    Ok(PosterSample {
        image,
        product_mask: Mask { width, height, data: mask_data },
        product_image,
        layout: Layout { lines, canvas: (width, height) },
        style_id: style,
        seed,
    })
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
    index: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.b.len() {
            return Err(DataError::Format(format!("truncated sample {}", self.index)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DataError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
