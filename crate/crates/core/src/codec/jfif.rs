//! JFIF container: SOI, APP0, DQT, SOF0, DHT, SOS + entropy data, EOI.

use super::bitio::{BitReader, BitWriter};
use super::entropy::{class, read_tokens, write_tokens, EntropyStream};
use super::huffman::{HuffmanSpec, HuffmanTable, HuffmanTables};
use super::quant::QuantTable;
use super::{blocks_for, zigzag, Component};
use crate::error::{Error, Result};

const SOI: u8 = 0xD8;
const EOI: u8 = 0xD9;
const SOF0: u8 = 0xC0;
const DHT: u8 = 0xC4;
const DQT: u8 = 0xDB;
const DRI: u8 = 0xDD;
const SOS: u8 = 0xDA;
const APP0: u8 = 0xE0;
const COM: u8 = 0xFE;

/// A parsed or to-be-written baseline 4:4:4 JPEG.
///
/// Table slot 0 serves Y, slot 1 serves U and V.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegFile {
    pub width: u16,
    pub height: u16,
    pub quant: [QuantTable; 2],
    pub huffman: HuffmanTables,
    pub stream: EntropyStream,
}

impl JpegFile {
    pub fn block_count(&self) -> usize {
        self.stream.block_count()
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

/// Entropy-code the stream (interleaved Y,U,V per block) without stuffing.
pub fn entropy_bytes(stream: &EntropyStream, tables: &HuffmanTables) -> Result<Vec<u8>> {
    let mut w = BitWriter::new();
    for c in Component::ALL {
        if stream.components[c.index()].len() != stream.block_count() {
            return Err(Error::invalid(format!(
                "component {} has {} blocks, expected {}",
                c.name(),
                stream.components[c.index()].len(),
                stream.block_count()
            )));
        }
    }
    for i in 0..stream.block_count() {
        for c in Component::ALL {
            let t = class(c);
            write_tokens(&mut w, &stream.components[c.index()][i], &tables.dc[t], &tables.ac[t])?;
        }
    }
    Ok(w.finish())
}

pub fn serialize_jpeg(file: &JpegFile) -> Result<Vec<u8>> {
    if file.width == 0 || file.height == 0 {
        return Err(Error::invalid("zero image dimension"));
    }
    if blocks_for(file.width as u32) != file.stream.blocks_w
        || blocks_for(file.height as u32) != file.stream.blocks_h
    {
        return Err(Error::invalid(format!(
            "{}x{} header does not match a {}x{} block grid",
            file.width, file.height, file.stream.blocks_w, file.stream.blocks_h
        )));
    }
    let data = entropy_bytes(&file.stream, &file.huffman)?;

    let mut out = Vec::with_capacity(data.len() + 700);
    out.extend_from_slice(&[0xFF, SOI]);
    segment(
        &mut out,
        APP0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    for (id, table) in file.quant.iter().enumerate() {
        let mut p = Vec::with_capacity(65);
        let wide = table.steps().iter().any(|&s| s > 255);
        p.push(((wide as u8) << 4) | id as u8);
        for &n in &zigzag::ZIGZAG {
            let s = table.steps()[n];
            if wide {
                p.extend_from_slice(&s.to_be_bytes());
            } else {
                p.push(s as u8);
            }
        }
        segment(&mut out, DQT, &p);
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&file.height.to_be_bytes());
    sof.extend_from_slice(&file.width.to_be_bytes());
    sof.extend_from_slice(&[3, 1, 0x11, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, SOF0, &sof);
    for (tc, tables) in [(0u8, &file.huffman.dc), (1u8, &file.huffman.ac)] {
        for (th, table) in tables.iter().enumerate() {
            let spec = table.spec();
            let mut p = vec![tc << 4 | th as u8];
            p.extend_from_slice(&spec.counts);
            p.extend_from_slice(&spec.symbols);
            segment(&mut out, DHT, &p);
        }
    }
    segment(&mut out, SOS, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);
    for b in data {
        out.push(b);
        if b == 0xFF {
            out.push(0x00);
        }
    }
    out.extend_from_slice(&[0xFF, EOI]);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::format("truncated JPEG"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("truncated JPEG segment"))?;
        self.pos += n;
        Ok(s)
    }

    fn segment(&mut self) -> Result<&'a [u8]> {
        let len = self.u16()? as usize;
        if len < 2 {
            return Err(Error::format("segment length < 2"));
        }
        self.take(len - 2)
    }
}

struct FrameComponent {
    id: u8,
    quant: u8,
}

/// Strip byte stuffing from the entropy segment starting at `pos`.
/// Returns the clean bytes and the offset of the terminating marker.
fn unstuff(bytes: &[u8], mut pos: usize) -> Result<(Vec<u8>, usize)> {
    let mut out = Vec::with_capacity(bytes.len().saturating_sub(pos));
    loop {
        let b = *bytes
            .get(pos)
            .ok_or_else(|| Error::format("entropy segment not terminated by a marker"))?;
        if b != 0xFF {
            out.push(b);
            pos += 1;
            continue;
        }
        let mut next = pos + 1;
        // fill bytes
        while bytes.get(next) == Some(&0xFF) {
            next += 1;
        }
        match bytes.get(next) {
            None => return Err(Error::format("entropy segment truncated after 0xFF")),
            Some(0x00) => {
                out.push(0xFF);
                pos = next + 1;
            }
            Some(0xD0..=0xD7) => {
                return Err(Error::Unsupported("restart markers".into()));
            }
            Some(_) => return Ok((out, next - 1)),
        }
    }
}

pub fn parse_jpeg(bytes: &[u8]) -> Result<JpegFile> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err(Error::format("missing SOI marker"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let mut quant: [Option<QuantTable>; 4] = [None; 4];
    let mut dc: [Option<HuffmanTable>; 4] = Default::default();
    let mut ac: [Option<HuffmanTable>; 4] = Default::default();
    let mut frame: Option<(u16, u16, Vec<FrameComponent>)> = None;
    let mut result: Option<JpegFile> = None;

    loop {
        let ff = cur.u8()?;
        if ff != 0xFF {
            return Err(Error::format(format!(
                "expected marker at offset {}, found {ff:#04x}",
                cur.pos - 1
            )));
        }
        let mut marker = cur.u8()?;
        while marker == 0xFF {
            marker = cur.u8()?;
        }
        match marker {
            EOI => break,
            0xE0..=0xEF | COM => {
                cur.segment()?;
            }
            DQT => {
                let seg = cur.segment()?;
                let mut s = Cursor { bytes: seg, pos: 0 };
                while s.pos < seg.len() {
                    let pq_tq = s.u8()?;
                    let (wide, id) = (pq_tq >> 4, (pq_tq & 0x0F) as usize);
                    if id > 3 || wide > 1 {
                        return Err(Error::format("bad DQT table header"));
                    }
                    let mut steps = [0u16; 64];
                    for &n in &zigzag::ZIGZAG {
                        steps[n] = if wide == 1 { s.u16()? } else { s.u8()? as u16 };
                    }
                    quant[id] = Some(QuantTable::new(steps).map_err(|_| Error::format("zero quantizer step"))?);
                }
            }
            DHT => {
                let seg = cur.segment()?;
                let mut s = Cursor { bytes: seg, pos: 0 };
                while s.pos < seg.len() {
                    let tc_th = s.u8()?;
                    let (tc, th) = (tc_th >> 4, (tc_th & 0x0F) as usize);
                    if tc > 1 || th > 3 {
                        return Err(Error::format("bad DHT table header"));
                    }
                    let mut counts = [0u8; 16];
                    counts.copy_from_slice(s.take(16)?);
                    let n: usize = counts.iter().map(|&c| c as usize).sum();
                    let symbols = s.take(n)?.to_vec();
                    let table = HuffmanTable::new(HuffmanSpec::new(counts, symbols)?)?;
                    if tc == 0 {
                        dc[th] = Some(table);
                    } else {
                        ac[th] = Some(table);
                    }
                }
            }
            SOF0 => {
                let seg = cur.segment()?;
                let mut s = Cursor { bytes: seg, pos: 0 };
                if s.u8()? != 8 {
                    return Err(Error::Unsupported("sample precision other than 8 bits".into()));
                }
                let height = s.u16()?;
                let width = s.u16()?;
                if width == 0 || height == 0 {
                    return Err(Error::Unsupported("zero or DNL-defined dimensions".into()));
                }
                let n = s.u8()?;
                if n != 3 {
                    return Err(Error::Unsupported(format!("{n}-component images")));
                }
                let mut comps = Vec::new();
                for _ in 0..n {
                    let id = s.u8()?;
                    let sampling = s.u8()?;
                    let q = s.u8()?;
                    if sampling != 0x11 {
                        return Err(Error::Unsupported("chroma subsampling".into()));
                    }
                    if q > 3 {
                        return Err(Error::format("bad quant table selector"));
                    }
                    comps.push(FrameComponent { id, quant: q });
                }
                frame = Some((width, height, comps));
            }
            0xC1..=0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF => {
                return Err(Error::Unsupported(format!(
                    "SOF{} (only baseline SOF0 is supported)",
                    marker - 0xC0
                )));
            }
            DRI => {
                let seg = cur.segment()?;
                if seg.len() != 2 {
                    return Err(Error::format("bad DRI segment"));
                }
                if seg != [0, 0] {
                    return Err(Error::Unsupported("restart intervals".into()));
                }
            }
            SOS => {
                if result.is_some() {
                    return Err(Error::Unsupported("multiple scans".into()));
                }
                let (width, height, comps) = frame
                    .as_ref()
                    .ok_or_else(|| Error::format("SOS before SOF"))?;
                let seg = cur.segment()?;
                let mut s = Cursor { bytes: seg, pos: 0 };
                let ns = s.u8()? as usize;
                if ns != 3 {
                    return Err(Error::Unsupported("non-interleaved scans".into()));
                }
                // (dc selector, ac selector) in frame component order
                let mut selectors = [(0usize, 0usize); 3];
                for k in 0..ns {
                    let id = s.u8()?;
                    let t = s.u8()?;
                    let idx = comps
                        .iter()
                        .position(|c| c.id == id)
                        .ok_or_else(|| Error::format(format!("scan references unknown component {id}")))?;
                    if idx != k {
                        return Err(Error::Unsupported("scan component order differs from frame".into()));
                    }
                    selectors[idx] = ((t >> 4) as usize, (t & 0x0F) as usize);
                }
                let (ss, se, a) = (s.u8()?, s.u8()?, s.u8()?);
                if ss != 0 || se != 63 || a != 0 {
                    return Err(Error::Unsupported("progressive scan parameters".into()));
                }

                let pick = |k: usize| -> Result<(QuantTable, HuffmanTable, HuffmanTable)> {
                    let (d, a) = selectors[k];
                    let q = quant
                        .get(comps[k].quant as usize)
                        .copied()
                        .flatten()
                        .ok_or_else(|| Error::format("missing quantization table"))?;
                    let dt = dc.get(d).cloned().flatten().ok_or_else(|| Error::format("missing DC table"))?;
                    let at = ac.get(a).cloned().flatten().ok_or_else(|| Error::format("missing AC table"))?;
                    Ok((q, dt, at))
                };
                let (q0, dc0, ac0) = pick(0)?;
                let (q1, dc1, ac1) = pick(1)?;
                let (q2, dc2, ac2) = pick(2)?;
                if q1 != q2 || dc1 != dc2 || ac1 != ac2 {
                    return Err(Error::Unsupported("different tables for the two chroma components".into()));
                }
                let huffman = HuffmanTables {
                    dc: [dc0, dc1],
                    ac: [ac0, ac1],
                };

                let (data, marker_pos) = unstuff(bytes, cur.pos)?;
                cur.pos = marker_pos;
                let bw = blocks_for(*width as u32);
                let bh = blocks_for(*height as u32);
                let mut r = BitReader::new(&data);
                let mut components: [Vec<_>; 3] = Default::default();
                for _ in 0..bw * bh {
                    for c in Component::ALL {
                        let t = class(c);
                        components[c.index()].push(read_tokens(&mut r, &huffman.dc[t], &huffman.ac[t])?);
                    }
                }
                result = Some(JpegFile {
                    width: *width,
                    height: *height,
                    quant: [q0, q1],
                    huffman,
                    stream: EntropyStream {
                        blocks_w: bw,
                        blocks_h: bh,
                        components,
                    },
                });
            }
            0xD0..=0xD7 => return Err(Error::format("restart marker outside entropy data")),
            m => return Err(Error::format(format!("unknown marker 0xFF{m:02X}"))),
        }
    }
    result.ok_or_else(|| Error::format("no scan before EOI"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{JpegEncoder, RgbImage};

    fn noisy(w: u32, h: u32, seed: u32) -> RgbImage {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        let px = (0..w * h * 3)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s >> 24) as u8
            })
            .collect();
        RgbImage::new(w, h, px).unwrap()
    }

    #[test]
    fn round_trip_structure_and_bytes() {
        let img = noisy(24, 16, 3);
        let file = JpegEncoder::new(80).unwrap().encode_file(&img).unwrap();
        let bytes = serialize_jpeg(&file).unwrap();
        let back = parse_jpeg(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(serialize_jpeg(&back).unwrap(), bytes);
        assert_eq!(&bytes[..2], &[0xFF, 0xD8]);
        assert_eq!(&bytes[bytes.len() - 2..], &[0xFF, 0xD9]);
    }

    #[test]
    fn stuffing_follows_every_ff_in_scan() {
        let img = noisy(64, 64, 9);
        let bytes = JpegEncoder::new(95).unwrap().compress(&img).unwrap();
        // find SOS payload start
        let sos = bytes.windows(2).position(|w| w == [0xFF, SOS]).unwrap();
        let len = u16::from_be_bytes([bytes[sos + 2], bytes[sos + 3]]) as usize;
        let data = &bytes[sos + 2 + len..bytes.len() - 2];
        let mut saw_ff = false;
        for (i, &b) in data.iter().enumerate() {
            if b == 0xFF {
                saw_ff = true;
                assert_eq!(data[i + 1], 0x00);
            }
        }
        assert!(saw_ff, "test image should produce at least one 0xFF");
    }

    #[test]
    fn errors() {
        assert!(parse_jpeg(&[0x00, 0x01]).is_err());
        let img = noisy(16, 16, 1);
        let bytes = JpegEncoder::default().compress(&img).unwrap();
        assert!(matches!(parse_jpeg(&bytes[..bytes.len() - 10]), Err(Error::Format(_))));
        // unknown marker after SOI
        let mut bad = vec![0xFF, 0xD8, 0xFF, 0x02, 0x00, 0x02];
        bad.extend_from_slice(&bytes[2..]);
        assert!(parse_jpeg(&bad).is_err());
        // progressive frame
        let mut prog = bytes.clone();
        let sof = prog.windows(2).position(|w| w == [0xFF, SOF0]).unwrap();
        prog[sof + 1] = 0xC2;
        assert!(matches!(parse_jpeg(&prog), Err(Error::Unsupported(_))));
    }
}
