//! On-disk formats.
//!
//! `.swpt` tensor (all integers little-endian):
//!
//! | bytes      | field                                   |
//! |------------|-----------------------------------------|
//! | 4          | magic `SWPT`                            |
//! | 4          | version `u32` = 1                       |
//! | 1          | dtype `u8` (0 = f32, 1 = f64)           |
//! | 1          | ndim `u8`                               |
//! | 8 * ndim   | dims `u64`                              |
//! | rest       | row-major payload in the stored dtype   |
//!
//! `.mask`: magic `SWMK`, version `u32`, rows `u64`, cols `u64`, then the
//! row-major keep bits packed eight per byte, element `k` of a byte in bit
//! `k`, zero padded at the end.
//!
//! `.swnm` packed N:M: magic `SWNM`, version `u32`, dtype `u8`, N `u8`,
//! M `u8`, index bit-width `u8`, rows `u64`, cols `u64`, the kept values in
//! the stored dtype, then one byte per kept value holding its position
//! within the group.
//!
//! Traces are CSV with header `row,i,L,est,dev,pruned`; reals carry 17
//! significant digits and trailing `#` lines hold summaries.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nm::{NmPattern, PackedNm};
use crate::tensor::{Calibration, Dtype, MaskMatrix, MatrixBuffer, VectorBuffer};
use crate::trace::TraceRecord;

pub const TENSOR_MAGIC: &[u8; 4] = b"SWPT";
pub const MASK_MAGIC: &[u8; 4] = b"SWMK";
pub const PACKED_MAGIC: &[u8; 4] = b"SWNM";
pub const FORMAT_VERSION: u32 = 1;
pub const TRACE_HEADER: [&str; 6] = ["row", "i", "L", "est", "dev", "pruned"];

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { expected: self.pos + n, found: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit in memory")))
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }
}

fn put_values(out: &mut Vec<u8>, dtype: Dtype, data: &[f64]) {
    match dtype {
        Dtype::F32 => data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

fn get_values(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

fn payload_len(dims: &[usize], elem: usize) -> Result<usize> {
    dims.iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {dims:?} overflows")))
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Data(format!("non-finite element {} at flat index {i}", data[i]))),
        None => Ok(()),
    }
}

/// A decoded `.swpt` tensor of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode_tensor(dtype: Dtype, dims: &[usize], data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * dims.len() + data.len() * dtype.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_values(&mut out, dtype, data);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor> {
    let mut cur = Cursor::new(bytes);
    cur.header(TENSOR_MAGIC)?;
    let code = cur.u8()?;
    let dtype = Dtype::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let ndim = cur.u8()? as usize;
    let dims = (0..ndim).map(|_| cur.usize()).collect::<Result<Vec<_>>>()?;
    let expected = payload_len(&dims, dtype.size())?;
    let payload = cur.rest();
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    let data = get_values(payload, dtype);
    check_finite(&data)?;
    Ok(RawTensor { dtype, dims, data })
}

pub fn encode_matrix(m: &MatrixBuffer) -> Vec<u8> {
    encode_tensor(m.dtype(), &[m.rows(), m.cols()], m.data())
}

pub fn decode_matrix(bytes: &[u8]) -> Result<MatrixBuffer> {
    let t = decode_tensor(bytes)?;
    match t.dims[..] {
        [rows, cols] => MatrixBuffer::new(rows, cols, t.dtype, t.data),
        _ => Err(Error::Format(format!("expected a rank-2 tensor, found rank {}", t.dims.len()))),
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixBuffer> {
    decode_matrix(&fs::read(path)?)
}

pub fn write_matrix(m: &MatrixBuffer, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_matrix(m))?)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorBuffer> {
    let t = decode_tensor(&fs::read(path)?)?;
    match t.dims[..] {
        [_] => Ok(VectorBuffer::new(t.dtype, t.data)),
        _ => Err(Error::Format(format!("expected a rank-1 tensor, found rank {}", t.dims.len()))),
    }
}

pub fn write_vector(v: &VectorBuffer, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_tensor(v.dtype(), &[v.len()], v.data()))?)
}

/// Reads calibration activations: a vector, or a `B x n` sample matrix that
/// is reduced to one vector by root-mean-square over samples.
pub fn read_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    let t = decode_tensor(&fs::read(path)?)?;
    match t.dims[..] {
        [_] => Ok(Calibration::from_vector(&VectorBuffer::new(t.dtype, t.data))),
        [rows, cols] => Calibration::from_samples(&MatrixBuffer::new(rows, cols, t.dtype, t.data)?),
        _ => Err(Error::Format(format!("calibration must be rank 1 or 2, found rank {}", t.dims.len()))),
    }
}

/// Packs booleans eight per byte, element `k` in bit `k % 8`.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |b, (k, &on)| b | ((on as u8) << k)))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect()
}

pub fn encode_mask(mask: &MaskMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + mask.bits().len().div_ceil(8));
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(mask.cols() as u64).to_le_bytes());
    out.extend_from_slice(&pack_bits(mask.bits()));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskMatrix> {
    let mut cur = Cursor::new(bytes);
    cur.header(MASK_MAGIC)?;
    let rows = cur.usize()?;
    let cols = cur.usize()?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("mask shape {rows}x{cols} overflows")))?;
    let payload = cur.rest();
    let expected = len.div_ceil(8);
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    if len % 8 != 0 && payload[expected - 1] >> (len % 8) != 0 {
        return Err(Error::Format("mask padding bits are not zero".into()));
    }
    MaskMatrix::new(rows, cols, unpack_bits(payload, len))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskMatrix> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(mask: &MaskMatrix, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

pub fn encode_packed_nm(p: &PackedNm) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(p.dtype().code());
    out.push(p.pattern().n_keep() as u8);
    out.push(p.pattern().m_group() as u8);
    out.push(p.pattern().index_bits());
    out.extend_from_slice(&(p.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(p.cols() as u64).to_le_bytes());
    put_values(&mut out, p.dtype(), p.values());
    out.extend_from_slice(p.indices());
    out
}

pub fn decode_packed_nm(bytes: &[u8]) -> Result<PackedNm> {
    let mut cur = Cursor::new(bytes);
    cur.header(PACKED_MAGIC)?;
    let code = cur.u8()?;
    let dtype = Dtype::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let n = cur.u8()? as usize;
    let m = cur.u8()? as usize;
    let bits = cur.u8()?;
    let pattern = NmPattern::new(n, m).map_err(|e| Error::Format(e.to_string()))?;
    if bits != pattern.index_bits() {
        return Err(Error::Format(format!("index width {bits} does not match pattern {pattern}")));
    }
    let rows = cur.usize()?;
    let cols = cur.usize()?;
    if cols % m != 0 {
        return Err(Error::Format(format!("{cols} columns are not a multiple of {m}")));
    }
    let kept = payload_len(&[rows, cols / m, n], 1)?;
    let expected = kept * dtype.size() + kept;
    let payload = cur.rest();
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    let (vals, idx) = payload.split_at(kept * dtype.size());
    let values = get_values(vals, dtype);
    check_finite(&values)?;
    PackedNm::new(rows, cols, pattern, dtype, values, idx.to_vec())
}

pub fn read_packed_nm(path: impl AsRef<Path>) -> Result<PackedNm> {
    decode_packed_nm(&fs::read(path)?)
}

pub fn write_packed_nm(p: &PackedNm, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_packed_nm(p))?)
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes trace CSV to any sink; each summary pair becomes a `# key=value` line.
pub fn write_trace_to<W: Write>(sink: W, records: &[TraceRecord], summary: &[(&str, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(TRACE_HEADER)?;
    for r in records {
        wtr.write_record([
            r.row.to_string(),
            r.i.to_string(),
            fmt_real(r.l),
            fmt_real(r.est),
            fmt_real(r.dev),
            (r.pruned as u8).to_string(),
        ])?;
    }
    let mut sink = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    for (k, v) in summary {
        writeln!(sink, "# {k}={}", fmt_real(*v))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn write_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    write_trace_to(std::io::BufWriter::new(fs::File::create(path)?), records, &[])
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Format(format!("trace line {line}: missing column {idx}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Format(format!("trace line {line}: cannot parse `{raw}` in column {}", TRACE_HEADER[idx])))
}

pub fn read_trace_from<R: std::io::Read>(source: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Format(format!("unexpected trace header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let pruned: u8 = field(&rec, 5, line + 2)?;
        if pruned > 1 {
            return Err(Error::Format(format!("trace line {}: pruned must be 0 or 1", line + 2)));
        }
        out.push(TraceRecord {
            row: field(&rec, 0, line + 2)?,
            i: field(&rec, 1, line + 2)?,
            l: field(&rec, 2, line + 2)?,
            est: field(&rec, 3, line + 2)?,
            dev: field(&rec, 4, line + 2)?,
            pruned: pruned == 1,
        });
    }
    Ok(out)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    read_trace_from(fs::File::open(path)?)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    RunConfig::parse(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_matrix_round_trip() {
        let m = MatrixBuffer::new(2, 2, Dtype::F32, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..4], b"SWPT");
        assert_eq!(bytes.len(), 4 + 4 + 1 + 1 + 16 + 16);
        let back = decode_matrix(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_matrix(&back), bytes);
    }

    #[test]
    fn short_payload_is_truncation() {
        let bytes = encode_tensor(Dtype::F64, &[3, 3], &[0.0; 8]);
        assert!(matches!(decode_matrix(&bytes), Err(Error::Truncated { expected: 72, found: 64 })));
        let bytes = encode_tensor(Dtype::F64, &[2, 2], &[0.0; 5]);
        assert!(matches!(decode_matrix(&bytes), Err(Error::Truncated { .. })));
        assert!(matches!(decode_matrix(b"SWPT\x01\x00"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_header_is_format_error() {
        let mut bytes = encode_tensor(Dtype::F64, &[1, 1], &[1.0]);
        bytes[0] = b'X';
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_tensor(Dtype::F64, &[1, 1], &[1.0]);
        bytes[4] = 2;
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_tensor(Dtype::F64, &[1, 1], &[1.0]);
        bytes[8] = 9;
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format(_))));
        let bytes = encode_tensor(Dtype::F64, &[1], &[1.0]);
        assert!(matches!(decode_matrix(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_is_data_error() {
        let bytes = encode_tensor(Dtype::F32, &[1, 2], &[1.0, f64::NAN]);
        assert!(matches!(decode_matrix(&bytes), Err(Error::Data(_))));
        let bytes = encode_tensor(Dtype::F64, &[2], &[f64::INFINITY, 1.0]);
        assert!(matches!(decode_tensor(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn mask_packing_examples() {
        assert_eq!(pack_bits(&[true; 8]), vec![0xFF]);
        assert_eq!(pack_bits(&[true, false, true, false]), vec![0b0000_0101]);
        let m = MaskMatrix::new(1, 8, vec![true; 8]).unwrap();
        let bytes = encode_mask(&m);
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 1);
        assert_eq!(*bytes.last().unwrap(), 0xFF);
    }

    #[test]
    fn mask_rejects_dirty_padding_and_truncation() {
        let m = MaskMatrix::new(1, 4, vec![true, false, true, false]).unwrap();
        let mut bytes = encode_mask(&m);
        *bytes.last_mut().unwrap() |= 0x80;
        assert!(matches!(decode_mask(&bytes), Err(Error::Format(_))));
        let bytes = encode_mask(&MaskMatrix::new(3, 3, vec![true; 9]).unwrap());
        assert!(matches!(decode_mask(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &[], &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,i,L,est,dev,pruned\n");
    }

    #[test]
    fn trace_with_summary_and_infinity() {
        let recs = vec![
            TraceRecord { row: 0, i: 0, l: 4.0, est: 4.0, dev: 0.0, pruned: false },
            TraceRecord { row: 0, i: 1, l: f64::INFINITY, est: 4.0, dev: 0.0, pruned: false },
            TraceRecord { row: 3, i: 2, l: 0.1, est: 3.75, dev: 0.21875, pruned: true },
        ];
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &recs, &[("mean_L", 2.5), ("mad_L", 1.75)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\n# mean_L=2.5000000000000000e0\n"));
        assert_eq!(read_trace_from(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn trace_header_is_checked() {
        assert!(matches!(read_trace_from(&b"a,b\n1,2\n"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn packed_nm_round_trip() {
        let p = PackedNm::new(1, 8, NmPattern::TWO_FOUR, Dtype::F32, vec![1.0, 2.0, -3.0, 0.5], vec![0, 2, 1, 3]).unwrap();
        let bytes = encode_packed_nm(&p);
        assert_eq!(&bytes[..4], b"SWNM");
        assert_eq!(bytes[11], 2);
        assert_eq!(decode_packed_nm(&bytes).unwrap(), p);
        assert!(matches!(decode_packed_nm(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 2] = 3;
        bad[n - 1] = 1;
        assert!(matches!(decode_packed_nm(&bad), Err(Error::Structure(_))));
    }

    #[test]
    fn calibration_samples_are_reduced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.swpt");
        let samples = MatrixBuffer::new(2, 2, Dtype::F64, vec![3.0, 1.0, 4.0, 1.0]).unwrap();
        write_matrix(&samples, &path).unwrap();
        let c = read_calibration(&path).unwrap();
        assert_eq!(c.samples, 2);
        assert_eq!(c.x[1], 1.0);
        let v = VectorBuffer::new(Dtype::F32, vec![0.5, 2.0]);
        write_vector(&v, &path).unwrap();
        assert_eq!(read_vector(&path).unwrap(), v);
        assert_eq!(read_calibration(&path).unwrap().samples, 1);
    }

    fn arb_matrix() -> impl Strategy<Value = MatrixBuffer> {
        (0usize..6, 0usize..6, any::<bool>()).prop_flat_map(|(r, c, f32_)| {
            proptest::collection::vec(-1e6f64..1e6, r * c).prop_map(move |d| {
                let dtype = if f32_ { Dtype::F32 } else { Dtype::F64 };
                MatrixBuffer::new(r, c, dtype, d).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn matrix_bytes_round_trip(m in arb_matrix()) {
            let bytes = encode_matrix(&m);
            let back = decode_matrix(&bytes).unwrap();
            prop_assert_eq!(encode_matrix(&back), bytes);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn mask_round_trip(rows in 0usize..7, cols in 0usize..13, seed in any::<u64>()) {
            let bits: Vec<bool> = (0..rows * cols).map(|k| (seed.rotate_left(k as u32 % 64) ^ k as u64) & 1 == 1).collect();
            let m = MaskMatrix::new(rows, cols, bits).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
        }

        #[test]
        fn trace_round_trip(vals in proptest::collection::vec((any::<f64>(), 0.0f64..1e300, any::<bool>()), 0..20)) {
            let recs: Vec<TraceRecord> = vals
                .iter()
                .enumerate()
                .filter(|(_, (l, _, _))| l.is_finite())
                .map(|(i, &(l, dev, pruned))| TraceRecord { row: i / 3, i, l, est: l * 0.5, dev, pruned })
                .collect();
            let mut buf = Vec::new();
            write_trace_to(&mut buf, &recs, &[]).unwrap();
            let back = read_trace_from(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in back.iter().zip(&recs) {
                prop_assert_eq!((a.row, a.i, a.pruned), (b.row, b.i, b.pruned));
                for (x, y) in [(a.l, b.l), (a.est, b.est), (a.dev, b.dev)] {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs());
                }
            }
        }
    }
}
