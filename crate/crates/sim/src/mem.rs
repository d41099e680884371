//! Device memory regions.
//!
//! Every addressable region — buffer parameter, object parameter, or kernel
//! field — is a flat byte range backed by a vector of 32-bit atomic words.
//! Word-level atomicity is the contract the device offers: 4-byte accesses
//! are single-copy atomic, 8-byte accesses are two word operations (low word
//! first) and may tear under a data race, exactly like the hardware this
//! models. Read-modify-write operations are linearizable per word.
//!
//! All atomic accesses use relaxed ordering: the model promises per-word
//! atomicity and RMW linearizability, nothing about cross-word ordering.
//! Joining the worker pool at the end of a launch establishes the
//! happens-before edge that makes final contents visible to the host.

use jacc_core::interp::{atomic_combine, ArrayData, ScalarValue};
use jacc_core::lir::RegType;
use jacc_core::types::{AtomicOp, ScalarType};
use std::sync::atomic::{AtomicU32, Ordering::Relaxed};

/// A fault raised by a region access. The executor attaches the region name
/// and converts it into a [`crate::SimTrap`].
#[derive(Debug, Clone, PartialEq)]
pub enum AccessFault {
    /// Byte range `[offset, offset + size)` falls outside the region.
    OutOfRange { offset: i64, size: u32 },
    /// Offset is not a multiple of the access size.
    Misaligned { offset: i64, size: u32 },
    /// The operation/type pair is not supported (e.g. bitwise atomic on f32).
    Unsupported(String),
}

/// One flat memory region.
#[derive(Debug)]
pub struct Region {
    /// Element type, if the region holds a homogeneous array. Object
    /// parameters are raw byte regions and carry `None`.
    elem: Option<ScalarType>,
    /// Element count (only meaningful when `elem` is set).
    len: usize,
    byte_len: usize,
    words: Vec<AtomicU32>,
}

fn zeroed_words(byte_len: usize) -> Vec<AtomicU32> {
    (0..byte_len.div_ceil(4)).map(|_| AtomicU32::new(0)).collect()
}

impl Region {
    /// Zero-filled array region of `len` elements.
    pub fn zeroed(elem: ScalarType, len: usize) -> Self {
        let byte_len = len * elem.size_bytes() as usize;
        Region { elem: Some(elem), len, byte_len, words: zeroed_words(byte_len) }
    }

    /// Array region initialized from host data.
    pub fn from_array(data: &ArrayData) -> Self {
        let mut r = Self::zeroed(data.elem_type(), data.len());
        for i in 0..data.len() {
            r.store_elem(i, data.get(i));
        }
        r
    }

    /// Raw byte region (composite object), initialized from packed bytes.
    /// The byte length must be a multiple of 4; the packed layout is
    /// naturally aligned so sizes always are.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let words = bytes
            .chunks(4)
            .map(|c| {
                let mut w = [0u8; 4];
                w[..c.len()].copy_from_slice(c);
                AtomicU32::new(u32::from_le_bytes(w))
            })
            .collect();
        Region { elem: None, len: bytes.len(), byte_len: bytes.len(), words }
    }

    /// Element count for arrays, byte count for raw regions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    pub fn elem(&self) -> Option<ScalarType> {
        self.elem
    }

    fn check(&self, offset: i64, size: u32) -> Result<usize, AccessFault> {
        if offset < 0 || offset as u128 + size as u128 > self.byte_len as u128 {
            return Err(AccessFault::OutOfRange { offset, size });
        }
        if offset % size as i64 != 0 {
            return Err(AccessFault::Misaligned { offset, size });
        }
        Ok(offset as usize)
    }

    fn word(&self, byte: usize) -> &AtomicU32 {
        &self.words[byte / 4]
    }

    /// Typed load at a byte offset. Predicate loads read a full word and
    /// report `true` for any non-zero value.
    pub fn load(&self, ty: RegType, offset: i64) -> Result<ScalarValue, AccessFault> {
        let size = access_size(ty);
        let at = self.check(offset, size)?;
        Ok(match ty {
            RegType::Pred => ScalarValue::Bool(self.word(at).load(Relaxed) != 0),
            RegType::I32 => ScalarValue::I32(self.word(at).load(Relaxed) as i32),
            RegType::F32 => ScalarValue::F32(f32::from_bits(self.word(at).load(Relaxed))),
            RegType::I64 => {
                let lo = self.word(at).load(Relaxed) as u64;
                let hi = self.word(at + 4).load(Relaxed) as u64;
                ScalarValue::I64((lo | (hi << 32)) as i64)
            }
            RegType::F64 => {
                let lo = self.word(at).load(Relaxed) as u64;
                let hi = self.word(at + 4).load(Relaxed) as u64;
                ScalarValue::F64(f64::from_bits(lo | (hi << 32)))
            }
        })
    }

    /// Typed store at a byte offset. Predicates store 0 or 1 as a word.
    pub fn store(&self, ty: RegType, offset: i64, v: ScalarValue) -> Result<(), AccessFault> {
        let size = access_size(ty);
        let at = self.check(offset, size)?;
        let bits: u64 = match (ty, v) {
            (RegType::Pred, ScalarValue::Bool(b)) => b as u64,
            (RegType::I32, ScalarValue::I32(x)) => x as u32 as u64,
            (RegType::F32, ScalarValue::F32(x)) => x.to_bits() as u64,
            (RegType::I64, ScalarValue::I64(x)) => x as u64,
            (RegType::F64, ScalarValue::F64(x)) => x.to_bits(),
            (ty, v) => {
                return Err(AccessFault::Unsupported(format!(
                    "store of {} value to {} location",
                    v.ty(),
                    ty.suffix()
                )))
            }
        };
        match ty {
            RegType::I64 | RegType::F64 => {
                self.word(at).store(bits as u32, Relaxed);
                self.word(at + 4).store((bits >> 32) as u32, Relaxed);
            }
            _ => self.word(at).store(bits as u32, Relaxed),
        }
        Ok(())
    }

    /// Atomic read-modify-write; returns the value the location held before
    /// the update. Only 4-byte types participate: i32 supports all five
    /// operations, f32 supports add and sub. The combine step is shared with
    /// the interpreter so both execution paths agree bit for bit.
    pub fn atomic_apply(
        &self,
        op: AtomicOp,
        ty: RegType,
        offset: i64,
        operand: ScalarValue,
    ) -> Result<ScalarValue, AccessFault> {
        let (decode, encode): (fn(u32) -> ScalarValue, fn(ScalarValue) -> u32) = match ty {
            RegType::I32 => (
                |w| ScalarValue::I32(w as i32),
                |v| if let ScalarValue::I32(x) = v { x as u32 } else { unreachable!() },
            ),
            RegType::F32 => (
                |w| ScalarValue::F32(f32::from_bits(w)),
                |v| if let ScalarValue::F32(x) = v { x.to_bits() } else { unreachable!() },
            ),
            other => {
                return Err(AccessFault::Unsupported(format!(
                    "atomic {} on {} location",
                    op.keyword(),
                    other.suffix()
                )))
            }
        };
        if operand.ty().size_bytes() != 4 || (ty == RegType::I32) != matches!(operand, ScalarValue::I32(_)) {
            return Err(AccessFault::Unsupported(format!(
                "atomic operand type {} does not match {} location",
                operand.ty(),
                ty.suffix()
            )));
        }
        let at = self.check(offset, 4)?;
        let w = self.word(at);
        let mut cur = w.load(Relaxed);
        loop {
            let next = atomic_combine(op, decode(cur), operand)
                .map_err(|e| AccessFault::Unsupported(e.to_string()))?;
            match w.compare_exchange_weak(cur, encode(next), Relaxed, Relaxed) {
                Ok(_) => return Ok(decode(cur)),
                Err(seen) => cur = seen,
            }
        }
    }

    fn load_elem(&self, i: usize) -> ScalarValue {
        let elem = self.elem.expect("element access on raw region");
        self.load(RegType::of(elem), (i * elem.size_bytes() as usize) as i64)
            .expect("in-range element")
    }

    fn store_elem(&mut self, i: usize, v: ScalarValue) {
        let elem = self.elem.expect("element access on raw region");
        self.store(RegType::of(elem), (i * elem.size_bytes() as usize) as i64, v)
            .expect("in-range element");
    }

    /// Copy the region back out as host array data.
    pub fn to_array(&self) -> ArrayData {
        let elem = self.elem.expect("array readback on raw region");
        let mut out = ArrayData::zeros(elem, self.len);
        for i in 0..self.len {
            out.set(i, self.load_elem(i));
        }
        out
    }

    /// Copy the region back out as packed bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len);
        for w in &self.words {
            out.extend_from_slice(&w.load(Relaxed).to_le_bytes());
        }
        out.truncate(self.byte_len);
        out
    }
}

/// Access size in bytes for each register class. Predicates occupy a full
/// word in memory (bool fields and buffers store 0/1 words).
pub fn access_size(ty: RegType) -> u32 {
    match ty {
        RegType::Pred | RegType::I32 | RegType::F32 => 4,
        RegType::I64 | RegType::F64 => 8,
    }
}

/// Serialize array data as a raw little-endian element stream.
pub fn array_to_bytes(data: &ArrayData) -> Vec<u8> {
    Region::from_array(data).to_bytes()
}

/// Parse a raw little-endian element stream back into array data.
pub fn array_from_bytes(elem: ScalarType, bytes: &[u8]) -> Result<ArrayData, String> {
    let size = elem.size_bytes() as usize;
    if bytes.len() % size != 0 {
        return Err(format!(
            "byte stream of length {} is not a whole number of {size}-byte {elem} elements",
            bytes.len()
        ));
    }
    let region = Region::from_bytes(bytes);
    let mut out = ArrayData::zeros(elem, bytes.len() / size);
    for i in 0..out.len() {
        let v = region
            .load(RegType::of(elem), (i * size) as i64)
            .expect("in-range element");
        out.set(i, v);
    }
    Ok(out)
}
