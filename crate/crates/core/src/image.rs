//! Address-space images: a program placed at a code base plus private data
//! memory.
//!
//! Code and data use separate address namespaces. Instruction `i` sits at
//! code address `base + i`; data is a byte array addressed from 0. The stack
//! used by `call`/`ret` grows down from the top of data memory.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::isa::{Instruction, Program, Value};

/// Process identifier of an address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pid{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("data region must be at least one byte")]
    EmptyData,
    #[error("code range starting at {base:#x} with {len} instructions overflows the address space")]
    Overlap { base: u64, len: usize },
    #[error("secret address {addr:#x} lies outside the {size}-byte data region")]
    SecretOutOfRange { addr: u64, size: usize },
}

/// Data access outside the image's data region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("data access at {addr:#x} (+{width}) is outside the {size}-byte data region")]
pub struct OutOfRange {
    pub addr: u64,
    pub width: u64,
    pub size: usize,
}

/// A loaded address space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSpaceImage {
    pub pid: Pid,
    pub base: u64,
    pub program: Arc<Program>,
    pub data: Vec<u8>,
    pub secret_addr: Option<u64>,
}

/// Places `program` at `base` with `data_size` bytes of zeroed data memory,
/// optionally planting one secret byte.
pub fn load_image(
    program: Program,
    pid: Pid,
    base: u64,
    data_size: usize,
    secret: Option<(u64, u8)>,
) -> Result<AddressSpaceImage, ImageError> {
    if data_size == 0 {
        return Err(ImageError::EmptyData);
    }
    if base.checked_add(program.len() as u64).is_none() {
        return Err(ImageError::Overlap {
            base,
            len: program.len(),
        });
    }
    let mut data = vec![0u8; data_size];
    let mut secret_addr = None;
    if let Some((addr, byte)) = secret {
        if addr >= data_size as u64 {
            return Err(ImageError::SecretOutOfRange {
                addr,
                size: data_size,
            });
        }
        data[addr as usize] = byte;
        secret_addr = Some(addr);
    }
    Ok(AddressSpaceImage {
        pid,
        base,
        program: Arc::new(program),
        data,
        secret_addr,
    })
}

impl AddressSpaceImage {
    pub fn addr_of(&self, index: usize) -> u64 {
        self.base + index as u64
    }

    pub fn index_of(&self, addr: u64) -> Option<usize> {
        let idx = addr.checked_sub(self.base)? as usize;
        (idx < self.program.len()).then_some(idx)
    }

    pub fn fetch(&self, addr: u64) -> Option<&Instruction> {
        self.index_of(addr).map(|i| &self.program.instructions[i])
    }

    pub fn symbol_addr(&self, name: &str) -> Option<u64> {
        self.program.symbol(name).map(|i| self.addr_of(i))
    }

    pub fn entry_addr(&self) -> u64 {
        self.addr_of(self.program.entry)
    }

    /// Resolves a `li` operand to its run-time value.
    pub fn resolve(&self, value: Value) -> u64 {
        match value {
            Value::Const(v) => v as u64,
            Value::Code(i) => self.addr_of(i),
        }
    }

    /// Initial stack pointer: top of data memory, 8-byte aligned.
    pub fn stack_top(&self) -> u64 {
        (self.data.len() as u64) & !7
    }

    fn check(&self, addr: u64, width: u64) -> Result<usize, OutOfRange> {
        match addr.checked_add(width) {
            Some(end) if end <= self.data.len() as u64 => Ok(addr as usize),
            _ => Err(OutOfRange {
                addr,
                width,
                size: self.data.len(),
            }),
        }
    }

    pub fn read_u8(&self, addr: u64) -> Result<u8, OutOfRange> {
        Ok(self.data[self.check(addr, 1)?])
    }

    pub fn write_u8(&mut self, addr: u64, v: u8) -> Result<(), OutOfRange> {
        let a = self.check(addr, 1)?;
        self.data[a] = v;
        Ok(())
    }

    /// Little-endian 64-bit read.
    pub fn read_u64(&self, addr: u64) -> Result<u64, OutOfRange> {
        let a = self.check(addr, 8)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&self.data[a..a + 8]);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) -> Result<(), OutOfRange> {
        let a = self.check(addr, 8)?;
        self.data[a..a + 8].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};

    #[test]
    fn layout_is_base_plus_index() {
        let p = assemble("nop\nhalt\n", CfiMode::Coarse).unwrap();
        let img = load_image(p, Pid(1), 0, 1024, None).unwrap();
        assert_eq!(img.fetch(0), Some(&Instruction::Nop));
        assert_eq!(img.fetch(1), Some(&Instruction::Halt));
        assert_eq!(img.fetch(2), None);

        let p = assemble("nop\nhalt\n", CfiMode::Coarse).unwrap();
        let img = load_image(p, Pid(1), 0x400, 64, None).unwrap();
        for i in 0..2 {
            assert_eq!(img.index_of(img.addr_of(i)), Some(i));
        }
        assert_eq!(img.index_of(0x3ff), None);
    }

    #[test]
    fn secret_is_planted() {
        let p = assemble("halt\n", CfiMode::Coarse).unwrap();
        let img = load_image(p, Pid(2), 0, 1024, Some((0x200, 42))).unwrap();
        assert_eq!(img.read_u8(0x200), Ok(42));
        assert_eq!(img.read_u64(0x200), Ok(42));
    }

    #[test]
    fn layout_errors() {
        let p = assemble("halt\n", CfiMode::Coarse).unwrap();
        assert_eq!(
            load_image(p.clone(), Pid(0), 0, 0, None),
            Err(ImageError::EmptyData)
        );
        assert!(matches!(
            load_image(p.clone(), Pid(0), 0, 16, Some((16, 1))),
            Err(ImageError::SecretOutOfRange { .. })
        ));
        assert!(matches!(
            load_image(p, Pid(0), u64::MAX, 16, None),
            Err(ImageError::Overlap { .. })
        ));
    }

    #[test]
    fn out_of_range_access() {
        let p = assemble("halt\n", CfiMode::Coarse).unwrap();
        let mut img = load_image(p, Pid(0), 0, 16, None).unwrap();
        assert!(img.write_u64(8, 7).is_ok());
        assert!(img.write_u64(9, 7).is_err());
        assert!(img.read_u64(u64::MAX - 2).is_err());
    }
}
