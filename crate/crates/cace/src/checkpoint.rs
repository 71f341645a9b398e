//! Binary checkpoint: transfer network, segmenter and style memory.
//!
//! ```text
//! magic        8 bytes  "CACECKPT"
//! version      u32      1
//! channels     3 × u32  encoder stage widths
//! width        u32      segmenter width
//! classes      u32
//! style mode   u8       0 class-conditional, 1 global
//! lambda       f64
//! skip weight  f64
//! eps          f64
//! encoder      u64 length + f64 parameters
//! decoder      u64 length + f64 parameters
//! segmenter    u64 length + f64 parameters
//! memory       embedded style-memory file (see `memory_format`)
//! ```
//!
//! Integers and floats are little-endian; floats round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use cace_core::segmenter::Segmenter;
use cace_core::style_memory::StyleMemory;
use cace_core::transfer_net::{Decoder, Encoder, StyleMode, TransferNet};

use crate::binio::{FormatError, Reader, Result, Writer};
use crate::memory_format;

pub const MAGIC: &[u8; 8] = b"CACECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: TransferNet,
    pub segmenter: Segmenter,
    pub memory: StyleMemory,
}

impl Checkpoint {
    pub fn write(&self, w: impl Write) -> Result<()> {
        let mut w = Writer(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        for c in self.net.encoder.channels() {
            w.u32(c as u32)?;
        }
        w.u32(self.segmenter.width() as u32)?;
        w.u32(self.segmenter.classes() as u32)?;
        w.u8(match self.net.mode {
            StyleMode::ClassConditional => 0,
            StyleMode::Global => 1,
        })?;
        w.f64(self.net.lambda)?;
        w.f64(self.net.skip_weight)?;
        w.f64(self.net.eps)?;
        w.vec(self.net.encoder.params())?;
        w.vec(self.net.decoder.params())?;
        w.vec(self.segmenter.params())?;
        memory_format::write_into(&mut w, &self.memory)
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        r.magic(MAGIC, "checkpoint")?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version { what: "checkpoint", found: version });
        }
        let mut channels = [0usize; 3];
        for c in &mut channels {
            *c = r.u32()? as usize;
        }
        let width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        if channels.iter().chain([&width, &classes]).any(|&v| v == 0 || v > 4096) {
            return Err(FormatError::Corrupt("implausible architecture".into()));
        }
        let mode = match r.u8()? {
            0 => StyleMode::ClassConditional,
            1 => StyleMode::Global,
            m => return Err(FormatError::Corrupt(format!("style mode {m}"))),
        };
        let (lambda, skip_weight, eps) = (r.f64()?, r.f64()?, r.f64()?);
        let encoder = Encoder::from_params(channels, r.vec()?)?;
        let decoder = Decoder::from_params(channels, r.vec()?)?;
        let segmenter = Segmenter::from_params(width, classes, r.vec()?)?;
        let memory = memory_format::read_from(&mut r)?;
        r.finish()?;
        let mut net = TransferNet::new(channels, 0, 0, mode, lambda);
        net.encoder = encoder;
        net.decoder = decoder;
        net.skip_weight = skip_weight;
        net.eps = eps;
        Ok(Self { net, segmenter, memory })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
