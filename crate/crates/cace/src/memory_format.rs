//! Versioned binary encoding of a [`StyleMemory`].
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "CACESTYL"
//! version    u32      1
//! mode       u8       0 full, 1 subsample, 2 gaussian
//! fraction   f64      subsample fraction (1.0 for the other modes)
//! domains    u32
//! per domain, ascending id:
//!   kind     u8       0 samples, 1 gaussian
//!   id       u32
//!   layers   u32
//!   per layer: classes u32, channels u32
//!   samples:  count u32, then per sample and layer:
//!             mean[classes·channels] std[classes·channels] count[classes]   (f64)
//!   gaussian: per layer:
//!             mean_of_mean var_of_mean mean_of_std var_of_std  (f64, classes·channels each)
//!             samples[classes] (u32) mean_count[classes] (f64)
//! ```

use std::io::{Read, Write};

use cace_core::style_memory::{DomainStyle, GaussianLayer, GaussianStyle, StorageMode, StoredStyle, StyleMemory};
use cace_core::{ClassMoments, LayerMoments};

use crate::binio::{FormatError, Reader, Result, Writer};

pub const MAGIC: &[u8; 8] = b"CACESTYL";
pub const VERSION: u32 = 1;

/// Largest class or channel count accepted when reading.
const MAX_DIM: u32 = 4096;

pub fn write_memory(w: impl Write, memory: &StyleMemory) -> Result<()> {
    let mut w = Writer(w);
    write_into(&mut w, memory)
}

pub(crate) fn write_into<W: Write>(w: &mut Writer<W>, memory: &StyleMemory) -> Result<()> {
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    let (mode, p) = match memory.mode() {
        StorageMode::Full => (0, 1.0),
        StorageMode::Subsample(p) => (1, p),
        StorageMode::Gaussian => (2, 1.0),
    };
    w.u8(mode)?;
    w.f64(p)?;
    w.u32(memory.len() as u32)?;
    for stored in memory.iter() {
        match stored {
            StoredStyle::Samples(style) => {
                w.u8(0)?;
                w.u32(style.domain_id)?;
                let proto = style
                    .samples
                    .first()
                    .ok_or_else(|| FormatError::Corrupt("stored domain without samples".into()))?;
                w.u32(proto.layers.len() as u32)?;
                for l in &proto.layers {
                    w.u32(l.classes() as u32)?;
                    w.u32(l.channels() as u32)?;
                }
                w.u32(style.samples.len() as u32)?;
                for s in &style.samples {
                    if !s.same_layout(proto) {
                        return Err(FormatError::Corrupt("samples differ in layout".into()));
                    }
                    for l in &s.layers {
                        w.f64s(&l.mean)?;
                        w.f64s(&l.std)?;
                        w.f64s(&l.count)?;
                    }
                }
            }
            StoredStyle::Gaussian(g) => {
                w.u8(1)?;
                w.u32(g.domain_id)?;
                w.u32(g.layers.len() as u32)?;
                for l in &g.layers {
                    w.u32(l.classes as u32)?;
                    w.u32(l.channels as u32)?;
                }
                for l in &g.layers {
                    w.f64s(&l.mean_of_mean)?;
                    w.f64s(&l.var_of_mean)?;
                    w.f64s(&l.mean_of_std)?;
                    w.f64s(&l.var_of_std)?;
                    l.samples.iter().try_for_each(|&n| w.u32(n))?;
                    w.f64s(&l.mean_count)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_memory(r: impl Read) -> Result<StyleMemory> {
    let mut r = Reader(r);
    let memory = read_from(&mut r)?;
    r.finish()?;
    Ok(memory)
}

fn dims<R: Read>(r: &mut Reader<R>) -> Result<Vec<(usize, usize)>> {
    let layers = r.u32()?;
    if layers == 0 || layers > 16 {
        return Err(FormatError::Corrupt(format!("{layers} layers")));
    }
    (0..layers)
        .map(|_| {
            let (c, k) = (r.u32()?, r.u32()?);
            if c == 0 || k == 0 || c > MAX_DIM || k > MAX_DIM {
                return Err(FormatError::Corrupt(format!("layer of {c} classes × {k} channels")));
            }
            Ok((c as usize, k as usize))
        })
        .collect()
}

pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<StyleMemory> {
    r.magic(MAGIC, "style memory")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::Version { what: "style memory", found: version });
    }
    let mode = match (r.u8()?, r.f64()?) {
        (0, _) => StorageMode::Full,
        (1, p) => StorageMode::Subsample(p),
        (2, _) => StorageMode::Gaussian,
        (m, _) => return Err(FormatError::Corrupt(format!("storage mode {m}"))),
    };
    let mut memory = StyleMemory::new(mode)?;
    let n = r.u32()?;
    for _ in 0..n {
        let kind = r.u8()?;
        let domain_id = r.u32()?;
        let dims = dims(r)?;
        let stored = match kind {
            0 => {
                let count = r.u32()?;
                if count == 0 {
                    return Err(FormatError::Corrupt(format!("domain {domain_id} has no samples")));
                }
                let samples = (0..count)
                    .map(|_| {
                        let layers = dims
                            .iter()
                            .map(|&(c, k)| {
                                let mut lm = LayerMoments::empty(c, k);
                                lm.mean = r.f64s(c * k)?;
                                lm.std = r.f64s(c * k)?;
                                lm.count = r.f64s(c)?;
                                Ok(lm)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(ClassMoments { layers })
                    })
                    .collect::<Result<Vec<_>>>()?;
                StoredStyle::Samples(DomainStyle { domain_id, samples })
            }
            1 => {
                let layers = dims
                    .iter()
                    .map(|&(classes, channels)| {
                        let n = classes * channels;
                        Ok(GaussianLayer {
                            classes,
                            channels,
                            mean_of_mean: r.f64s(n)?,
                            var_of_mean: r.f64s(n)?,
                            mean_of_std: r.f64s(n)?,
                            var_of_std: r.f64s(n)?,
                            samples: (0..classes).map(|_| r.u32()).collect::<Result<_>>()?,
                            mean_count: r.f64s(classes)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                StoredStyle::Gaussian(GaussianStyle { domain_id, layers })
            }
            k => return Err(FormatError::Corrupt(format!("entry kind {k}"))),
        };
        if memory.contains(domain_id) {
            return Err(FormatError::Corrupt(format!("domain {domain_id} stored twice")));
        }
        memory.insert_stored(stored);
    }
    Ok(memory)
}
