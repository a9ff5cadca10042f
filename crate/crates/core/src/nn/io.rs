//! Binary model files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic        4 bytes  "SBNN"
//! version      u32      1
//! layer_count  u32
//! per layer:   in u32, out u32, activation u8 (0 relu, 1 linear, 2 softmax)
//! per layer:   weights out*in f64 (row-major), then bias out f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Mlp, NnError, Result};

const MAGIC: &[u8; 4] = b"SBNN";
pub const FORMAT_VERSION: u32 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
        Activation::Softmax => 2,
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Mlp {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
            w.write_all(&[activation_code(l.activation)])?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Mlp> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        if count == 0 || count > 1024 {
            return Err(NnError::Format(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let fan_in = read_u32(&mut r)? as usize;
            let fan_out = read_u32(&mut r)? as usize;
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let activation = match code[0] {
                0 => Activation::Relu,
                1 => Activation::Linear,
                2 => Activation::Softmax,
                c => return Err(NnError::Format(format!("unknown activation code {c}"))),
            };
            shapes.push((fan_in, fan_out, activation));
        }
        let mut layers = Vec::with_capacity(count);
        for (fan_in, fan_out, activation) in shapes {
            let weights = Array2::from_shape_vec((fan_out, fan_in), read_f64s(&mut r, fan_in * fan_out)?)
                .map_err(|e| NnError::Format(e.to_string()))?;
            let bias = Array1::from(read_f64s(&mut r, fan_out)?);
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes", rest.len())));
        }
        Mlp::from_layers(layers).map_err(|e| NnError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Mlp> {
        let f = std::fs::File::open(path)?;
        Mlp::read_from(std::io::BufReader::new(f))
    }
}
