//! Versioned binary checkpoint container.
//!
//! Layout (all little-endian): magic `MTSN`, format version, the
//! architecture string and dataset name, input shape and class count,
//! neuron and surrogate constants, time steps, normalization constants,
//! the Adam step counter, then per parametric layer in declared order:
//! the weight tensor followed by the Adam first and second moments, each
//! as little-endian 32-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::arch::{parse_arch, Shape};
use crate::data::Normalization;
use crate::network::Network;
use crate::neuron::NeuronConfig;
use crate::surrogate::{SurrogateKind, SurrogateSpec};
use crate::training::AdamState;
use crate::{Error, Real, Result};

pub const MAGIC: &[u8; 4] = b"MTSN";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild and evaluate the network.
#[derive(Clone, Debug)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: String,
    pub dataset: String,
    pub input_shape: (usize, usize, usize),
    pub classes: usize,
    pub neuron: NeuronConfig,
    pub surrogate: SurrogateSpec,
    pub time_steps: usize,
    pub norm: Normalization,
    pub adam_step: u64,
}

impl std::fmt::Display for CheckpointHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "format version : {}", self.version)?;
        writeln!(f, "dataset        : {}", self.dataset)?;
        writeln!(f, "architecture   : {}", self.arch)?;
        writeln!(
            f,
            "input shape    : {}x{}x{} ({} classes)",
            self.input_shape.0, self.input_shape.1, self.input_shape.2, self.classes
        )?;
        writeln!(
            f,
            "neuron         : tau_m {} ms, v_th {} mV, s_max {}, dt {} ms",
            self.neuron.tau_m, self.neuron.v_th, self.neuron.s_max, self.neuron.dt
        )?;
        writeln!(
            f,
            "surrogate      : {} (alpha_h {}, alpha_w {})",
            self.surrogate.kind.name(),
            self.surrogate.alpha_h,
            self.surrogate.alpha_w
        )?;
        writeln!(f, "time steps     : {}", self.time_steps)?;
        writeln!(
            f,
            "normalization  : mean {:?}, std {:?}",
            self.norm.mean, self.norm.std
        )?;
        write!(f, "adam steps     : {}", self.adam_step)
    }
}

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_str(w: &mut impl Write, s: &str) -> Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn w_f32_tensor<F: Real>(w: &mut impl Write, t: &ArrayD<F>) -> Result<()> {
    w_u64(w, t.len() as u64)?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &x in t.iter() {
        buf.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn r_str(r: &mut impl Read) -> Result<String> {
    let len = r_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Data(format!("checkpoint string length {len} implausible")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| Error::Data("checkpoint string not utf-8".into()))
}

fn r_f32_vec(r: &mut impl Read) -> Result<Vec<f32>> {
    let len = r_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(Error::Data(format!("checkpoint tensor length {len} implausible")));
    }
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Data(format!("checkpoint truncated: {e}"))
}

fn kind_code(k: SurrogateKind) -> u32 {
    match k {
        SurrogateKind::F1 => 1,
        SurrogateKind::F2 => 2,
        SurrogateKind::F3 => 3,
    }
}

fn kind_from_code(c: u32) -> Result<SurrogateKind> {
    match c {
        1 => Ok(SurrogateKind::F1),
        2 => Ok(SurrogateKind::F2),
        3 => Ok(SurrogateKind::F3),
        other => Err(Error::Data(format!("unknown surrogate code {other} in checkpoint"))),
    }
}

/// Writes the network and optimizer state. Weights round to f32.
pub fn save<F: Real>(
    path: &Path,
    header: &CheckpointHeader,
    net: &Network<F>,
    adam: &AdamState<F>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w_u32(&mut w, FORMAT_VERSION)?;
    w_str(&mut w, &header.arch)?;
    w_str(&mut w, &header.dataset)?;
    w_u32(&mut w, header.input_shape.0 as u32)?;
    w_u32(&mut w, header.input_shape.1 as u32)?;
    w_u32(&mut w, header.input_shape.2 as u32)?;
    w_u32(&mut w, header.classes as u32)?;
    w_f64(&mut w, header.neuron.tau_m)?;
    w_f64(&mut w, header.neuron.v_th)?;
    w_f64(&mut w, header.neuron.dt)?;
    w_u32(&mut w, header.neuron.s_max)?;
    w_u32(&mut w, kind_code(header.surrogate.kind))?;
    w_f64(&mut w, header.surrogate.alpha_h)?;
    w_f64(&mut w, header.surrogate.alpha_w)?;
    w_u32(&mut w, header.time_steps as u32)?;
    w_u32(&mut w, header.norm.mean.len() as u32)?;
    for &m in &header.norm.mean {
        w_f64(&mut w, m)?;
    }
    for &s in &header.norm.std {
        w_f64(&mut w, s)?;
    }
    w_u64(&mut w, adam.step_count)?;

    let params: Vec<&ArrayD<F>> = net.weights.iter().flatten().collect();
    w_u32(&mut w, params.len() as u32)?;
    for (i, weights) in params.iter().enumerate() {
        w_f32_tensor(&mut w, weights)?;
        w_f32_tensor(&mut w, &adam.m[i])?;
        w_f32_tensor(&mut w, &adam.v[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads just the header (the `inspect` view).
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        Error::Data(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "bad checkpoint magic {:02x?}, expected {MAGIC:02x?}",
            magic
        )));
    }
    let version = r_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let arch = r_str(&mut r)?;
    let dataset = r_str(&mut r)?;
    let c = r_u32(&mut r)? as usize;
    let h = r_u32(&mut r)? as usize;
    let wdim = r_u32(&mut r)? as usize;
    let classes = r_u32(&mut r)? as usize;
    let tau_m = r_f64(&mut r)?;
    let v_th = r_f64(&mut r)?;
    let dt = r_f64(&mut r)?;
    let s_max = r_u32(&mut r)?;
    let kind = kind_from_code(r_u32(&mut r)?)?;
    let alpha_h = r_f64(&mut r)?;
    let alpha_w = r_f64(&mut r)?;
    let time_steps = r_u32(&mut r)? as usize;
    let channels = r_u32(&mut r)? as usize;
    if channels > 16 {
        return Err(Error::Data(format!("{channels} normalization channels implausible")));
    }
    let mut mean = Vec::with_capacity(channels);
    for _ in 0..channels {
        mean.push(r_f64(&mut r)?);
    }
    let mut std = Vec::with_capacity(channels);
    for _ in 0..channels {
        std.push(r_f64(&mut r)?);
    }
    let adam_step = r_u64(&mut r)?;
    let neuron = NeuronConfig::new(tau_m, v_th, s_max, dt)
        .map_err(|e| Error::Data(format!("checkpoint neuron config invalid: {e}")))?;
    let surrogate = SurrogateSpec::new(kind, alpha_h, alpha_w, s_max, v_th)
        .map_err(|e| Error::Data(format!("checkpoint surrogate spec invalid: {e}")))?;
    Ok(CheckpointHeader {
        version,
        arch,
        dataset,
        input_shape: (c, h, wdim),
        classes,
        neuron,
        surrogate,
        time_steps,
        norm: Normalization { mean, std },
        adam_step,
    })
}

/// Loads header, network, and optimizer state, revalidating everything
/// (non-finite weights are rejected).
pub fn load<F: Real>(path: &Path) -> Result<(CheckpointHeader, Network<F>, AdamState<F>)> {
    let header = read_header(path)?;
    let mut r = BufReader::new(File::open(path)?);
    // Skip back over the header by re-reading it.
    {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        r_u32(&mut r)?;
        r_str(&mut r)?;
        r_str(&mut r)?;
        for _ in 0..4 {
            r_u32(&mut r)?;
        }
        for _ in 0..3 {
            r_f64(&mut r)?;
        }
        r_u32(&mut r)?;
        r_u32(&mut r)?;
        r_f64(&mut r)?;
        r_f64(&mut r)?;
        r_u32(&mut r)?;
        let channels = r_u32(&mut r)? as usize;
        for _ in 0..2 * channels {
            r_f64(&mut r)?;
        }
        r_u64(&mut r)?;
    }

    let specs = parse_arch(
        &header.arch,
        Shape::Chw(header.input_shape.0, header.input_shape.1, header.input_shape.2),
        header.classes,
    )
    .map_err(|e| Error::Data(format!("checkpoint arch invalid: {e}")))?;
    let param_shapes: Vec<Vec<usize>> = specs
        .iter()
        .filter(|s| s.is_spiking())
        .map(|s| match *s {
            crate::arch::LayerSpec::Dense { fan_in, fan_out } => vec![fan_out, fan_in],
            crate::arch::LayerSpec::Conv2d { in_shape: (ci, ..), out_channels, kernel, .. } => {
                vec![out_channels, ci, kernel, kernel]
            }
            _ => unreachable!(),
        })
        .collect();

    let n_params = r_u32(&mut r)? as usize;
    if n_params != param_shapes.len() {
        return Err(Error::Data(format!(
            "checkpoint has {n_params} parametric layers, arch implies {}",
            param_shapes.len()
        )));
    }
    let mut weights_iter = Vec::with_capacity(n_params);
    let mut m = Vec::with_capacity(n_params);
    let mut v = Vec::with_capacity(n_params);
    for shape in &param_shapes {
        let expect: usize = shape.iter().product();
        for (slot, dst) in [("weights", &mut weights_iter), ("adam m", &mut m), ("adam v", &mut v)]
        {
            let vals = r_f32_vec(&mut r)?;
            if vals.len() != expect {
                return Err(Error::Data(format!(
                    "checkpoint {slot} tensor has {} values, expected {expect}",
                    vals.len()
                )));
            }
            let arr = ArrayD::from_shape_vec(
                shape.clone(),
                vals.into_iter().map(|x| F::from_f64(x as f64)).collect(),
            )
            .expect("shape product checked");
            dst.push(arr);
        }
    }

    let mut weights = Vec::new();
    let mut it = weights_iter.into_iter();
    for spec in &specs {
        weights.push(if spec.is_spiking() { Some(it.next().unwrap()) } else { None });
    }
    let net = Network::from_parts(specs, weights, header.neuron, header.surrogate)?;
    let mut adam = AdamState::for_network(&net);
    adam.m = m;
    adam.v = v;
    adam.step_count = header.adam_step;
    Ok((header, net, adam))
}
