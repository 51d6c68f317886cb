//! Binary checkpoints for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SNCP" | version u32 | kind u8 | variant u8
//! | in_channels, img, classes, c, c1, c2, h, w, time_steps (9 x u32)
//! | n_tensors u32
//! | n_tensors x ( name_len u32 | name utf8 | rank u32 | dims (rank x u32)
//!                | values (f32 LE, row-major) )
//! ```
//!
//! Tensors are stored by parameter name and matched by name on load, so the
//! order in the file does not matter. Values are stored as f32; models
//! compute in f64, so a save/load roundtrip quantizes parameters once.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::CnnScModel;
use crate::error::{Error, Result};
use crate::nn::backbone::Backbone;
use crate::nn::model::{Geometry, NeuronVariant, SnnScModel};
use crate::nn::param::Parameterized;

const MAGIC: [u8; 4] = *b"SNCP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Backbone = 0,
    SnnSc = 1,
    CnnSc = 2,
}

impl CheckpointKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Backbone),
            1 => Ok(Self::SnnSc),
            2 => Ok(Self::CnnSc),
            other => Err(Error::Format(format!("unknown checkpoint kind {other}"))),
        }
    }
}

fn variant_to_u8(v: NeuronVariant) -> u8 {
    match v {
        NeuronVariant::Ihf => 0,
        NeuronVariant::IfOnly => 1,
        NeuronVariant::MembraneOnly => 2,
    }
}

fn variant_from_u8(v: u8) -> Result<NeuronVariant> {
    match v {
        0 => Ok(NeuronVariant::Ihf),
        1 => Ok(NeuronVariant::IfOnly),
        2 => Ok(NeuronVariant::MembraneOnly),
        other => Err(Error::Format(format!("unknown neuron variant byte {other}"))),
    }
}

#[derive(Debug, Clone, Copy)]
struct Header {
    kind: CheckpointKind,
    variant: u8,
    fields: [u32; 9],
    n_tensors: u32,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_header(w: &mut impl Write, h: &Header) -> Result<()> {
    w.write_all(&MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[h.kind as u8, h.variant])?;
    for f in h.fields {
        write_u32(w, f)?;
    }
    write_u32(w, h.n_tensors)
}

fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut kv = [0u8; 2];
    r.read_exact(&mut kv)?;
    let kind = CheckpointKind::from_u8(kv[0])?;
    let mut fields = [0u32; 9];
    for f in fields.iter_mut() {
        *f = read_u32(r)?;
    }
    let n_tensors = read_u32(r)?;
    Ok(Header { kind, variant: kv[1], fields, n_tensors })
}

fn write_tensors(w: &mut impl Write, model: &mut impl Parameterized) -> Result<u32> {
    let mut params = Vec::new();
    model.visit_params("", &mut params);
    let n = params.len() as u32;
    for p in params {
        let name = p.name.as_bytes();
        write_u32(w, name.len() as u32)?;
        w.write_all(name)?;
        write_u32(w, p.value.ndim() as u32)?;
        for &d in p.value.shape() {
            write_u32(w, d as u32)?;
        }
        for &v in p.value.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(n)
}

fn read_tensors(r: &mut impl Read, n: u32) -> Result<Vec<(String, ArrayD<f64>)>> {
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format("parameter name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r)? as usize);
        }
        let len: usize = dims.iter().product();
        if len > (1 << 28) {
            return Err(Error::Format("tensor too large".into()));
        }
        let mut vals = Vec::with_capacity(len);
        let mut b = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            vals.push(f32::from_le_bytes(b) as f64);
        }
        let t = ArrayD::from_shape_vec(IxDyn(&dims), vals)
            .map_err(|e| Error::Format(format!("bad tensor shape: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Copy file tensors into a freshly constructed model, matching by name.
/// Every parameter must be present with the right shape, and the file must
/// not carry extra tensors.
fn restore(model: &mut impl Parameterized, tensors: Vec<(String, ArrayD<f64>)>) -> Result<()> {
    let mut params = Vec::new();
    model.visit_params("", &mut params);
    if params.len() != tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model has {} parameters",
            tensors.len(),
            params.len()
        )));
    }
    let mut map: std::collections::HashMap<String, ArrayD<f64>> = tensors.into_iter().collect();
    for p in params.iter_mut() {
        let t = map
            .remove(&p.name)
            .ok_or_else(|| Error::Format(format!("missing tensor '{}'", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                expected: p.value.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        p.value.assign(&t);
    }
    Ok(())
}

fn open_for(path: &Path, expect: CheckpointKind) -> Result<(Header, BufReader<File>)> {
    let file = File::open(path)
        .map_err(|_| Error::MissingCheckpoint(path.display().to_string()))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r)?;
    if header.kind != expect {
        return Err(Error::Format(format!(
            "checkpoint at {} holds a {:?} model, expected {expect:?}",
            path.display(),
            header.kind
        )));
    }
    Ok((header, r))
}

pub fn save_backbone(path: &Path, model: &mut Backbone) -> Result<()> {
    let mut buf = Vec::new();
    let n = write_tensors(&mut buf, model)?;
    let header = Header {
        kind: CheckpointKind::Backbone,
        variant: 0,
        fields: [
            model.in_channels as u32,
            model.img as u32,
            model.classes as u32,
            model.feat_c as u32,
            0,
            0,
            0,
            0,
            0,
        ],
        n_tensors: n,
    };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &header)?;
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn load_backbone(path: &Path) -> Result<Backbone> {
    let (header, mut r) = open_for(path, CheckpointKind::Backbone)?;
    let [in_ch, img, classes, feat_c, ..] = header.fields;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Backbone::new(
        &mut rng,
        in_ch as usize,
        img as usize,
        classes as usize,
        feat_c as usize,
    )?;
    restore(&mut model, read_tensors(&mut r, header.n_tensors)?)?;
    Ok(model)
}

fn geometry_fields(g: &Geometry) -> [u32; 9] {
    [
        0,
        0,
        0,
        g.c as u32,
        g.c1 as u32,
        g.c2 as u32,
        g.h as u32,
        g.w as u32,
        g.time_steps as u32,
    ]
}

fn fields_geometry(f: &[u32; 9]) -> Geometry {
    Geometry {
        c: f[3] as usize,
        c1: f[4] as usize,
        c2: f[5] as usize,
        h: f[6] as usize,
        w: f[7] as usize,
        time_steps: f[8] as usize,
    }
}

pub fn save_snn(path: &Path, model: &mut SnnScModel) -> Result<()> {
    let mut buf = Vec::new();
    let variant = variant_to_u8(model.variant);
    let fields = geometry_fields(&model.geom);
    let n = write_tensors(&mut buf, model)?;
    let header = Header { kind: CheckpointKind::SnnSc, variant, fields, n_tensors: n };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &header)?;
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn load_snn(path: &Path) -> Result<SnnScModel> {
    let (header, mut r) = open_for(path, CheckpointKind::SnnSc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = SnnScModel::new(
        &mut rng,
        fields_geometry(&header.fields),
        variant_from_u8(header.variant)?,
    )?;
    restore(&mut model, read_tensors(&mut r, header.n_tensors)?)?;
    Ok(model)
}

pub fn save_cnn(path: &Path, model: &mut CnnScModel) -> Result<()> {
    let mut buf = Vec::new();
    let fields = geometry_fields(&model.geom);
    let n = write_tensors(&mut buf, model)?;
    let header = Header { kind: CheckpointKind::CnnSc, variant: 0, fields, n_tensors: n };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &header)?;
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn load_cnn(path: &Path) -> Result<CnnScModel> {
    let (header, mut r) = open_for(path, CheckpointKind::CnnSc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = CnnScModel::new(&mut rng, fields_geometry(&header.fields))?;
    restore(&mut model, read_tensors(&mut r, header.n_tensors)?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Parameterized;

    fn params_snapshot(model: &mut impl Parameterized) -> Vec<(String, ArrayD<f64>)> {
        let mut ps = Vec::new();
        model.visit_params("", &mut ps);
        ps.into_iter().map(|p| (p.name, p.value.clone())).collect()
    }

    /// f32 storage means a loaded model equals the f32-rounded original.
    fn assert_f32_roundtrip(a: &[(String, ArrayD<f64>)], b: &[(String, ArrayD<f64>)]) {
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(b) {
            assert_eq!(na, nb);
            for (&va, &vb) in ta.iter().zip(tb.iter()) {
                assert_eq!(va as f32 as f64, vb, "{na}");
            }
        }
    }

    #[test]
    fn snn_roundtrip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let geom = Geometry { c: 16, c1: 4, c2: 2, h: 2, w: 2, time_steps: 3 };
        let mut model = SnnScModel::new(&mut rng, geom, NeuronVariant::Ihf).unwrap();
        save_snn(&path, &mut model).unwrap();
        let mut back = load_snn(&path).unwrap();
        assert_eq!(back.geom, geom);
        assert_eq!(back.variant, NeuronVariant::Ihf);
        assert_f32_roundtrip(&params_snapshot(&mut model), &params_snapshot(&mut back));
        // saving the loaded model reproduces the file byte for byte
        let path2 = dir.path().join("m2.ckpt");
        save_snn(&path2, &mut back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn backbone_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Backbone::new(&mut rng, 3, 16, 10, 64).unwrap();
        save_backbone(&path, &mut model).unwrap();
        let mut back = load_backbone(&path).unwrap();
        assert_eq!((back.in_channels, back.img, back.classes), (3, 16, 10));
        assert_f32_roundtrip(&params_snapshot(&mut model), &params_snapshot(&mut back));
    }

    #[test]
    fn cnn_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = Geometry { c: 16, c1: 4, c2: 2, h: 2, w: 2, time_steps: 4 };
        let mut model = CnnScModel::new(&mut rng, geom).unwrap();
        save_cnn(&path, &mut model).unwrap();
        let mut back = load_cnn(&path).unwrap();
        assert_eq!(back.geom, geom);
        assert_f32_roundtrip(&params_snapshot(&mut model), &params_snapshot(&mut back));
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Backbone::new(&mut rng, 3, 16, 10, 64).unwrap();
        save_backbone(&path, &mut model).unwrap();
        assert!(matches!(load_snn(&path), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        match load_snn(Path::new("/nonexistent/model.ckpt")) {
            Err(Error::MissingCheckpoint(p)) => assert!(p.contains("model.ckpt")),
            other => panic!("expected MissingCheckpoint, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = Geometry { c: 16, c1: 4, c2: 2, h: 2, w: 2, time_steps: 2 };
        let mut model = SnnScModel::new(&mut rng, geom, NeuronVariant::IfOnly).unwrap();
        save_snn(&path, &mut model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_snn(&path).is_err());
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load_backbone(&path), Err(Error::Format(_))));
    }
}
