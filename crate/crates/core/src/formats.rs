//! Little-endian binary dumps of abstractions, value functions and
//! controllers.
//!
//! | magic    | body                                                            |
//! |----------|-----------------------------------------------------------------|
//! | `SOCAB1` | dims, cells per dim, input count, then per pair: count, ids, cost |
//! | `SOCVF1` | dims, cells per dim, then one `f64` per cell                     |
//! | `SOCCT1` | dims, cells per dim, then per cell a `u32` input and a `u8` stop |
//!
//! Counts and dimensions are `u32`, cell ids `u64`. An undefined controller
//! entry has input `0xFFFFFFFF`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::abstraction::AbstractSystem;
use crate::error::{Error, Result};
use crate::grid::{Grid, InputSet};
use crate::reach::{Action, MemorylessController, ValueFunction};

pub const ABSTRACTION_MAGIC: &[u8; 6] = b"SOCAB1";
pub const VALUE_MAGIC: &[u8; 6] = b"SOCVF1";
pub const CONTROLLER_MAGIC: &[u8; 6] = b"SOCCT1";
const UNDEFINED: u32 = u32::MAX;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get<const N: usize, R: Read>(r: &mut R, what: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(what, "truncated file"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    Ok(u32::from_le_bytes(get(r, what)?))
}

fn get_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    Ok(u64::from_le_bytes(get(r, what)?))
}

fn get_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64> {
    Ok(f64::from_le_bytes(get(r, what)?))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 6], grid: &Grid) -> Result<()> {
    w.write_all(magic)?;
    put_u32(w, grid.dim() as u32)?;
    for &n in grid.cells_per_dim() {
        put_u32(w, n as u32)?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 6], grid: &Grid, what: &'static str) -> Result<()> {
    let found: [u8; 6] = get(r, what)?;
    if &found != magic {
        return Err(Error::format(what, format!("bad magic {:?}", String::from_utf8_lossy(&found))));
    }
    let dims = get_u32(r, what)? as usize;
    if dims != grid.dim() {
        return Err(Error::format(what, format!("{dims} dimensions, grid has {}", grid.dim())));
    }
    for (d, &n) in grid.cells_per_dim().iter().enumerate() {
        let got = get_u32(r, what)? as usize;
        if got != n {
            return Err(Error::format(what, format!("dimension {d} has {got} cells, grid has {n}")));
        }
    }
    Ok(())
}

fn expect_end<R: Read>(r: &mut R, what: &'static str) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::format(what, "trailing bytes")),
    }
}

pub fn write_abstraction<W: Write>(w: &mut W, sys: &AbstractSystem) -> Result<()> {
    write_header(w, ABSTRACTION_MAGIC, sys.grid())?;
    put_u32(w, sys.num_inputs() as u32)?;
    for p in 0..sys.num_pairs() {
        let succ = sys.pair_successors(p);
        put_u32(w, succ.len() as u32)?;
        for &s in succ {
            put_u64(w, s as u64)?;
        }
        put_f64(w, sys.pair_cost(p))?;
    }
    Ok(())
}

/// Reads an abstraction over `grid` and `inputs`, which the dump does not
/// carry beyond their sizes.
pub fn read_abstraction<R: Read>(r: &mut R, grid: &Grid, inputs: &InputSet) -> Result<AbstractSystem> {
    const WHAT: &str = "abstraction";
    read_header(r, ABSTRACTION_MAGIC, grid, WHAT)?;
    let m = get_u32(r, WHAT)? as usize;
    if m != inputs.len() {
        return Err(Error::format(WHAT, format!("{m} inputs, expected {}", inputs.len())));
    }
    let pairs = grid.num_cells() * m;
    let mut lists = Vec::with_capacity(pairs);
    let mut costs = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let k = get_u32(r, WHAT)? as usize;
        if k == 0 || k > grid.num_cells() {
            return Err(Error::format(WHAT, format!("invalid successor count {k}")));
        }
        let mut list = Vec::with_capacity(k);
        for _ in 0..k {
            let s = get_u64(r, WHAT)?;
            if s >= grid.num_cells() as u64 {
                return Err(Error::format(WHAT, format!("successor {s} out of range")));
            }
            list.push(s as u32);
        }
        lists.push(list);
        costs.push(get_f64(r, WHAT)?);
    }
    expect_end(r, WHAT)?;
    AbstractSystem::from_parts(grid.clone(), inputs.clone(), lists, costs)
        .map_err(|e| Error::format(WHAT, e.to_string()))
}

pub fn write_value_function<W: Write>(w: &mut W, grid: &Grid, v: &ValueFunction) -> Result<()> {
    if v.len() != grid.num_cells() {
        return Err(Error::format("value function", "length differs from the grid"));
    }
    write_header(w, VALUE_MAGIC, grid)?;
    for &x in v.values() {
        put_f64(w, x)?;
    }
    Ok(())
}

pub fn read_value_function<R: Read>(r: &mut R, grid: &Grid) -> Result<ValueFunction> {
    const WHAT: &str = "value function";
    read_header(r, VALUE_MAGIC, grid, WHAT)?;
    let values = (0..grid.num_cells()).map(|_| get_f64(r, WHAT)).collect::<Result<Vec<_>>>()?;
    expect_end(r, WHAT)?;
    ValueFunction::new(values).map_err(|e| Error::format(WHAT, e.to_string()))
}

pub fn write_controller<W: Write>(w: &mut W, grid: &Grid, mu: &MemorylessController) -> Result<()> {
    if mu.len() != grid.num_cells() {
        return Err(Error::format("controller", "length differs from the grid"));
    }
    write_header(w, CONTROLLER_MAGIC, grid)?;
    for a in mu.actions() {
        match a {
            Some(a) => {
                put_u32(w, a.input)?;
                w.write_all(&[u8::from(a.stop)])?;
            }
            None => {
                put_u32(w, UNDEFINED)?;
                w.write_all(&[0])?;
            }
        }
    }
    Ok(())
}

pub fn read_controller<R: Read>(r: &mut R, grid: &Grid) -> Result<MemorylessController> {
    const WHAT: &str = "controller";
    read_header(r, CONTROLLER_MAGIC, grid, WHAT)?;
    let mut actions = Vec::with_capacity(grid.num_cells());
    for _ in 0..grid.num_cells() {
        let input = get_u32(r, WHAT)?;
        let [stop] = get::<1, _>(r, WHAT)?;
        if stop > 1 {
            return Err(Error::format(WHAT, format!("invalid stop flag {stop}")));
        }
        actions.push((input != UNDEFINED).then_some(Action { input, stop: stop == 1 }));
    }
    expect_end(r, WHAT)?;
    Ok(MemorylessController::new(actions))
}

/// Writes `f` into a buffered file at `path`.
pub fn save<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a buffered file at `path` with `f`.
pub fn load<T, F>(path: &Path, f: F) -> Result<T>
where
    F: FnOnce(&mut BufReader<File>) -> Result<T>,
{
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format("file", format!("{} does not exist", path.display())),
        _ => Error::Io(e),
    })?;
    f(&mut BufReader::new(file))
}

/// Serde adapter for extended reals: `∞` is written as the string `"inf"`.
pub mod ext_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Text("inf".into())
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else {
            Repr::Num(v)
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) if s == "nan" => Ok(f64::NAN),
            Repr::Text(s) => Err(E::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|&x| to_repr(x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
