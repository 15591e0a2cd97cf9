//! Serialization of loops, potentials and dressing scenarios, and fixed-precision
//! float formatting for reports.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::M2;
use crate::loopcore::MatrixLoop;
use crate::scalar::{to_f64, Real};

/// Shortest form is not stable across printers; reports use 17 significant digits.
pub fn fmt17<T: Real>(x: T) -> String {
    format!("{:.16e}", to_f64(x))
}

/// `serde_json` formatter writing every float with 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Pretty-enough JSON with fixed float formatting.
pub fn to_json_string<S: Serialize>(value: &S) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
    value.serialize(&mut ser).map_err(|e| Error::Domain(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Domain(e.to_string()))
}

pub fn write_json<S: Serialize, W: Write>(mut out: W, value: &S) -> Result<()> {
    let s = to_json_string(value)?;
    out.write_all(s.as_bytes()).map_err(|e| Error::Domain(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::Domain(e.to_string()))
}

pub type Pair = [f64; 2];

fn pair<T: Real>(z: Complex<T>) -> Pair {
    [to_f64(z.re), to_f64(z.im)]
}

fn unpair<T: Real>(p: Pair) -> Complex<T> {
    Complex::new(T::from_f64(p[0]).unwrap(), T::from_f64(p[1]).unwrap())
}

pub fn matrix_json<T: Real>(m: &M2<T>) -> [Pair; 4] {
    [pair(m.a), pair(m.b), pair(m.c), pair(m.d)]
}

pub fn matrix_from_json<T: Real>(e: &[Pair; 4]) -> M2<T> {
    M2::new(unpair(e[0]), unpair(e[1]), unpair(e[2]), unpair(e[3]))
}

/// `{radius, coeffs: [[k, [[re, im] × 4]], …]}`, entries row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopJson {
    pub radius: f64,
    pub coeffs: Vec<(i64, [Pair; 4])>,
}

impl LoopJson {
    pub fn from_loop<T: Real>(l: &MatrixLoop<T>) -> Self {
        LoopJson { radius: to_f64(l.radius()), coeffs: l.terms().map(|(k, m)| (k, matrix_json(&m))).collect() }
    }

    pub fn to_loop<T: Real>(&self) -> MatrixLoop<T> {
        let terms: Vec<(i64, M2<T>)> = self.coeffs.iter().map(|(k, e)| (*k, matrix_from_json(e))).collect();
        MatrixLoop::from_terms(&terms, T::from_f64(self.radius).unwrap())
    }
}

/// `{a, b, c, terms: [[k, loop], …], z_radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialJson {
    pub a: Pair,
    pub b: Pair,
    pub c: f64,
    pub terms: Vec<(usize, LoopJson)>,
    pub z_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueJson {
    pub a: Pair,
    pub b: Pair,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorJson {
    pub lambda0: Pair,
    pub line: [Pair; 2],
    /// Unitary prefactor; identity when absent.
    #[serde(default)]
    pub w: Option<[Pair; 4]>,
}

/// Dressing scenario `{residue, factors: [{lambda0, line, w}, …]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioJson {
    pub residue: ResidueJson,
    pub factors: Vec<FactorJson>,
}

pub fn complex_from_pair<T: Real>(p: Pair) -> Complex<T> {
    unpair(p)
}

pub fn pair_from_complex<T: Real>(z: Complex<T>) -> Pair {
    pair(z)
}
