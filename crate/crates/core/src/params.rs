//! Flat vectors and layered parameter containers.
//!
//! Reductions accumulate strictly left to right so that results are
//! reproducible bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Inner product accumulated in index order.
pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(dot_unchecked(x, y))
}

pub(crate) fn dot_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub fn norm_sq(x: &[f64]) -> f64 {
    dot_unchecked(x, x)
}

/// One named layer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub data: Vec<f64>,
}

impl Layer {
    pub fn new(name: impl Into<String>, data: Vec<f64>) -> Self {
        Layer {
            name: name.into(),
            data,
        }
    }
}

/// Ordered list of named flat vectors, one per model layer.
///
/// Two containers are compatible for arithmetic when their layer names,
/// order and per-layer lengths agree exactly.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LayeredParams {
    layers: Vec<Layer>,
}

impl LayeredParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layer.name.is_empty() || layer.name.chars().any(char::is_whitespace) {
                return Err(Error::invalid(
                    "layer name",
                    format!("`{}` must be nonempty without whitespace", layer.name),
                ));
            }
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::invalid(
                    "layer name",
                    format!("duplicate layer `{}`", layer.name),
                ));
            }
        }
        Ok(LayeredParams { layers })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|(n, d)| Layer::new(n, d)).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layers.iter().find(|l| l.name == name).map(|l| l.data.as_slice())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        LayeredParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::new(l.name.clone(), vec![0.0; l.data.len()]))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.data.iter().all(|v| v.is_finite()))
    }

    /// Errors with the first layer whose name, position or length differs.
    pub fn check_compatible(&self, other: &LayeredParams) -> Result<()> {
        for (i, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.name != b.name {
                return Err(Error::ShapeMismatch {
                    layer: a.name.clone(),
                    detail: format!("position {i} holds `{}` in the other operand", b.name),
                });
            }
            if a.data.len() != b.data.len() {
                return Err(Error::ShapeMismatch {
                    layer: a.name.clone(),
                    detail: format!("length {} vs {}", a.data.len(), b.data.len()),
                });
            }
        }
        if self.layers.len() != other.layers.len() {
            let n = self.layers.len().min(other.layers.len());
            let name = self
                .layers
                .get(n)
                .or_else(|| other.layers.get(n))
                .map(|l| l.name.clone())
                .unwrap_or_default();
            return Err(Error::ShapeMismatch {
                layer: name,
                detail: format!("layer count {} vs {}", self.layers.len(), other.layers.len()),
            });
        }
        Ok(())
    }

    /// Inner product over all layers in order.
    pub fn dot(&self, other: &LayeredParams) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.data.iter().zip(&b.data) {
                acc += x * y;
            }
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            for x in &l.data {
                acc += x * x;
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, a: f64) -> LayeredParams {
        self.map_values(|v| a * v)
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> LayeredParams {
        LayeredParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::new(l.name.clone(), l.data.iter().map(|&v| f(v)).collect()))
                .collect(),
        }
    }

    /// `self + other`, layer-wise.
    pub fn add(&self, other: &LayeredParams) -> Result<LayeredParams> {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self - other`, layer-wise.
    pub fn sub(&self, other: &LayeredParams) -> Result<LayeredParams> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &LayeredParams, f: impl Fn(f64, f64) -> f64) -> Result<LayeredParams> {
        self.check_compatible(other)?;
        Ok(LayeredParams {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| {
                    Layer::new(
                        a.name.clone(),
                        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                    )
                })
                .collect(),
        })
    }

    /// Writes the text serialization described in the book's file format chapter.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::invalid("params", "non-finite value cannot be serialized"));
        }
        let mut buf = String::new();
        writeln!(buf, "{MAGIC}").unwrap();
        writeln!(buf, "layers {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(buf, "{} {}", l.name, l.data.len()).unwrap();
        }
        for l in &self.layers {
            for v in &l.data {
                // `{:?}` prints the shortest string that parses back to the same bits.
                writeln!(buf, "{v:?}").unwrap();
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(String::from_utf8(out).expect("ascii output"))
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<LayeredParams> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(line) => Ok(line?),
                None => Err(Error::Parse(format!("unexpected end of input, expected {what}"))),
            }
        };
        let magic = next("header")?;
        if magic.trim_end() != MAGIC {
            return Err(Error::Parse(format!("bad header `{magic}`")));
        }
        let count_line = next("layer count")?;
        let count: usize = count_line
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad layer count line `{count_line}`")))?;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next("layer descriptor")?;
            let mut parts = line.split_whitespace();
            let (Some(name), Some(len), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("bad layer descriptor `{line}`")));
            };
            let len: usize = len
                .parse()
                .map_err(|_| Error::Parse(format!("bad layer length in `{line}`")))?;
            shapes.push((name.to_string(), len));
        }
        let mut layers = Vec::with_capacity(count);
        for (name, len) in shapes {
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let line = next("value")?;
                let v: f64 = line
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad value `{line}` in layer `{name}`")))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("non-finite value in layer `{name}`")));
                }
                data.push(v);
            }
            layers.push(Layer::new(name, data));
        }
        if let Some(extra) = lines.next() {
            let extra = extra?;
            if !extra.trim().is_empty() {
                return Err(Error::Parse(format!("trailing content `{extra}`")));
            }
        }
        LayeredParams::new(layers)
    }

    pub fn from_text(text: &str) -> Result<LayeredParams> {
        Self::read_from(text.as_bytes())
    }
}

const MAGIC: &str = "fedqp-params v1";

/// `a * x + y`, layer-wise. Neither input is modified.
pub fn axpy(a: f64, x: &LayeredParams, y: &LayeredParams) -> Result<LayeredParams> {
    x.zip_with(y, |xv, yv| a * xv + yv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(pairs: &[(&str, &[f64])]) -> LayeredParams {
        LayeredParams::from_pairs(pairs.iter().map(|(n, d)| (*n, d.to_vec()))).unwrap()
    }

    fn axpy_reference(a: f64, x: &LayeredParams, y: &LayeredParams) -> LayeredParams {
        let mut out = y.clone();
        for (li, layer) in out.layers_mut().iter_mut().enumerate() {
            for i in 0..layer.data.len() {
                layer.data[i] = a * x.layers()[li].data[i] + y.layers()[li].data[i];
            }
        }
        out
    }

    #[test]
    fn axpy_examples() {
        let x = lp(&[("L1", &[1.0, 2.0])]);
        let y = lp(&[("L1", &[3.0, 4.0])]);
        assert_eq!(axpy(2.0, &x, &y).unwrap(), lp(&[("L1", &[5.0, 8.0])]));
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        let neg = x.scale(-1.0);
        assert_eq!(axpy(1.0, &x, &neg).unwrap(), x.zeros_like());
    }

    #[test]
    fn axpy_names_first_offending_layer() {
        let x = lp(&[("a", &[1.0]), ("b", &[1.0, 2.0]), ("c", &[0.0])]);
        let y = lp(&[("a", &[1.0]), ("b", &[1.0]), ("c", &[1.0, 2.0])]);
        match axpy(1.0, &x, &y) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, "b"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let z = lp(&[("a", &[1.0]), ("x", &[1.0, 2.0])]);
        match axpy(1.0, &x, &z) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, "b"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let short = lp(&[("a", &[1.0])]);
        match axpy(1.0, &x, &short) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, "b"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert_eq!(dot(&[], &[]).unwrap(), 0.0);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(norm_sq(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(norm_sq(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn duplicate_and_bad_names_rejected() {
        assert!(LayeredParams::from_pairs([("a", vec![1.0]), ("a", vec![2.0])]).is_err());
        assert!(LayeredParams::from_pairs([("has space", vec![1.0])]).is_err());
        assert!(LayeredParams::from_pairs([("", vec![1.0])]).is_err());
    }

    #[test]
    fn serialization_text_layout() {
        let p = lp(&[("W", &[0.1, -2.5]), ("b", &[])]);
        let text = p.to_text().unwrap();
        assert_eq!(text, "fedqp-params v1\nlayers 2\nW 2\nb 0\n0.1\n-2.5\n");
        assert_eq!(LayeredParams::from_text(&text).unwrap(), p);
    }

    #[test]
    fn serialization_rejects_garbage() {
        assert!(LayeredParams::from_text("nope\n").is_err());
        assert!(LayeredParams::from_text("fedqp-params v1\nlayers 1\nW 2\n1.0\n").is_err());
        assert!(LayeredParams::from_text("fedqp-params v1\nlayers 1\nW 1\nNaN\n").is_err());
        assert!(LayeredParams::from_text("fedqp-params v1\nlayers 1\nW 1\n1\n2\n").is_err());
        let bad = lp(&[("W", &[f64::INFINITY])]);
        assert!(bad.to_text().is_err());
    }

    fn arb_pair() -> impl Strategy<Value = (LayeredParams, LayeredParams, f64)> {
        prop::collection::vec(0usize..6, 1..4).prop_flat_map(|lens| {
            let layer = |lens: Vec<usize>| {
                lens.into_iter()
                    .map(|n| prop::collection::vec(-1e3f64..1e3, n))
                    .collect::<Vec<_>>()
            };
            (layer(lens.clone()), layer(lens), -10.0f64..10.0).prop_map(|(xs, ys, a)| {
                let mk = |vs: Vec<Vec<f64>>| {
                    LayeredParams::from_pairs(vs.into_iter().enumerate().map(|(i, v)| (format!("l{i}"), v))).unwrap()
                };
                (mk(xs), mk(ys), a)
            })
        })
    }

    proptest! {
        #[test]
        fn axpy_matches_scalar_loop_bitwise((x, y, a) in arb_pair()) {
            let got = axpy(a, &x, &y).unwrap();
            let want = axpy_reference(a, &x, &y);
            for (g, w) in got.layers().iter().zip(want.layers()) {
                let gb: Vec<u64> = g.data.iter().map(|v| v.to_bits()).collect();
                let wb: Vec<u64> = w.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(gb, wb);
            }
        }

        #[test]
        fn dot_symmetric_and_norm_nonnegative(
            pair in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..32)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
            let xy = dot(&x, &y).unwrap();
            let yx = dot(&y, &x).unwrap();
            prop_assert!((xy - yx).abs() <= 1e-12 * xy.abs().max(1.0));
            prop_assert!(norm_sq(&x) >= 0.0);
            prop_assert_eq!(norm_sq(&x), dot(&x, &x).unwrap());
        }

        #[test]
        fn serialization_round_trips_bitwise((x, _y, _a) in arb_pair()) {
            let back = LayeredParams::from_text(&x.to_text().unwrap()).unwrap();
            prop_assert_eq!(back.layers().len(), x.layers().len());
            for (b, o) in back.layers().iter().zip(x.layers()) {
                prop_assert_eq!(&b.name, &o.name);
                let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
                let ob: Vec<u64> = o.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bb, ob);
            }
        }
    }
}
