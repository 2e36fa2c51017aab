//! Self-describing model document.
//!
//! ```json
//! { "format_version": 1, "encoding": "binary",
//!   "layer_sizes": [2, 3], "mask": [[1, 0]],
//!   "weights": { "1,0": [...row-major...] },
//!   "biases": [[...], [...]], "offsets": null }
//! ```
//!
//! Reals are either JSON numbers (shortest round-trip decimal) or strings of 16
//! hex digits holding the IEEE-754 bit pattern. Readers accept both forms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Model, NetworkSpec, Parameters};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RealEncoding {
    #[default]
    Decimal,
    Binary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Real {
    Decimal(f64),
    Bits(String),
}

impl Real {
    fn encode(x: f64, encoding: RealEncoding) -> Real {
        match encoding {
            RealEncoding::Decimal => Real::Decimal(x),
            RealEncoding::Binary => Real::Bits(format!("{:016x}", x.to_bits())),
        }
    }

    fn decode(&self) -> Result<f64> {
        match self {
            Real::Decimal(x) => Ok(*x),
            Real::Bits(s) => {
                let s = s.strip_prefix("0x").unwrap_or(s);
                if s.len() != 16 {
                    return Err(Error::format("model", format!("bit pattern {s:?} is not 16 hex digits")));
                }
                u64::from_str_radix(s, 16)
                    .map(f64::from_bits)
                    .map_err(|e| Error::format("model", format!("bad bit pattern {s:?}: {e}")))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    #[serde(default)]
    encoding: RealEncoding,
    layer_sizes: Vec<usize>,
    mask: Vec<[usize; 2]>,
    weights: BTreeMap<String, Vec<Real>>,
    biases: Vec<Vec<Real>>,
    #[serde(default)]
    offsets: Option<Vec<Vec<Real>>>,
}

fn encode_list<'a>(xs: impl IntoIterator<Item = &'a f64>, encoding: RealEncoding) -> Vec<Real> {
    xs.into_iter().map(|&x| Real::encode(x, encoding)).collect()
}

fn decode_list(xs: &[Real]) -> Result<Vec<f64>> {
    xs.iter().map(Real::decode).collect()
}

pub fn to_json(model: &Model, encoding: RealEncoding) -> Result<String> {
    let spec = model.spec();
    let params = model.params();
    let doc = ModelDocument {
        format_version: FORMAT_VERSION,
        encoding,
        layer_sizes: spec.layer_sizes().to_vec(),
        mask: spec.pairs().map(|(k, l)| [k, l]).collect(),
        weights: params
            .weights
            .iter()
            .map(|(&(k, l), w)| (format!("{k},{l}"), encode_list(w.iter(), encoding)))
            .collect(),
        biases: params.biases.iter().map(|b| encode_list(b.iter(), encoding)).collect(),
        offsets: params
            .offsets
            .as_ref()
            .map(|o| o.iter().map(|m| encode_list(m.iter(), encoding)).collect()),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json(text: &str) -> Result<Model> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "model",
            format!("unsupported format_version {}", doc.format_version),
        ));
    }
    let spec = NetworkSpec::new(doc.layer_sizes.clone(), doc.mask.iter().map(|&[k, l]| (k, l)))?;
    let mut weights = BTreeMap::new();
    for (key, values) in &doc.weights {
        let (k, l) = parse_pair(key)?;
        if !spec.is_connected(k, l) || l >= k {
            return Err(Error::UnmaskedWeight(k, l));
        }
        let shape = (spec.layer_size(k), spec.layer_size(l));
        let w = Array2::from_shape_vec(shape, decode_list(values)?)
            .map_err(|_| Error::Shape(format!("weight block {key} has {} entries", values.len())))?;
        weights.insert((k, l), w);
    }
    let biases = doc
        .biases
        .iter()
        .map(|b| decode_list(b).map(Array1::from))
        .collect::<Result<Vec<_>>>()?;
    let offsets = doc
        .offsets
        .as_ref()
        .map(|o| o.iter().map(|m| decode_list(m).map(Array1::from)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Model::from_parts(spec, Parameters { weights, biases, offsets })
}

fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let bad = || Error::format("model", format!("weight key {key:?} is not \"k,l\""));
    let (k, l) = key.split_once(',').ok_or_else(bad)?;
    Ok((k.trim().parse().map_err(|_| bad())?, l.trim().parse().map_err(|_| bad())?))
}

pub fn save(model: &Model, path: impl AsRef<Path>, encoding: RealEncoding) -> Result<()> {
    fs::write(path, to_json(model, encoding)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterInit;
    use proptest::prelude::*;

    fn bits(model: &Model) -> Vec<u64> {
        let p = model.params();
        p.weights
            .values()
            .flatten()
            .chain(p.biases.iter().flatten())
            .chain(p.offsets.iter().flatten().flatten())
            .map(|x| x.to_bits())
            .collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), sigma in 1e-3f64..1e3, binary in any::<bool>()) {
            let spec = NetworkSpec::new(vec![3, 2, 2], [(1, 0), (2, 0), (2, 1)]).unwrap();
            let mut params = Model::build(spec.clone(), ParameterInit::Gaussian { sigma, seed }).unwrap().into_parts().1;
            params.biases[1] = Array1::from(vec![sigma.ln(), -0.0]);
            params.offsets = Some(vec![Array1::from(vec![0.1, 0.2, 1.0 / 3.0]), Array1::zeros(2), Array1::from(vec![0.5, 1.0])]);
            let model = Model::from_parts(spec, params).unwrap();
            let encoding = if binary { RealEncoding::Binary } else { RealEncoding::Decimal };
            let back = from_json(&to_json(&model, encoding).unwrap()).unwrap();
            prop_assert_eq!(bits(&model), bits(&back));
            prop_assert_eq!(model.spec(), back.spec());
        }
    }

    #[test]
    fn mixed_encodings_are_accepted() {
        let text = r#"{"format_version":1,"layer_sizes":[1,1],"mask":[[1,0]],
            "weights":{"1,0":["3ff0000000000000"]},"biases":[[0.5],["0x0000000000000000"]]}"#;
        let model = from_json(text).unwrap();
        assert_eq!(model.params().weight(1, 0).unwrap()[[0, 0]], 1.0);
        assert_eq!(model.params().biases[0][0], 0.5);
    }

    #[test]
    fn rejects_unmasked_and_bad_versions() {
        let unmasked = r#"{"format_version":1,"layer_sizes":[1,1,1],"mask":[[1,0]],
            "weights":{"1,0":[1.0],"2,0":[1.0]},"biases":[[0],[0],[0]]}"#;
        assert!(matches!(from_json(unmasked), Err(Error::UnmaskedWeight(2, 0))));
        let version = r#"{"format_version":2,"layer_sizes":[1],"mask":[],"weights":{},"biases":[[0]]}"#;
        assert!(from_json(version).is_err());
    }
}
