//! Weighted parameter averaging of named tensor bundles. Endpoints are
//! bit-exact; interior weights accumulate in f64 and cast to f32 once.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

/// A shaped f32 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor, MergeError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(MergeError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }
}

/// Named collection of tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("lambda must be in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("tensor data length {got} does not match shape product {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("tensor name sets differ; only in first: {only_in_a:?}, only in second: {only_in_b:?}")]
    NameSetMismatch {
        only_in_a: Vec<String>,
        only_in_b: Vec<String>,
    },
    #[error("shape mismatch for tensor {name:?}: {a:?} vs {b:?}")]
    ShapeMismatch {
        name: String,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("non-finite value in tensor {name:?} at element {index}")]
    NonFinite { name: String, index: usize },
}

impl TensorBundle {
    pub fn new() -> Self {
        TensorBundle::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), MergeError> {
        if self.tensors.contains_key(name) {
            return Err(MergeError::DuplicateTensor(name.to_string()));
        }
        self.tensors.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Rejects NaN or infinite elements, naming the first offender.
    pub fn validate_finite(&self) -> Result<(), MergeError> {
        for (name, tensor) in &self.tensors {
            if let Some(index) = tensor.data.iter().position(|v| !v.is_finite()) {
                return Err(MergeError::NonFinite {
                    name: name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }
}

fn check_schemas(a: &TensorBundle, b: &TensorBundle) -> Result<(), MergeError> {
    let only_in_a: Vec<String> = a
        .tensors
        .keys()
        .filter(|k| !b.tensors.contains_key(*k))
        .cloned()
        .collect();
    let only_in_b: Vec<String> = b
        .tensors
        .keys()
        .filter(|k| !a.tensors.contains_key(*k))
        .cloned()
        .collect();
    if !only_in_a.is_empty() || !only_in_b.is_empty() {
        return Err(MergeError::NameSetMismatch {
            only_in_a,
            only_in_b,
        });
    }
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        if ta.shape != tb.shape {
            return Err(MergeError::ShapeMismatch {
                name: name.clone(),
                a: ta.shape.clone(),
                b: tb.shape.clone(),
            });
        }
    }
    Ok(())
}

/// Elementwise lambda*a + (1-lambda)*b. The endpoints return the input
/// bundle unchanged so lambda = 1 and lambda = 0 are bitwise-exact;
/// interior weights accumulate in f64 before the single f32 cast.
pub fn weighted_merge(
    a: &TensorBundle,
    b: &TensorBundle,
    lambda: f64,
) -> Result<TensorBundle, MergeError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MergeError::LambdaOutOfRange(lambda));
    }
    check_schemas(a, b)?;
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    let complement = 1.0 - lambda;
    let mut out = TensorBundle::new();
    for (name, ta) in &a.tensors {
        let tb = &b.tensors[name];
        let data: Vec<f32> = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| (lambda * x as f64 + complement * y as f64) as f32)
            .collect();
        out.tensors.insert(
            name.clone(),
            Tensor {
                shape: ta.shape.clone(),
                data,
            },
        );
    }
    Ok(out)
}

/// Simple parameter average: weighted_merge at lambda = 0.5.
pub fn doge_merge(sft: &TensorBundle, rm: &TensorBundle) -> Result<TensorBundle, MergeError> {
    weighted_merge(sft, rm, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bundle(pairs: &[(&str, &[f32])]) -> TensorBundle {
        let mut b = TensorBundle::new();
        for (name, data) in pairs {
            b.insert(name, Tensor::new(vec![data.len()], data.to_vec()).unwrap())
                .unwrap();
        }
        b
    }

    #[test]
    fn endpoints_are_bitwise_exact() {
        let a = bundle(&[("w", &[0.1, -2.5, 3.25])]);
        let b = bundle(&[("w", &[9.0, 8.0, 7.0])]);
        assert_eq!(weighted_merge(&a, &b, 1.0).unwrap(), a);
        assert_eq!(weighted_merge(&a, &b, 0.0).unwrap(), b);
    }

    #[test]
    fn lambda_point_seven_on_unit_vectors() {
        let a = bundle(&[("w", &[1.0, 0.0])]);
        let b = bundle(&[("w", &[0.0, 1.0])]);
        let merged = weighted_merge(&a, &b, 0.7).unwrap();
        assert_eq!(merged.get("w").unwrap().data, vec![0.7f32, 0.3f32]);
    }

    #[test]
    fn midpoints() {
        let a = bundle(&[("w", &[2.0])]);
        let b = bundle(&[("w", &[4.0])]);
        assert_eq!(
            weighted_merge(&a, &b, 0.5).unwrap().get("w").unwrap().data,
            vec![3.0f32]
        );
        let x = bundle(&[("w", &[0.0])]);
        let y = bundle(&[("w", &[10.0])]);
        assert_eq!(doge_merge(&x, &y).unwrap().get("w").unwrap().data, vec![5.0f32]);
    }

    #[test]
    fn doge_merge_properties() {
        let a = bundle(&[("w", &[1.0, 2.0]), ("b", &[-1.0, 0.5])]);
        let b = bundle(&[("w", &[3.0, 0.0]), ("b", &[1.0, 0.5])]);
        let ab = doge_merge(&a, &b).unwrap();
        let ba = doge_merge(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(doge_merge(&a, &a).unwrap(), a);
        assert_eq!(ab, weighted_merge(&a, &b, 0.5).unwrap());
    }

    #[test]
    fn name_set_mismatch_lists_difference() {
        let a = bundle(&[("w", &[1.0]), ("extra_a", &[1.0])]);
        let b = bundle(&[("w", &[1.0]), ("extra_b", &[1.0])]);
        match weighted_merge(&a, &b, 0.5).unwrap_err() {
            MergeError::NameSetMismatch {
                only_in_a,
                only_in_b,
            } => {
                assert_eq!(only_in_a, vec!["extra_a".to_string()]);
                assert_eq!(only_in_b, vec!["extra_b".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut a = TensorBundle::new();
        a.insert("w", Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap())
            .unwrap();
        let mut b = TensorBundle::new();
        b.insert("w", Tensor::new(vec![4], vec![0.0; 4]).unwrap())
            .unwrap();
        match weighted_merge(&a, &b, 0.5).unwrap_err() {
            MergeError::ShapeMismatch { name, .. } => assert_eq!(name, "w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lambda_out_of_range_rejected() {
        let a = bundle(&[("w", &[1.0])]);
        assert!(matches!(
            weighted_merge(&a, &a, 1.5),
            Err(MergeError::LambdaOutOfRange(_))
        ));
        assert!(matches!(
            weighted_merge(&a, &a, -0.1),
            Err(MergeError::LambdaOutOfRange(_))
        ));
    }

    #[test]
    fn finite_validation_names_offender() {
        let mut b = TensorBundle::new();
        b.insert("ok", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        b.insert("bad", Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap())
            .unwrap();
        match b.validate_finite().unwrap_err() {
            MergeError::NonFinite { name, index } => {
                assert_eq!(name, "bad");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_length_errors() {
        let mut b = TensorBundle::new();
        b.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap();
        assert!(matches!(
            b.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap()),
            Err(MergeError::DuplicateTensor(_))
        ));
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(MergeError::LengthMismatch { .. })
        ));
    }
}
