use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gnn::weights::Fnn;
use crate::scalar::Real;

/// Runs the dense layers of `bundle` on `input`.
pub fn fnn_forward<T: Real>(bundle: &Fnn<T>, input: &[T]) -> Result<Vec<T>> {
    if input.len() != bundle.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects {} inputs, got {}",
            bundle.input_dim(),
            input.len()
        )));
    }
    let mut x = DVector::from_column_slice(input);
    for layer in &bundle.layers {
        if layer.w.ncols() != x.len() || layer.b.len() != layer.w.nrows() {
            return Err(Error::Dimension("inconsistent dense layer".into()));
        }
        x = (&layer.w * x + &layer.b).map(|z| layer.act.apply(z));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::weights::{Activation, Dense};
    use nalgebra::DMatrix;

    #[test]
    fn zero_sigmoid_network_is_constant() {
        let f = Fnn {
            layers: vec![Dense { w: DMatrix::<f64>::zeros(3, 5), b: DVector::zeros(3), act: Activation::Sigmoid }],
        };
        let out = fnn_forward(&f, &[1.0, -2.0, 3.0, 1e9, -7.0]).unwrap();
        assert_eq!(out, vec![0.5; 3]);
    }

    #[test]
    fn identity_network_echoes() {
        let f = Fnn {
            layers: vec![Dense { w: DMatrix::<f64>::identity(4, 4), b: DVector::zeros(4), act: Activation::Identity }],
        };
        let x = [0.25, -1.5, 3.0, 1e-7];
        assert_eq!(fnn_forward(&f, &x).unwrap(), x.to_vec());
        assert!(fnn_forward(&f, &x[..3]).is_err());
    }

    #[test]
    fn golden_vector() {
        let doc: serde_json::Value =
            serde_json::from_str(include_str!("../../assets/fnn_vector.json")).unwrap();
        let num = |v: &serde_json::Value| v.as_f64().unwrap();
        let mut layers = Vec::new();
        for l in doc["layers"].as_array().unwrap() {
            let rows: Vec<Vec<f64>> = l["w"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r.as_array().unwrap().iter().map(num).collect())
                .collect();
            let b: Vec<f64> = l["b"].as_array().unwrap().iter().map(num).collect();
            layers.push((rows, b, Activation::from_tag(l["activation"].as_str().unwrap()).unwrap()));
        }
        let input: Vec<f64> = doc["input"].as_array().unwrap().iter().map(num).collect();
        let expected: Vec<f64> = doc["output"].as_array().unwrap().iter().map(num).collect();

        // plain loops
        let mut h = input.clone();
        for (rows, b, act) in &layers {
            h = rows
                .iter()
                .zip(b)
                .map(|(r, bi)| act.apply(r.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + bi))
                .collect();
        }
        let f = Fnn {
            layers: layers
                .iter()
                .map(|(rows, b, act)| Dense {
                    w: DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]),
                    b: DVector::from_column_slice(b),
                    act: *act,
                })
                .collect(),
        };
        let out = fnn_forward(&f, &input).unwrap();
        for ((a, b), c) in out.iter().zip(&h).zip(&expected) {
            assert!((a - b).abs() < 1e-14);
            assert!((a - c).abs() < 1e-12);
        }
    }
}
