use std::collections::HashMap;

use crate::autodiff::{norm, normalized, Tensor};
use crate::error::{Error, Result};

/// Per-domain table of running features, one unit-norm row per training
/// instance (real or synthetic).
#[derive(Clone, Debug)]
pub struct MemoryBank {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    features: Tensor,
    momentum: f64,
    temperature: f64,
}

impl MemoryBank {
    pub fn new(ids: Vec<u64>, features: Tensor, momentum: f64, temperature: f64) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Contract("memory bank must not be empty".into()));
        }
        if ids.len() != features.rows() {
            return Err(Error::Alignment(format!(
                "{} ids for {} bank rows",
                ids.len(),
                features.rows()
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("bank momentum {momentum} outside [0, 1)")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("bank temperature {temperature} must be > 0")));
        }
        check_unit_rows("memory bank", &features, 1e-6)?;
        let mut index = HashMap::with_capacity(ids.len());
        for (pos, &id) in ids.iter().enumerate() {
            if index.insert(id, pos).is_some() {
                return Err(Error::Contract(format!("duplicate bank id {id}")));
            }
        }
        Ok(MemoryBank {
            ids,
            index,
            features,
            momentum,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn position(&self, id: u64) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("instance {id} is not in the memory bank")))
    }

    pub fn positions(&self, ids: &[u64]) -> Result<Vec<usize>> {
        ids.iter().map(|&id| self.position(id)).collect()
    }

    pub fn row(&self, id: u64) -> Result<&[f64]> {
        Ok(self.features.row(self.position(id)?))
    }

    /// `row ← normalize(m·row + (1−m)·feature)` for each id.
    pub fn update(&mut self, ids: &[u64], new_features: &Tensor) -> Result<()> {
        if ids.len() != new_features.rows() {
            return Err(Error::Alignment(format!(
                "{} ids for {} feature rows",
                ids.len(),
                new_features.rows()
            )));
        }
        if new_features.cols() != self.features.cols() {
            return Err(Error::Dimension {
                op: "bank_update",
                left: self.features.shape(),
                right: new_features.shape(),
            });
        }
        check_unit_rows("bank update", new_features, 1e-6)?;
        let positions = self.positions(ids)?;
        let m = self.momentum;
        for (pos, feat) in positions.into_iter().zip(new_features.iter_rows()) {
            let row = self.features.row_mut(pos);
            let blended: Vec<f64> = row.iter().zip(feat).map(|(r, f)| m * r + (1.0 - m) * f).collect();
            let unit = normalized(&blended).ok_or_else(|| {
                Error::Numeric(format!("bank row {pos} cancelled to zero during update"))
            })?;
            row.copy_from_slice(&unit);
        }
        Ok(())
    }
}

pub(crate) fn check_unit_rows(what: &str, t: &Tensor, tol: f64) -> Result<()> {
    for (r, row) in t.iter_rows().enumerate() {
        let n = norm(row);
        if n.is_nan() || (n - 1.0).abs() > tol {
            return Err(Error::Contract(format!("{what}: row {r} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: &[&[f64]]) -> Tensor {
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| normalized(r).unwrap()).collect();
        Tensor::from_rows(&normed).unwrap()
    }

    #[test]
    fn zero_momentum_replaces_rows() {
        let mut bank = MemoryBank::new(vec![10, 11], unit_rows(&[&[1., 0.], &[0., 1.]]), 0.0, 0.05).unwrap();
        bank.update(&[11], &unit_rows(&[&[1., 1.]])).unwrap();
        let h = 0.5f64.sqrt();
        assert!((bank.row(11).unwrap()[0] - h).abs() < 1e-15);
        assert_eq!(bank.row(10).unwrap(), &[1., 0.]);
    }

    #[test]
    fn identical_feature_is_a_fixed_point() {
        let init = unit_rows(&[&[0.3, 0.4, 0.5]]);
        let mut bank = MemoryBank::new(vec![1], init.clone(), 0.5, 0.05).unwrap();
        bank.update(&[1], &init).unwrap();
        for (a, b) in bank.features().data().iter().zip(init.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn updated_rows_stay_unit_norm() {
        let mut bank = MemoryBank::new(
            vec![0, 1, 2],
            unit_rows(&[&[1., 2., 3.], &[-1., 0., 1.], &[0., 0., 1.]]),
            0.5,
            0.05,
        )
        .unwrap();
        bank.update(&[2, 0], &unit_rows(&[&[5., -1., 0.2], &[0., 1., 0.]])).unwrap();
        for row in bank.features().iter_rows() {
            assert!((norm(row) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let t = unit_rows(&[&[1., 0.]]);
        assert!(matches!(MemoryBank::new(vec![], t.clone(), 0.5, 0.05), Err(Error::Contract(_))));
        assert!(matches!(MemoryBank::new(vec![1], t.clone(), 1.0, 0.05), Err(Error::Config(_))));
        let mut bank = MemoryBank::new(vec![1], t.clone(), 0.5, 0.05).unwrap();
        assert!(matches!(bank.update(&[2], &t), Err(Error::Lookup(_))));
        assert!(matches!(bank.position(9), Err(Error::Lookup(_))));
    }
}
