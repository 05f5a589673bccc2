use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Auxiliary input attached to one observation column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AuxInput {
    Scalar(f64),
    Point(Vec<f64>),
}

impl AuxInput {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            AuxInput::Scalar(t) => Some(*t),
            AuxInput::Point(_) => None,
        }
    }
}

/// K × R observation matrix, one column per observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: DMatrix<f64>,
    aux: Option<Vec<AuxInput>>,
    labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        if observations.nrows() == 0 || observations.ncols() == 0 {
            return Err(Error::invalid("dataset needs K >= 1 and R >= 1"));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(Dataset {
            observations,
            aux: None,
            labels: None,
        })
    }

    pub fn with_aux(mut self, aux: Vec<AuxInput>) -> Result<Self> {
        Error::check_dim(self.r(), aux.len())?;
        self.aux = Some(aux);
        Ok(self)
    }

    /// Shorthand for scalar aux inputs (time instants).
    pub fn with_times(self, times: &[f64]) -> Result<Self> {
        self.with_aux(times.iter().copied().map(AuxInput::Scalar).collect())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        Error::check_dim(self.k(), labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.observations.nrows()
    }

    pub fn r(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn column(&self, r: usize) -> &[f64] {
        let k = self.k();
        &self.observations.as_slice()[r * k..(r + 1) * k]
    }

    pub fn aux(&self, r: usize) -> Option<&AuxInput> {
        self.aux.as_ref().map(|a| &a[r])
    }

    pub fn aux_inputs(&self) -> Option<&[AuxInput]> {
        self.aux.as_deref()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Dataset restricted to the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::invalid("empty column selection"));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.r()) {
            return Err(Error::invalid(format!("column {bad} out of range")));
        }
        let obs = self.observations.select_columns(cols);
        Ok(Dataset {
            observations: obs,
            aux: self
                .aux
                .as_ref()
                .map(|a| cols.iter().map(|&c| a[c].clone()).collect()),
            labels: self.labels.clone(),
        })
    }
}
