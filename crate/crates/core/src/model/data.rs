use crate::dirichlet::Composition;

use super::ModelError;

/// Observations for a multi-dataset Dirichlet regression.
///
/// Covariate matrices are stored row-major. Group labels are zero-based
/// indices `0..groups`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoDaTable {
    y: Vec<Composition<f64>>,
    log_y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    group: Vec<usize>,
    components: usize,
    mean_covariates: usize,
    precision_covariates: usize,
    groups: usize,
}

impl CoDaTable {
    /// Builds a table, checking that every row has matching dimensions,
    /// covariate rows start with the constant 1, and each of the `groups`
    /// labels is used at least once.
    pub fn new(
        y: Vec<Composition<f64>>,
        x: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        group: Vec<usize>,
        groups: usize,
    ) -> Result<Self, ModelError> {
        let n = y.len();
        if n == 0 {
            return Err(ModelError::InvalidData("table has no observations".into()));
        }
        let components = y[0].dim();
        let mean_covariates = x.first().map_or(0, Vec::len);
        let precision_covariates = z.first().map_or(0, Vec::len);
        let mut table = Self::empty(components, mean_covariates, precision_covariates, groups)?;
        for (what, len) in [("mean covariate rows", x.len()), ("precision covariate rows", z.len()), ("group labels", group.len())] {
            if len != n {
                return Err(ModelError::Dimension { what, expected: n, got: len });
            }
        }
        let mut seen = vec![false; groups];
        for (i, (((yi, xi), zi), gi)) in y.into_iter().zip(x).zip(z).zip(group).enumerate() {
            if gi >= groups {
                return Err(ModelError::Group { observation: i, label: gi, groups });
            }
            seen[gi] = true;
            table.push(i, yi, &xi, &zi, gi)?;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(ModelError::InvalidData(format!("group {missing} has no observations")));
        }
        Ok(table)
    }

    /// A table with no rows; useful for prior-only evaluation.
    pub fn empty(
        components: usize,
        mean_covariates: usize,
        precision_covariates: usize,
        groups: usize,
    ) -> Result<Self, ModelError> {
        if components < 2 || mean_covariates == 0 || precision_covariates == 0 || groups == 0 {
            return Err(ModelError::InvalidData(format!(
                "invalid table shape C={components}, P={mean_covariates}, Q={precision_covariates}, L={groups}"
            )));
        }
        Ok(Self {
            y: Vec::new(),
            log_y: Vec::new(),
            x: Vec::new(),
            z: Vec::new(),
            group: Vec::new(),
            components,
            mean_covariates,
            precision_covariates,
            groups,
        })
    }

    fn push(&mut self, index: usize, y: Composition<f64>, x: &[f64], z: &[f64], group: usize) -> Result<(), ModelError> {
        if y.dim() != self.components {
            return Err(ModelError::Dimension { what: "composition parts", expected: self.components, got: y.dim() });
        }
        if x.len() != self.mean_covariates {
            return Err(ModelError::Dimension { what: "mean covariates", expected: self.mean_covariates, got: x.len() });
        }
        if z.len() != self.precision_covariates {
            return Err(ModelError::Dimension {
                what: "precision covariates",
                expected: self.precision_covariates,
                got: z.len(),
            });
        }
        if x[0] != 1.0 || z[0] != 1.0 {
            return Err(ModelError::InvalidData(format!(
                "observation {index}: first covariate column must be the constant 1"
            )));
        }
        if x.iter().chain(z).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidData(format!("observation {index}: non-finite covariate")));
        }
        self.log_y.extend(y.parts().iter().map(|p| p.ln()));
        self.x.extend_from_slice(x);
        self.z.extend_from_slice(z);
        self.group.push(group);
        self.y.push(y);
        Ok(())
    }

    /// Concatenation of two tables with identical shapes.
    pub fn concat(&self, other: &CoDaTable) -> Result<Self, ModelError> {
        if (self.components, self.mean_covariates, self.precision_covariates, self.groups)
            != (other.components, other.mean_covariates, other.precision_covariates, other.groups)
        {
            return Err(ModelError::InvalidData("cannot concatenate tables of different shape".into()));
        }
        let mut out = self.clone();
        out.y.extend(other.y.iter().cloned());
        out.log_y.extend_from_slice(&other.log_y);
        out.x.extend_from_slice(&other.x);
        out.z.extend_from_slice(&other.z);
        out.group.extend_from_slice(&other.group);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mean_covariates(&self) -> usize {
        self.mean_covariates
    }

    pub fn precision_covariates(&self) -> usize {
        self.precision_covariates
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn y(&self, i: usize) -> &Composition<f64> {
        &self.y[i]
    }

    pub fn compositions(&self) -> &[Composition<f64>] {
        &self.y
    }

    pub fn log_y(&self, i: usize) -> &[f64] {
        &self.log_y[i * self.components..(i + 1) * self.components]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.mean_covariates..(i + 1) * self.mean_covariates]
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.precision_covariates..(i + 1) * self.precision_covariates]
    }

    pub fn group(&self, i: usize) -> usize {
        self.group[i]
    }

    pub fn group_labels(&self) -> &[usize] {
        &self.group
    }

    pub fn x_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.x(i).to_vec()).collect()
    }

    pub fn z_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.z(i).to_vec()).collect()
    }
}
