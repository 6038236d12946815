use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::numerics::{row_norms, Matrix};

/// Embeddings `Z` (n × d), their labels, and optionally one prototype per label (L × d).
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    embeddings: Matrix,
    labels: LabelMatrix,
    prototypes: Option<Matrix>,
}

impl ContrastiveBatch {
    /// Validates shapes, rejects zero-norm rows and instances without labels.
    pub fn new(embeddings: Matrix, labels: LabelMatrix, prototypes: Option<Matrix>) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::Shape {
                expected: (labels.len(), embeddings.ncols()),
                actual: embeddings.dim(),
            });
        }
        labels.require_nonempty_rows()?;
        row_norms(embeddings.view())?;
        if let Some(c) = &prototypes {
            if c.dim() != (labels.num_labels(), embeddings.ncols()) {
                return Err(Error::Shape {
                    expected: (labels.num_labels(), embeddings.ncols()),
                    actual: c.dim(),
                });
            }
            row_norms(c.view()).map_err(|e| Error::domain(format!("prototype {e}")))?;
        }
        Ok(Self {
            embeddings,
            labels,
            prototypes,
        })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn prototypes(&self) -> Option<&Matrix> {
        self.prototypes.as_ref()
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.num_labels()
    }

    /// Same labels and prototypes with different embeddings (used by the
    /// finite-difference oracle). Skips validation of the new matrix beyond its shape.
    pub fn with_embeddings(&self, embeddings: Matrix) -> Self {
        assert_eq!(embeddings.dim(), self.embeddings.dim());
        Self {
            embeddings,
            labels: self.labels.clone(),
            prototypes: self.prototypes.clone(),
        }
    }

    /// Same embeddings and labels with different prototypes.
    pub fn with_prototypes(&self, prototypes: Matrix) -> Self {
        assert_eq!(prototypes.dim(), (self.num_labels(), self.dim()));
        Self {
            embeddings: self.embeddings.clone(),
            labels: self.labels.clone(),
            prototypes: Some(prototypes),
        }
    }
}
