use rand::Rng;

use crate::numcore::{Matrix, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn register(&mut self, name: String, value: Matrix<T>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Matrix<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Matrix::cast).collect(),
        }
    }

    /// All parameters concatenated in registration order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.numel());
        for v in &self.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.numel(), "flat parameter length");
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// `(name, start offset, length)` of each tensor in the flattened view.
    pub fn flat_spans(&self) -> Vec<(String, usize, usize)> {
        let mut offset = 0;
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                let span = (n.clone(), offset, v.len());
                offset += v.len();
                span
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Zero-filled tensors with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Matrix<T>> {
        self.values.iter().map(|v| Matrix::zeros(v.rows(), v.cols())).collect()
    }
}

/// Uniform fan-in initialization: entries drawn from `±1/√fan_in`.
pub(crate) fn fan_in_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Lazily places parameters on a tape the first time a layer uses them.
pub struct Binder<'a, T: Real> {
    params: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Real> Binder<'a, T> {
    /// `trainable` parameters become gradient-carrying leaves; otherwise
    /// they are recorded as constants.
    pub fn new(params: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            params,
            vars: vec![None; params.len()],
            trainable,
        }
    }

    pub fn var(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = if self.trainable { tape.leaf(value) } else { tape.constant(value) };
        self.vars[id.0] = Some(v);
        v
    }

    /// The tape variable a parameter was bound to, if any layer used it.
    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }
}
