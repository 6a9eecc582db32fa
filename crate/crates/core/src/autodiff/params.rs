use ndarray::Array2;
use rand::Rng;

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable matrices.
///
/// Rows can be frozen individually (pretrained word vectors); the optimizer
/// never moves a frozen row.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
    frozen_rows: Vec<Option<Vec<bool>>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            frozen_rows: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        self.frozen_rows.push(None);
        ParamId(self.values.len() - 1)
    }

    /// Adds a matrix initialized uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn(shape, || {
            F::of(rng.random_range(-bound..=bound))
        });
        self.add(name, value)
    }

    /// Glorot-uniform initialization for an `fan_in x fan_out` weight.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, (fan_in, fan_out), bound, rng)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: (usize, usize)) -> ParamId {
        self.add(name, Array2::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn set_frozen_rows(&mut self, id: ParamId, frozen: Vec<bool>) {
        assert_eq!(frozen.len(), self.values[id.0].nrows());
        self.frozen_rows[id.0] = Some(frozen);
    }

    pub fn frozen_rows(&self, id: ParamId) -> Option<&[bool]> {
        self.frozen_rows[id.0].as_deref()
    }

    /// Same parameters at another precision.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| G::of(x.as_f64())))
                .collect(),
            frozen_rows: self.frozen_rows.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cast_roundtrip_is_exact_for_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let id = store.add_xavier("w", 4, 5, &mut rng);
        let back: ParamStore<f32> = store.cast::<f64>().cast();
        assert_eq!(back.get(id), store.get(id));
        assert_eq!(store.find("w"), Some(id));
        assert_eq!(store.scalar_count(), 20);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add_zeros("a", (1, 1));
        store.add_zeros("a", (1, 1));
    }
}
