use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Which part of the model a parameter belongs to; drives optimizer grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Video encoder weights other than shifts.
    Backbone,
    /// Learnable shift offsets of the video encoder.
    Shift,
    SeqEncoder,
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Location of one parameter tensor inside the flat parameter buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamHandle {
    offset: usize,
    len: usize,
}

impl ParamHandle {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// All trainable values of a model in one contiguous buffer plus a named layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    values: Vec<T>,
    specs: Vec<ParamSpec>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            values: Vec::new(),
            specs: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn from_parts(specs: Vec<ParamSpec>, values: Vec<T>) -> Option<Self> {
        let mut expected = 0;
        for s in &specs {
            if s.offset != expected {
                return None;
            }
            expected += s.len();
        }
        (expected == values.len()).then_some(ParamSet { values, specs })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, h: ParamHandle) -> &[T] {
        &self.values[h.range()]
    }

    pub fn get_mut(&mut self, h: ParamHandle) -> &mut [T] {
        &mut self.values[h.range()]
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads(vec![T::zero(); self.values.len()])
    }
}

/// Gradient buffer laid out like a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<T>);

impl<T: Scalar> Grads<T> {
    pub fn get(&self, h: ParamHandle) -> &[T] {
        &self.0[h.range()]
    }

    pub fn get_mut(&mut self, h: ParamHandle) -> &mut [T] {
        &mut self.0[h.range()]
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.0 {
            *a *= k;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `(-bound, bound)`.
    Uniform(f64),
}

/// Registers parameters in a fixed order, drawing initial values from one RNG.
pub struct ParamBuilder<'a, T> {
    set: &'a mut ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
    role: ParamRole,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(set: &'a mut ParamSet<T>, rng: &'a mut ChaCha8Rng, role: ParamRole) -> Self {
        ParamBuilder { set, rng, role }
    }

    pub fn set_role(&mut self, role: ParamRole) {
        self.role = role;
    }

    pub fn role(&self) -> ParamRole {
        self.role
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamHandle {
        self.add_with_role(name, shape, init, self.role)
    }

    pub fn add_with_role(&mut self, name: impl Into<String>, shape: &[usize], init: Init, role: ParamRole) -> ParamHandle {
        let offset = self.set.values.len();
        let len: usize = shape.iter().product();
        match init {
            Init::Zeros => self.set.values.extend(std::iter::repeat_n(T::zero(), len)),
            Init::Ones => self.set.values.extend(std::iter::repeat_n(T::one(), len)),
            Init::Uniform(bound) => {
                for _ in 0..len {
                    let v = if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 };
                    self.set.values.push(T::of(v));
                }
            }
        }
        self.set.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            role,
        });
        ParamHandle { offset, len }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_is_contiguous() {
        let mut set = ParamSet::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut set, &mut rng, ParamRole::Fusion);
        let w = b.add("w", &[3, 4], Init::Uniform(0.5));
        let bias = b.add("b", &[3], Init::Zeros);
        assert_eq!(w.range(), 0..12);
        assert_eq!(bias.range(), 12..15);
        assert_eq!(set.len(), 15);
        assert!(set.get(w).iter().all(|v| v.abs() < 0.5));
        assert!(set.get(bias).iter().all(|&v| v == 0.0));
        let rebuilt = ParamSet::from_parts(set.specs().to_vec(), set.values().to_vec()).unwrap();
        assert_eq!(rebuilt, set);
        assert!(ParamSet::<f64>::from_parts(set.specs().to_vec(), vec![0.0; 3]).is_none());
    }
}
